//! Frontend for SyGuS inv-track problem files, candidate invariants, and the
//! small `.loop` statement language.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formulas::{FormulaError, LoopSpec, Sort, Stmt, Term};
use crate::sexpr::{self, Pos, ReadError, Reader, SExpr};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SygusError {
    #[error("parse error at {pos}: expected {expected}")]
    Parse { pos: Pos, expected: String },
    #[error("sort error: {0}")]
    Sort(FormulaError),
    #[error("missing component: {0}")]
    MissingComponent(&'static str),
    #[error("arity mismatch: expected {expected} parameters, found {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

impl From<ReadError> for SygusError {
    fn from(e: ReadError) -> Self {
        SygusError::Parse {
            pos: e.pos,
            expected: e.expected,
        }
    }
}

impl From<FormulaError> for SygusError {
    fn from(e: FormulaError) -> Self {
        match e {
            FormulaError::UnknownVariable(v) => SygusError::UnknownVariable(v),
            other => SygusError::Sort(other),
        }
    }
}

fn parse_err<T>(pos: Pos, expected: impl Into<String>) -> Result<T, SygusError> {
    Err(SygusError::Parse {
        pos,
        expected: expected.into(),
    })
}

type Result<T, E = SygusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Logic {
    #[serde(rename = "LIA")]
    Lia,
    #[serde(rename = "NIA")]
    Nia,
    #[serde(rename = "ALIA")]
    Alia,
}

impl fmt::Display for Logic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Logic::Lia => "LIA",
            Logic::Nia => "NIA",
            Logic::Alia => "ALIA",
        })
    }
}

/// A loop-invariant synthesis instance in transition-relation form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    pub id: String,
    pub logic: Logic,
    pub vars: Vec<(String, Sort)>,
    pub primed_vars: Vec<(String, Sort)>,
    pub pre: Term,
    pub trans: Term,
    pub post: Term,
    pub raw_text: String,
}

impl Problem {
    /// Map from each variable to its primed partner.
    pub fn priming(&self) -> BTreeMap<String, String> {
        self.vars
            .iter()
            .zip(&self.primed_vars)
            .map(|((v, _), (p, _))| (v.clone(), p.clone()))
            .collect()
    }

    /// Equality of everything except `raw_text`.
    pub fn same_components(&self, other: &Problem) -> bool {
        self.id == other.id
            && self.logic == other.logic
            && self.vars == other.vars
            && self.primed_vars == other.primed_vars
            && self.pre == other.pre
            && self.trans == other.trans
            && self.post == other.post
    }
}

pub fn primed_name(var: &str) -> String {
    format!("{var}!")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    LlmGpt35,
    LlmGpt4,
    Loopinvgen,
    Other,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::LlmGpt35 => "llm_gpt35",
            Source::LlmGpt4 => "llm_gpt4",
            Source::Loopinvgen => "loopinvgen",
            Source::Other => "other",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "llm_gpt35" => Ok(Source::LlmGpt35),
            "llm_gpt4" => Ok(Source::LlmGpt4),
            "loopinvgen" => Ok(Source::Loopinvgen),
            "other" => Ok(Source::Other),
            _ => Err(format!("unknown candidate source `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvariantCandidate {
    pub id: String,
    pub problem_id: String,
    pub body: Term,
    pub source: Source,
    pub generation_index: usize,
    pub raw_text: String,
}

impl InvariantCandidate {
    pub fn make_id(problem_id: &str, source: Source, generation_index: usize) -> String {
        format!("{problem_id}/{source}-{generation_index}")
    }
}

// --- term parsing ---------------------------------------------------------

/// A user `define-fun` usable as a macro inside later definitions.
#[derive(Debug, Clone)]
struct Macro {
    params: Vec<(String, Sort)>,
    ret: Sort,
    body: Term,
}

#[derive(Debug, Default)]
struct TermParser {
    macros: HashMap<String, Macro>,
}

type Scope = HashMap<String, Term>;

fn normalize_prime(name: &str) -> String {
    match name.strip_suffix('\'') {
        Some(base) => primed_name(base),
        None => name.to_string(),
    }
}

fn parse_sort(e: &SExpr) -> Result<Sort> {
    match e {
        SExpr::Atom(a, _) if a == "Int" => Ok(Sort::Int),
        SExpr::Atom(a, _) if a == "Bool" => Ok(Sort::Bool),
        SExpr::List(items, _) if items.len() == 3 && items[0].as_atom() == Some("Array") => {
            match (items[1].as_atom(), items[2].as_atom()) {
                (Some("Int"), Some("Int")) => Ok(Sort::ArrayIntInt),
                (Some("Int"), Some("Bool")) => Ok(Sort::ArrayIntBool),
                _ => parse_err(
                    e.pos(),
                    "array sort `(Array Int Int)` or `(Array Int Bool)`",
                ),
            }
        }
        _ => parse_err(e.pos(), "sort"),
    }
}

/// Parses `((name Sort) ...)`.
fn parse_params(e: &SExpr) -> Result<Vec<(String, Sort)>> {
    let Some(items) = e.as_list() else {
        return parse_err(e.pos(), "parameter list");
    };
    items
        .iter()
        .map(|p| match p.as_list() {
            Some([SExpr::Atom(name, _), sort]) => Ok((normalize_prime(name), parse_sort(sort)?)),
            _ => parse_err(p.pos(), "`(name Sort)`"),
        })
        .collect()
}

fn parse_numeral(a: &str) -> Option<i128> {
    if !a.is_empty() && a.bytes().all(|b| b.is_ascii_digit()) {
        a.parse::<i128>().ok()
    } else {
        None
    }
}

fn int_const(n: i128, pos: Pos) -> Result<Term> {
    match i64::try_from(n) {
        Ok(v) => Ok(Term::IntConst(v)),
        Err(_) => parse_err(pos, "integer literal within 64 bits"),
    }
}

fn fold_left(mut args: Vec<Term>, f: fn(Term, Term) -> Term) -> Term {
    let first = args.remove(0);
    args.into_iter().fold(first, f)
}

/// `(op a b c)` as `(and (op a b) (op b c))`.
fn chain(args: Vec<Term>, f: fn(Term, Term) -> Term) -> Term {
    if args.len() == 2 {
        let mut it = args.into_iter();
        return f(it.next().unwrap(), it.next().unwrap());
    }
    Term::and(
        args.windows(2)
            .map(|w| f(w[0].clone(), w[1].clone()))
            .collect(),
    )
}

impl TermParser {
    fn term(&self, e: &SExpr, scope: &Scope) -> Result<Term> {
        match e {
            SExpr::Atom(a, pos) => {
                if a == "true" {
                    return Ok(Term::bool(true));
                }
                if a == "false" {
                    return Ok(Term::bool(false));
                }
                if let Some(n) = parse_numeral(a) {
                    return int_const(n, *pos);
                }
                let name = normalize_prime(a);
                if let Some(t) = scope.get(&name) {
                    return Ok(t.clone());
                }
                if let Some(m) = self.macros.get(&name) {
                    if m.params.is_empty() {
                        return Ok(m.body.clone());
                    }
                }
                Err(SygusError::UnknownVariable(name))
            }
            SExpr::List(items, pos) => {
                let Some((head, rest)) = items.split_first() else {
                    return parse_err(*pos, "operator application");
                };
                let Some(op) = head.as_atom() else {
                    return parse_err(head.pos(), "operator symbol");
                };
                if op == "let" {
                    return self.let_term(rest, scope, *pos);
                }
                if let ("-", [SExpr::Atom(lit, _)]) = (op, rest) {
                    if let Some(n) = parse_numeral(lit) {
                        return int_const(-n, *pos);
                    }
                }
                let args = rest
                    .iter()
                    .map(|a| self.term(a, scope))
                    .collect::<Result<Vec<_>>>()?;
                let t = self.apply(op, args, *pos)?;
                t.sort()?;
                Ok(t)
            }
        }
    }

    fn let_term(&self, rest: &[SExpr], scope: &Scope, pos: Pos) -> Result<Term> {
        let [bindings, body] = rest else {
            return parse_err(pos, "`(let ((name term) ...) body)`");
        };
        let Some(bindings) = bindings.as_list() else {
            return parse_err(bindings.pos(), "binding list");
        };
        // bindings are parallel: evaluated in the outer scope
        let mut inner = scope.clone();
        for b in bindings {
            match b.as_list() {
                Some([SExpr::Atom(name, _), value]) => {
                    let v = self.term(value, scope)?;
                    inner.insert(name.clone(), v);
                }
                _ => return parse_err(b.pos(), "`(name term)`"),
            }
        }
        self.term(body, &inner)
    }

    fn apply(&self, op: &str, mut args: Vec<Term>, pos: Pos) -> Result<Term> {
        let n = args.len();
        let arity = |ok: bool, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                parse_err(pos, format!("{what} for `{op}`"))
            }
        };
        match op {
            "+" => {
                arity(n >= 1, "at least one argument")?;
                Ok(fold_left(args, Term::add))
            }
            "-" => {
                arity(n >= 1, "at least one argument")?;
                if n == 1 {
                    return Ok(Term::sub(Term::int(0), args.pop().unwrap()));
                }
                Ok(fold_left(args, Term::sub))
            }
            "*" => {
                arity(n >= 1, "at least one argument")?;
                Ok(fold_left(args, Term::mul))
            }
            "div" => {
                arity(n >= 2, "at least two arguments")?;
                Ok(fold_left(args, Term::div))
            }
            "mod" => {
                arity(n == 2, "two arguments")?;
                Ok(fold_left(args, Term::modulo))
            }
            "=" => {
                arity(n >= 2, "at least two arguments")?;
                Ok(chain(args, Term::eq))
            }
            "distinct" => {
                arity(n >= 2, "at least two arguments")?;
                let mut pairs = Vec::new();
                for i in 0..n {
                    for j in i + 1..n {
                        pairs.push(Term::not(Term::eq(args[i].clone(), args[j].clone())));
                    }
                }
                Ok(if pairs.len() == 1 {
                    pairs.pop().unwrap()
                } else {
                    Term::and(pairs)
                })
            }
            "<" | "<=" | ">" | ">=" => {
                arity(n >= 2, "at least two arguments")?;
                let f = match op {
                    "<" => Term::lt,
                    "<=" => Term::le,
                    ">" => Term::gt,
                    _ => Term::ge,
                };
                Ok(chain(args, f))
            }
            "and" if n == 0 => Ok(Term::bool(true)),
            "or" if n == 0 => Ok(Term::bool(false)),
            "and" => Ok(Term::and(args)),
            "or" => Ok(Term::or(args)),
            "not" => {
                arity(n == 1, "one argument")?;
                Ok(Term::not(args.pop().unwrap()))
            }
            "=>" => {
                arity(n >= 2, "at least two arguments")?;
                let mut it = args.into_iter().rev();
                let last = it.next().unwrap();
                Ok(it.fold(last, |acc, a| Term::implies(a, acc)))
            }
            "ite" => {
                arity(n == 3, "three arguments")?;
                let e = args.pop().unwrap();
                let t = args.pop().unwrap();
                let c = args.pop().unwrap();
                Ok(Term::ite(c, t, e))
            }
            "select" => {
                arity(n == 2, "two arguments")?;
                let i = args.pop().unwrap();
                Ok(Term::select(args.pop().unwrap(), i))
            }
            "store" => {
                arity(n == 3, "three arguments")?;
                let v = args.pop().unwrap();
                let i = args.pop().unwrap();
                Ok(Term::store(args.pop().unwrap(), i, v))
            }
            _ => {
                let name = normalize_prime(op);
                let Some(m) = self.macros.get(&name) else {
                    return parse_err(pos, format!("known operator, found `{op}`"));
                };
                if m.params.len() != n {
                    return Err(SygusError::ArityMismatch {
                        expected: m.params.len(),
                        found: n,
                    });
                }
                for ((pname, psort), a) in m.params.iter().zip(&args) {
                    let s = a.sort()?;
                    if s != *psort {
                        return Err(SygusError::Sort(FormulaError::SortMismatch {
                            context: format!("argument `{pname}` of `{name}`"),
                            expected: psort.to_string(),
                            found: s,
                        }));
                    }
                }
                let binding: HashMap<&str, &Term> = m
                    .params
                    .iter()
                    .map(|(p, _)| p.as_str())
                    .zip(args.iter())
                    .collect();
                Ok(m.body
                    .subst_unchecked(&|v: &str| binding.get(v).map(|t| (*t).clone())))
            }
        }
    }

    fn bool_body(&self, e: &SExpr, scope: &Scope) -> Result<Term> {
        let t = self.term(e, scope)?;
        t.check_bool()?;
        Ok(t)
    }
}

fn scope_of(params: &[(String, Sort)]) -> Scope {
    params
        .iter()
        .map(|(n, s)| (n.clone(), Term::var(n.clone(), *s)))
        .collect()
}

/// Binds `params` positionally to `targets`, checking sorts.
fn positional_renaming(
    params: &[(String, Sort)],
    targets: &[(String, Sort)],
    what: &str,
) -> Result<BTreeMap<String, String>> {
    if params.len() != targets.len() {
        return Err(SygusError::ArityMismatch {
            expected: targets.len(),
            found: params.len(),
        });
    }
    let mut map = BTreeMap::new();
    for ((p, ps), (t, ts)) in params.iter().zip(targets) {
        if ps != ts {
            return Err(SygusError::Sort(FormulaError::SortMismatch {
                context: format!("parameter `{p}` of {what}"),
                expected: ts.to_string(),
                found: *ps,
            }));
        }
        map.insert(p.clone(), t.clone());
    }
    Ok(map)
}

// --- problems -------------------------------------------------------------

/// Parses a SyGuS inv-track file. `id` is usually the file stem.
pub fn parse_problem(id: &str, text: &str) -> Result<Problem> {
    let cmds = sexpr::read_all(text)?;
    let mut parser = TermParser::default();
    let mut logic = None;
    let mut synth: Option<(String, Vec<(String, Sort)>)> = None;
    let mut constraint: Option<[String; 4]> = None;

    for cmd in &cmds {
        let Some(items) = cmd.as_list() else {
            return parse_err(cmd.pos(), "command");
        };
        let Some(head) = cmd.head() else {
            return parse_err(cmd.pos(), "command name");
        };
        match head {
            "set-logic" => {
                logic = Some(match items.get(1).and_then(SExpr::as_atom) {
                    Some("LIA") => Logic::Lia,
                    Some("NIA") => Logic::Nia,
                    Some("ALIA") => Logic::Alia,
                    _ => return parse_err(cmd.pos(), "logic LIA, NIA or ALIA"),
                });
            }
            "synth-inv" => {
                let (Some(SExpr::Atom(name, _)), Some(params)) = (items.get(1), items.get(2))
                else {
                    return parse_err(cmd.pos(), "`(synth-inv name ((v S) ...))`");
                };
                synth = Some((name.clone(), parse_params(params)?));
            }
            "define-fun" => {
                let [_, SExpr::Atom(name, _), params, ret, body] = items else {
                    return parse_err(cmd.pos(), "`(define-fun name ((v S) ...) Sort body)`");
                };
                let params = parse_params(params)?;
                let ret = parse_sort(ret)?;
                let body = parser.term(body, &scope_of(&params))?;
                let got = body.sort()?;
                if got != ret {
                    return Err(SygusError::Sort(FormulaError::SortMismatch {
                        context: format!("body of `{name}`"),
                        expected: ret.to_string(),
                        found: got,
                    }));
                }
                parser
                    .macros
                    .insert(name.clone(), Macro { params, ret, body });
            }
            "inv-constraint" => {
                let names: Option<Vec<String>> = items[1..]
                    .iter()
                    .map(|e| e.as_atom().map(str::to_string))
                    .collect();
                match names.map(<[String; 4]>::try_from) {
                    Some(Ok(arr)) => constraint = Some(arr),
                    _ => return parse_err(cmd.pos(), "`(inv-constraint inv pre trans post)`"),
                }
            }
            "check-synth" | "set-info" | "set-option" => {}
            "declare-var" | "declare-primed-var" => {
                debug!("{id}: ignoring `{head}`; variables come from synth-inv");
            }
            other => warn!("{id}: skipping unknown command `{other}` at {}", cmd.pos()),
        }
    }

    let (inv_name, vars) = synth.ok_or(SygusError::MissingComponent("synth-inv"))?;
    let [c_inv, c_pre, c_trans, c_post] =
        constraint.ok_or(SygusError::MissingComponent("inv-constraint"))?;
    if c_inv != inv_name {
        warn!("{id}: inv-constraint names `{c_inv}` but synth-inv declares `{inv_name}`");
    }
    let primed_vars: Vec<(String, Sort)> = vars.iter().map(|(n, s)| (primed_name(n), *s)).collect();

    let fetch = |name: &str, what: &'static str| -> Result<&Macro> {
        parser
            .macros
            .get(name)
            .ok_or(SygusError::MissingComponent(what))
    };
    let pre_def = fetch(&c_pre, "pre_fun")?;
    let trans_def = fetch(&c_trans, "trans_fun")?;
    let post_def = fetch(&c_post, "post_fun")?;
    for (def, what) in [
        (pre_def, "pre_fun"),
        (trans_def, "trans_fun"),
        (post_def, "post_fun"),
    ] {
        if def.ret != Sort::Bool {
            return Err(SygusError::Sort(FormulaError::SortMismatch {
                context: what.to_string(),
                expected: "Bool".into(),
                found: def.ret,
            }));
        }
    }

    let pre = pre_def
        .body
        .rename(&positional_renaming(&pre_def.params, &vars, "pre_fun")?);
    let post = post_def
        .body
        .rename(&positional_renaming(&post_def.params, &vars, "post_fun")?);
    let both: Vec<(String, Sort)> = vars.iter().chain(&primed_vars).cloned().collect();
    let trans = trans_def
        .body
        .rename(&positional_renaming(&trans_def.params, &both, "trans_fun")?);

    Ok(Problem {
        id: id.to_string(),
        logic: logic.unwrap_or(Logic::Lia),
        vars,
        primed_vars,
        pre,
        trans,
        post,
        raw_text: text.to_string(),
    })
}

pub fn load_problem(path: &Path) -> Result<Problem> {
    let text = std::fs::read_to_string(path).map_err(|e| SygusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_problem(&id, &text)
}

fn render_params(params: &[(String, Sort)]) -> String {
    let inner: Vec<String> = params.iter().map(|(n, s)| format!("({n} {s})")).collect();
    format!("({})", inner.join(" "))
}

/// The `define-fun inv_fun` header for a problem's variables, without the
/// body and closing parenthesis.
pub fn inv_fun_header(vars: &[(String, Sort)]) -> String {
    format!("(define-fun inv_fun {} Bool (", render_params(vars))
}

/// Renders a problem back to SyGuS inv-track text.
pub fn render_problem(p: &Problem) -> String {
    let both: Vec<(String, Sort)> = p.vars.iter().chain(&p.primed_vars).cloned().collect();
    let vars = render_params(&p.vars);
    format!(
        "(set-logic {logic})\n\
         (synth-inv inv_fun {vars})\n\
         (define-fun pre_fun {vars} Bool {pre})\n\
         (define-fun trans_fun {both} Bool {trans})\n\
         (define-fun post_fun {vars} Bool {post})\n\
         (inv-constraint inv_fun pre_fun trans_fun post_fun)\n\
         (check-synth)\n",
        logic = p.logic,
        both = render_params(&both),
        pre = p.pre,
        trans = p.trans,
        post = p.post,
    )
}

// --- candidates -----------------------------------------------------------

/// Parses a candidate invariant: a `(define-fun inv_fun (params) Bool body)`
/// or a bare Bool term over the problem's variables.
pub fn parse_candidate(
    text: &str,
    p: &Problem,
    source: Source,
    generation_index: usize,
) -> Result<InvariantCandidate> {
    let e = sexpr::read_one(text)?;
    let parser = TermParser::default();
    let body = if e.head() == Some("define-fun") {
        let items = e.as_list().unwrap();
        let [_, SExpr::Atom(_, _), params, ret, body] = items else {
            return parse_err(e.pos(), "`(define-fun inv_fun ((v S) ...) Bool body)`");
        };
        let params = parse_params(params)?;
        if parse_sort(ret)? != Sort::Bool {
            return parse_err(ret.pos(), "return sort Bool");
        }
        let renaming = positional_renaming(&params, &p.vars, "inv_fun")?;
        parser
            .bool_body(body, &scope_of(&params))?
            .rename(&renaming)
    } else {
        parser.bool_body(&e, &scope_of(&p.vars))?
    };
    Ok(InvariantCandidate {
        id: InvariantCandidate::make_id(&p.id, source, generation_index),
        problem_id: p.id.clone(),
        body,
        source,
        generation_index,
        raw_text: text.trim().to_string(),
    })
}

/// Parses a standalone term whose variables are drawn from `vars`.
pub fn parse_term(text: &str, vars: &[(String, Sort)]) -> Result<Term> {
    let e = sexpr::read_one(text)?;
    TermParser::default().term(&e, &scope_of(vars))
}

// --- loop language --------------------------------------------------------

#[derive(Debug)]
enum RawStmt {
    Assign(String, SExpr),
    Skip,
    If(SExpr, Vec<RawStmt>, Vec<RawStmt>),
}

struct LoopParser<'a> {
    r: Reader<'a>,
}

impl<'a> LoopParser<'a> {
    fn ws(&mut self) {
        self.r.skip_trivia();
        // `//` line comments
        while self.r.rest().starts_with("//") {
            let n = self.r.rest().find('\n').unwrap_or(self.r.rest().len());
            self.r.advance(n);
            self.r.skip_trivia();
        }
    }

    fn try_token(&mut self, tok: &str) -> bool {
        self.ws();
        let rest = self.r.rest();
        if !rest.starts_with(tok) {
            return false;
        }
        // keywords must not run into an identifier
        let word = tok.chars().all(|c| c.is_alphanumeric());
        if word
            && rest[tok.len()..]
                .chars()
                .next()
                .is_some_and(|c| c.is_alphanumeric() || c == '_')
        {
            return false;
        }
        self.r.advance(tok.len());
        true
    }

    fn expect(&mut self, tok: &str) -> Result<()> {
        if self.try_token(tok) {
            Ok(())
        } else {
            parse_err(self.r.pos(), format!("`{tok}`"))
        }
    }

    fn term(&mut self) -> Result<SExpr> {
        self.ws();
        let e = self.r.read()?;
        if let SExpr::Atom(a, pos) = &e {
            if a.is_empty() {
                return parse_err(*pos, "term");
            }
        }
        Ok(e)
    }

    fn ident(&mut self) -> Result<String> {
        self.ws();
        let start = self.r.pos();
        let rest = self.r.rest();
        let n = rest
            .char_indices()
            .find(|(_, c)| !(c.is_alphanumeric() || *c == '_' || *c == '!' || *c == '.'))
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        if n == 0 || rest.chars().next().is_some_and(|c| c.is_ascii_digit()) {
            return parse_err(start, "identifier");
        }
        let id = rest[..n].to_string();
        self.r.advance(n);
        Ok(id)
    }

    fn block(&mut self) -> Result<Vec<RawStmt>> {
        self.expect("{")?;
        let mut out = Vec::new();
        while !self.try_token("}") {
            if self.r.at_end() {
                return parse_err(self.r.pos(), "`}`");
            }
            out.push(self.stmt()?);
        }
        Ok(out)
    }

    fn stmt(&mut self) -> Result<RawStmt> {
        if self.try_token("skip") {
            self.expect(";")?;
            return Ok(RawStmt::Skip);
        }
        if self.try_token("if") {
            let cond = self.term()?;
            let then = self.block()?;
            let els = if self.try_token("else") {
                if self.try_token("if") {
                    // `else if` chains nest
                    let cond2 = self.term()?;
                    let t2 = self.block()?;
                    let e2 = if self.try_token("else") {
                        self.block()?
                    } else {
                        vec![]
                    };
                    vec![RawStmt::If(cond2, t2, e2)]
                } else {
                    self.block()?
                }
            } else {
                vec![]
            };
            return Ok(RawStmt::If(cond, then, els));
        }
        let var = self.ident()?;
        self.expect(":=")?;
        let rhs = self.term()?;
        self.expect(";")?;
        Ok(RawStmt::Assign(var, rhs))
    }
}

#[derive(Default)]
struct SortUses {
    order: Vec<String>,
    uses: HashMap<String, (bool, bool)>,
}

impl SortUses {
    fn note(&mut self, name: &str, expected: Option<Sort>) {
        if !self.uses.contains_key(name) {
            self.order.push(name.to_string());
        }
        let entry = self.uses.entry(name.to_string()).or_default();
        match expected {
            Some(Sort::Bool) => entry.0 = true,
            Some(_) => entry.1 = true,
            None => {}
        }
    }

    /// Walks an untyped term; returns its sort when evident from its shape.
    fn infer(&mut self, e: &SExpr, expected: Option<Sort>) -> Option<Sort> {
        match e {
            SExpr::Atom(a, _) => {
                if a == "true" || a == "false" {
                    Some(Sort::Bool)
                } else if parse_numeral(a).is_some() {
                    Some(Sort::Int)
                } else {
                    self.note(&normalize_prime(a), expected);
                    expected
                }
            }
            SExpr::List(items, _) => {
                let (head, args) = items.split_first()?;
                match head.as_atom().unwrap_or("") {
                    "+" | "-" | "*" | "div" | "mod" => {
                        args.iter().for_each(|a| {
                            self.infer(a, Some(Sort::Int));
                        });
                        Some(Sort::Int)
                    }
                    "<" | "<=" | ">" | ">=" => {
                        args.iter().for_each(|a| {
                            self.infer(a, Some(Sort::Int));
                        });
                        Some(Sort::Bool)
                    }
                    "and" | "or" | "not" | "=>" => {
                        args.iter().for_each(|a| {
                            self.infer(a, Some(Sort::Bool));
                        });
                        Some(Sort::Bool)
                    }
                    "=" | "distinct" => {
                        self.same_sort(args);
                        Some(Sort::Bool)
                    }
                    "ite" => {
                        if let Some(c) = args.first() {
                            self.infer(c, Some(Sort::Bool));
                        }
                        self.same_sort(args.get(1..).unwrap_or(&[]))
                    }
                    _ => {
                        args.iter().for_each(|a| {
                            self.infer(a, None);
                        });
                        None
                    }
                }
            }
        }
    }

    fn same_sort(&mut self, args: &[SExpr]) -> Option<Sort> {
        let mut probe = SortUses::default();
        let known = args.iter().find_map(|a| probe.infer(a, None));
        let s = known.unwrap_or(Sort::Int);
        for a in args {
            self.infer(a, Some(s));
        }
        Some(s)
    }

    fn stmts(&mut self, stmts: &[RawStmt]) {
        for s in stmts {
            match s {
                RawStmt::Assign(v, rhs) => {
                    self.note(v, Some(Sort::Int));
                    self.infer(rhs, Some(Sort::Int));
                }
                RawStmt::Skip => {}
                RawStmt::If(c, t, e) => {
                    self.infer(c, Some(Sort::Bool));
                    self.stmts(t);
                    self.stmts(e);
                }
            }
        }
    }

    fn vars(&self) -> Vec<(String, Sort)> {
        self.order
            .iter()
            .map(|n| {
                let (b, i) = self.uses[n];
                (n.clone(), if b && !i { Sort::Bool } else { Sort::Int })
            })
            .collect()
    }
}

fn lower_stmts(parser: &TermParser, scope: &Scope, raw: &[RawStmt]) -> Result<Stmt> {
    let stmts = raw
        .iter()
        .map(|s| match s {
            RawStmt::Assign(v, rhs) => {
                let t = parser.term(rhs, scope)?;
                let st = Stmt::assign(v.clone(), t);
                st.check()?;
                Ok(st)
            }
            RawStmt::Skip => Ok(Stmt::Skip),
            RawStmt::If(c, t, e) => Ok(Stmt::ite(
                parser.bool_body(c, scope)?,
                lower_stmts(parser, scope, t)?,
                lower_stmts(parser, scope, e)?,
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Stmt::block(stmts))
}

/// Parses `pre: t; while t do { stmts } post: t;`.
pub fn parse_loopspec(text: &str) -> Result<LoopSpec> {
    let mut lp = LoopParser {
        r: Reader::without_comments(text),
    };
    lp.expect("pre:")?;
    let pre = lp.term()?;
    lp.expect(";")?;
    lp.expect("while")?;
    let guard = lp.term()?;
    lp.expect("do")?;
    let body = lp.block()?;
    lp.expect("post:")?;
    let post = lp.term()?;
    lp.try_token(";");
    lp.ws();
    if !lp.r.at_end() {
        return parse_err(lp.r.pos(), "end of input");
    }

    let mut uses = SortUses::default();
    uses.infer(&pre, Some(Sort::Bool));
    uses.infer(&guard, Some(Sort::Bool));
    uses.stmts(&body);
    uses.infer(&post, Some(Sort::Bool));
    let vars = uses.vars();

    let parser = TermParser::default();
    let scope = scope_of(&vars);
    let spec = LoopSpec {
        pre: parser.bool_body(&pre, &scope)?,
        guard: parser.bool_body(&guard, &scope)?,
        body: lower_stmts(&parser, &scope, &body)?,
        post: parser.bool_body(&post, &scope)?,
        vars,
    };
    spec.validate()?;
    Ok(spec)
}

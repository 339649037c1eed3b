//! Quantifier-free terms over integers, booleans and integer-indexed arrays,
//! the loop-free statement language used for weakest preconditions, and
//! canonical SMT-LIB2 rendering.
//!
//! Nothing here simplifies: substitution and rendering are purely syntactic.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sort {
    Int,
    Bool,
    ArrayIntInt,
    ArrayIntBool,
}

impl Sort {
    /// Element sort of an array sort.
    pub fn element(self) -> Option<Sort> {
        match self {
            Sort::ArrayIntInt => Some(Sort::Int),
            Sort::ArrayIntBool => Some(Sort::Bool),
            _ => None,
        }
    }

    pub fn is_array(self) -> bool {
        self.element().is_some()
    }
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sort::Int => "Int",
            Sort::Bool => "Bool",
            Sort::ArrayIntInt => "(Array Int Int)",
            Sort::ArrayIntBool => "(Array Int Bool)",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormulaError {
    #[error("sort mismatch in {context}: expected {expected}, found {found}")]
    SortMismatch {
        context: String,
        expected: String,
        found: Sort,
    },
    #[error("`{0}` needs at least one operand")]
    EmptyConnective(&'static str),
    #[error("variable with empty name")]
    EmptyVarName,
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("variable `{name}` declared as {declared} but used as {used}")]
    VarSortConflict {
        name: String,
        declared: Sort,
        used: Sort,
    },
}

fn mismatch(context: &str, expected: impl fmt::Display, found: Sort) -> FormulaError {
    FormulaError::SortMismatch {
        context: context.to_string(),
        expected: expected.to_string(),
        found,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    IntConst(i64),
    BoolConst(bool),
    Var(String, Sort),
    Add(Box<Term>, Box<Term>),
    Sub(Box<Term>, Box<Term>),
    Mul(Box<Term>, Box<Term>),
    Div(Box<Term>, Box<Term>),
    Mod(Box<Term>, Box<Term>),
    Eq(Box<Term>, Box<Term>),
    Lt(Box<Term>, Box<Term>),
    Le(Box<Term>, Box<Term>),
    Gt(Box<Term>, Box<Term>),
    Ge(Box<Term>, Box<Term>),
    And(Vec<Term>),
    Or(Vec<Term>),
    Not(Box<Term>),
    Implies(Box<Term>, Box<Term>),
    Ite(Box<Term>, Box<Term>, Box<Term>),
    Select(Box<Term>, Box<Term>),
    Store(Box<Term>, Box<Term>, Box<Term>),
}

macro_rules! binary_ctor {
    ($($name:ident => $variant:ident),* $(,)?) => {
        $(
            pub fn $name(a: Term, b: Term) -> Term {
                Term::$variant(Box::new(a), Box::new(b))
            }
        )*
    };
}

// constructors named after the SMT-LIB operators
#[allow(clippy::should_implement_trait)]
impl Term {
    pub fn int(n: i64) -> Term {
        Term::IntConst(n)
    }

    pub fn bool(b: bool) -> Term {
        Term::BoolConst(b)
    }

    pub fn var(name: impl Into<String>, sort: Sort) -> Term {
        Term::Var(name.into(), sort)
    }

    pub fn int_var(name: impl Into<String>) -> Term {
        Term::Var(name.into(), Sort::Int)
    }

    binary_ctor! {
        add => Add, sub => Sub, mul => Mul, div => Div, modulo => Mod,
        eq => Eq, lt => Lt, le => Le, gt => Gt, ge => Ge, implies => Implies,
        select => Select,
    }

    pub fn and(children: Vec<Term>) -> Term {
        Term::And(children)
    }

    pub fn or(children: Vec<Term>) -> Term {
        Term::Or(children)
    }

    pub fn not(t: Term) -> Term {
        Term::Not(Box::new(t))
    }

    pub fn ite(c: Term, t: Term, e: Term) -> Term {
        Term::Ite(Box::new(c), Box::new(t), Box::new(e))
    }

    pub fn store(a: Term, i: Term, v: Term) -> Term {
        Term::Store(Box::new(a), Box::new(i), Box::new(v))
    }

    /// Immediate subterms, left to right.
    pub fn children(&self) -> Vec<&Term> {
        match self {
            Term::IntConst(_) | Term::BoolConst(_) | Term::Var(..) => vec![],
            Term::Add(a, b)
            | Term::Sub(a, b)
            | Term::Mul(a, b)
            | Term::Div(a, b)
            | Term::Mod(a, b)
            | Term::Eq(a, b)
            | Term::Lt(a, b)
            | Term::Le(a, b)
            | Term::Gt(a, b)
            | Term::Ge(a, b)
            | Term::Implies(a, b)
            | Term::Select(a, b) => vec![a, b],
            Term::And(cs) | Term::Or(cs) => cs.iter().collect(),
            Term::Not(a) => vec![a],
            Term::Ite(a, b, c) | Term::Store(a, b, c) => vec![a, b, c],
        }
    }

    /// Rebuilds this node with every immediate child mapped through `f`.
    pub fn map_children(&self, f: &mut impl FnMut(&Term) -> Term) -> Term {
        let b = |t: &Term, f: &mut dyn FnMut(&Term) -> Term| Box::new(f(t));
        match self {
            Term::IntConst(_) | Term::BoolConst(_) | Term::Var(..) => self.clone(),
            Term::Add(x, y) => Term::Add(b(x, f), b(y, f)),
            Term::Sub(x, y) => Term::Sub(b(x, f), b(y, f)),
            Term::Mul(x, y) => Term::Mul(b(x, f), b(y, f)),
            Term::Div(x, y) => Term::Div(b(x, f), b(y, f)),
            Term::Mod(x, y) => Term::Mod(b(x, f), b(y, f)),
            Term::Eq(x, y) => Term::Eq(b(x, f), b(y, f)),
            Term::Lt(x, y) => Term::Lt(b(x, f), b(y, f)),
            Term::Le(x, y) => Term::Le(b(x, f), b(y, f)),
            Term::Gt(x, y) => Term::Gt(b(x, f), b(y, f)),
            Term::Ge(x, y) => Term::Ge(b(x, f), b(y, f)),
            Term::Implies(x, y) => Term::Implies(b(x, f), b(y, f)),
            Term::Select(x, y) => Term::Select(b(x, f), b(y, f)),
            Term::And(cs) => Term::And(cs.iter().map(&mut *f).collect()),
            Term::Or(cs) => Term::Or(cs.iter().map(&mut *f).collect()),
            Term::Not(x) => Term::Not(b(x, f)),
            Term::Ite(x, y, z) => Term::Ite(b(x, f), b(y, f), b(z, f)),
            Term::Store(x, y, z) => Term::Store(b(x, f), b(y, f), b(z, f)),
        }
    }

    /// Computes the sort of the term, checking every operator on the way.
    pub fn sort(&self) -> Result<Sort, FormulaError> {
        let expect = |t: &Term, want: Sort, ctx: &str| -> Result<(), FormulaError> {
            let got = t.sort()?;
            if got == want {
                Ok(())
            } else {
                Err(mismatch(ctx, want, got))
            }
        };
        match self {
            Term::IntConst(_) => Ok(Sort::Int),
            Term::BoolConst(_) => Ok(Sort::Bool),
            Term::Var(name, s) => {
                if name.is_empty() {
                    Err(FormulaError::EmptyVarName)
                } else {
                    Ok(*s)
                }
            }
            Term::Add(a, b)
            | Term::Sub(a, b)
            | Term::Mul(a, b)
            | Term::Div(a, b)
            | Term::Mod(a, b) => {
                expect(a, Sort::Int, self.op_name())?;
                expect(b, Sort::Int, self.op_name())?;
                Ok(Sort::Int)
            }
            Term::Lt(a, b) | Term::Le(a, b) | Term::Gt(a, b) | Term::Ge(a, b) => {
                expect(a, Sort::Int, self.op_name())?;
                expect(b, Sort::Int, self.op_name())?;
                Ok(Sort::Bool)
            }
            Term::Eq(a, b) => {
                let sa = a.sort()?;
                expect(b, sa, "=")?;
                Ok(Sort::Bool)
            }
            Term::And(cs) | Term::Or(cs) => {
                if cs.is_empty() {
                    return Err(FormulaError::EmptyConnective(self.op_name()));
                }
                for c in cs {
                    expect(c, Sort::Bool, self.op_name())?;
                }
                Ok(Sort::Bool)
            }
            Term::Not(a) => {
                expect(a, Sort::Bool, "not")?;
                Ok(Sort::Bool)
            }
            Term::Implies(a, b) => {
                expect(a, Sort::Bool, "=>")?;
                expect(b, Sort::Bool, "=>")?;
                Ok(Sort::Bool)
            }
            Term::Ite(c, t, e) => {
                expect(c, Sort::Bool, "ite")?;
                let st = t.sort()?;
                expect(e, st, "ite")?;
                Ok(st)
            }
            Term::Select(a, i) => {
                let sa = a.sort()?;
                let elem = sa
                    .element()
                    .ok_or_else(|| mismatch("select", "array", sa))?;
                expect(i, Sort::Int, "select")?;
                Ok(elem)
            }
            Term::Store(a, i, v) => {
                let sa = a.sort()?;
                let elem = sa.element().ok_or_else(|| mismatch("store", "array", sa))?;
                expect(i, Sort::Int, "store")?;
                expect(v, elem, "store")?;
                Ok(sa)
            }
        }
    }

    /// Checks well-sortedness and that the term is Bool-sorted.
    pub fn check_bool(&self) -> Result<(), FormulaError> {
        match self.sort()? {
            Sort::Bool => Ok(()),
            s => Err(mismatch("formula", Sort::Bool, s)),
        }
    }

    fn op_name(&self) -> &'static str {
        match self {
            Term::IntConst(_) | Term::BoolConst(_) | Term::Var(..) => "",
            Term::Add(..) => "+",
            Term::Sub(..) => "-",
            Term::Mul(..) => "*",
            Term::Div(..) => "div",
            Term::Mod(..) => "mod",
            Term::Eq(..) => "=",
            Term::Lt(..) => "<",
            Term::Le(..) => "<=",
            Term::Gt(..) => ">",
            Term::Ge(..) => ">=",
            Term::And(..) => "and",
            Term::Or(..) => "or",
            Term::Not(..) => "not",
            Term::Implies(..) => "=>",
            Term::Ite(..) => "ite",
            Term::Select(..) => "select",
            Term::Store(..) => "store",
        }
    }

    /// The set of variables occurring in the term.
    pub fn free_vars(&self) -> BTreeSet<(String, Sort)> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<(String, Sort)>) {
        if let Term::Var(n, s) = self {
            out.insert((n.clone(), *s));
        }
        for c in self.children() {
            c.collect_vars(out);
        }
    }

    pub fn mentions(&self, name: &str) -> bool {
        match self {
            Term::Var(n, _) => n == name,
            _ => self.children().into_iter().any(|c| c.mentions(name)),
        }
    }

    /// Replaces every occurrence of variable `name` with `replacement`.
    ///
    /// The variable's sort is taken from its occurrences in `self`; if it does
    /// not occur the term is returned unchanged.
    pub fn substitute(&self, name: &str, replacement: &Term) -> Result<Term, FormulaError> {
        let rsort = replacement.sort()?;
        if let Some((_, vsort)) = self.free_vars().into_iter().find(|(n, _)| n == name) {
            if vsort != rsort {
                return Err(mismatch(
                    &format!("substitution for `{name}`"),
                    vsort,
                    rsort,
                ));
            }
        }
        Ok(self.subst_unchecked(&|n: &str| (n == name).then(|| replacement.clone())))
    }

    /// Simultaneous substitution driven by a lookup; names the lookup
    /// declines are left alone. Sorts are not checked.
    pub fn subst_unchecked(&self, lookup: &dyn Fn(&str) -> Option<Term>) -> Term {
        match self {
            Term::Var(n, _) => lookup(n).unwrap_or_else(|| self.clone()),
            _ => self.map_children(&mut |c| c.subst_unchecked(lookup)),
        }
    }

    /// Renames variables according to `map`, keeping their sorts.
    pub fn rename(&self, map: &BTreeMap<String, String>) -> Term {
        match self {
            Term::Var(n, s) => Term::Var(map.get(n).unwrap_or(n).clone(), *s),
            _ => self.map_children(&mut |c| c.rename(map)),
        }
    }

    pub fn to_smtlib(&self) -> String {
        self.to_string()
    }

    /// Evaluates the term in a concrete state. Returns `None` when a variable
    /// is unbound, a division by zero occurs, or arithmetic overflows `i64`.
    pub fn eval(&self, state: &State) -> Option<Value> {
        let int = |t: &Term| t.eval(state).and_then(|v| v.as_int());
        let boolean = |t: &Term| t.eval(state).and_then(|v| v.as_bool());
        Some(match self {
            Term::IntConst(n) => Value::Int(*n),
            Term::BoolConst(b) => Value::Bool(*b),
            Term::Var(n, _) => state.get(n)?.clone(),
            Term::Add(a, b) => Value::Int(int(a)?.checked_add(int(b)?)?),
            Term::Sub(a, b) => Value::Int(int(a)?.checked_sub(int(b)?)?),
            Term::Mul(a, b) => Value::Int(int(a)?.checked_mul(int(b)?)?),
            Term::Div(a, b) => Value::Int(int(a)?.checked_div_euclid(int(b)?)?),
            Term::Mod(a, b) => Value::Int(int(a)?.checked_rem_euclid(int(b)?)?),
            Term::Eq(a, b) => Value::Bool(a.eval(state)? == b.eval(state)?),
            Term::Lt(a, b) => Value::Bool(int(a)? < int(b)?),
            Term::Le(a, b) => Value::Bool(int(a)? <= int(b)?),
            Term::Gt(a, b) => Value::Bool(int(a)? > int(b)?),
            Term::Ge(a, b) => Value::Bool(int(a)? >= int(b)?),
            Term::And(cs) => {
                let mut all = true;
                for c in cs {
                    all &= boolean(c)?;
                }
                Value::Bool(all)
            }
            Term::Or(cs) => {
                let mut any = false;
                for c in cs {
                    any |= boolean(c)?;
                }
                Value::Bool(any)
            }
            Term::Not(a) => Value::Bool(!boolean(a)?),
            Term::Implies(a, b) => Value::Bool(!boolean(a)? || boolean(b)?),
            Term::Ite(c, t, e) => {
                if boolean(c)? {
                    t.eval(state)?
                } else {
                    e.eval(state)?
                }
            }
            Term::Select(a, i) => match a.eval(state)? {
                Value::Array(arr) => arr.get(int(i)?),
                _ => return None,
            },
            Term::Store(a, i, v) => match a.eval(state)? {
                Value::Array(arr) => Value::Array(arr.set(int(i)?, v.eval(state)?)),
                _ => return None,
            },
        })
    }
}

fn write_nary(f: &mut fmt::Formatter<'_>, op: &str, args: &[&Term]) -> fmt::Result {
    write!(f, "({op}")?;
    for a in args {
        write!(f, " {a}")?;
    }
    f.write_str(")")
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::IntConst(n) if *n < 0 => write!(f, "(- {})", n.unsigned_abs()),
            Term::IntConst(n) => write!(f, "{n}"),
            Term::BoolConst(b) => write!(f, "{b}"),
            Term::Var(n, _) => f.write_str(n),
            _ => write_nary(f, self.op_name(), &self.children()),
        }
    }
}

/// Renders a term as a canonical SMT-LIB2 s-expression.
pub fn render_smtlib(t: &Term) -> String {
    t.to_string()
}

pub fn free_vars(t: &Term) -> BTreeSet<(String, Sort)> {
    t.free_vars()
}

pub fn substitute(phi: &Term, var: &str, replacement: &Term) -> Result<Term, FormulaError> {
    phi.substitute(var, replacement)
}

/// A concrete array: a default element plus explicit overrides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrayValue {
    pub default: Box<Value>,
    pub entries: BTreeMap<i64, Value>,
}

impl ArrayValue {
    fn get(&self, idx: i64) -> Value {
        self.entries
            .get(&idx)
            .cloned()
            .unwrap_or_else(|| (*self.default).clone())
    }

    fn set(mut self, idx: i64, v: Value) -> ArrayValue {
        if v == *self.default {
            self.entries.remove(&idx);
        } else {
            self.entries.insert(idx, v);
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Int(i64),
    Bool(bool),
    Array(ArrayValue),
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }
}

pub type State = BTreeMap<String, Value>;

/// Loop-free statements.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Stmt {
    Assign(String, Term),
    Skip,
    Seq(Box<Stmt>, Box<Stmt>),
    If(Term, Box<Stmt>, Box<Stmt>),
}

impl Stmt {
    pub fn assign(var: impl Into<String>, rhs: Term) -> Stmt {
        Stmt::Assign(var.into(), rhs)
    }

    pub fn seq(a: Stmt, b: Stmt) -> Stmt {
        Stmt::Seq(Box::new(a), Box::new(b))
    }

    pub fn ite(c: Term, t: Stmt, e: Stmt) -> Stmt {
        Stmt::If(c, Box::new(t), Box::new(e))
    }

    /// Folds a list of statements into right-nested `Seq`; empty is `Skip`.
    pub fn block(mut stmts: Vec<Stmt>) -> Stmt {
        let Some(mut acc) = stmts.pop() else {
            return Stmt::Skip;
        };
        while let Some(s) = stmts.pop() {
            acc = Stmt::seq(s, acc);
        }
        acc
    }

    pub fn check(&self) -> Result<(), FormulaError> {
        match self {
            Stmt::Assign(v, rhs) => {
                if v.is_empty() {
                    return Err(FormulaError::EmptyVarName);
                }
                match rhs.sort()? {
                    Sort::Int => Ok(()),
                    s => Err(mismatch(&format!("assignment to `{v}`"), Sort::Int, s)),
                }
            }
            Stmt::Skip => Ok(()),
            Stmt::Seq(a, b) => {
                a.check()?;
                b.check()
            }
            Stmt::If(c, t, e) => {
                c.check_bool()?;
                t.check()?;
                e.check()
            }
        }
    }

    pub fn free_vars(&self) -> BTreeSet<(String, Sort)> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<(String, Sort)>) {
        match self {
            Stmt::Assign(v, rhs) => {
                out.insert((v.clone(), Sort::Int));
                out.extend(rhs.free_vars());
            }
            Stmt::Skip => {}
            Stmt::Seq(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Stmt::If(c, t, e) => {
                out.extend(c.free_vars());
                t.collect_vars(out);
                e.collect_vars(out);
            }
        }
    }

    /// Executes the statement on a concrete state.
    pub fn exec(&self, state: &State) -> Option<State> {
        match self {
            Stmt::Assign(v, rhs) => {
                let val = rhs.eval(state)?;
                let mut next = state.clone();
                next.insert(v.clone(), val);
                Some(next)
            }
            Stmt::Skip => Some(state.clone()),
            Stmt::Seq(a, b) => b.exec(&a.exec(state)?),
            Stmt::If(c, t, e) => {
                if c.eval(state)?.as_bool()? {
                    t.exec(state)
                } else {
                    e.exec(state)
                }
            }
        }
    }
}

/// `{pre} while guard do body {post}` over declared variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopSpec {
    pub pre: Term,
    pub guard: Term,
    pub body: Stmt,
    pub post: Term,
    pub vars: Vec<(String, Sort)>,
}

impl LoopSpec {
    pub fn validate(&self) -> Result<(), FormulaError> {
        self.pre.check_bool()?;
        self.guard.check_bool()?;
        self.post.check_bool()?;
        self.body.check()?;
        let declared: BTreeMap<&str, Sort> =
            self.vars.iter().map(|(n, s)| (n.as_str(), *s)).collect();
        let used = self
            .pre
            .free_vars()
            .into_iter()
            .chain(self.guard.free_vars())
            .chain(self.post.free_vars())
            .chain(self.body.free_vars());
        for (name, sort) in used {
            match declared.get(name.as_str()) {
                None => return Err(FormulaError::UnknownVariable(name)),
                Some(d) if *d != sort => {
                    return Err(FormulaError::VarSortConflict {
                        name,
                        declared: *d,
                        used: sort,
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Term {
        Term::int_var("x")
    }

    #[test]
    fn substitute_examples() {
        let phi = Term::le(x(), Term::int(10));
        let got = phi.substitute("x", &Term::add(x(), Term::int(1))).unwrap();
        assert_eq!(got, Term::le(Term::add(x(), Term::int(1)), Term::int(10)));

        let phi = Term::eq(Term::int_var("y"), Term::int(0));
        assert_eq!(phi.substitute("x", &Term::int(5)).unwrap(), phi);

        let b = Term::var("x", Sort::Bool);
        let phi = Term::and(vec![b.clone(), Term::not(b)]);
        let got = phi.substitute("x", &Term::bool(true)).unwrap();
        assert_eq!(
            got,
            Term::and(vec![Term::bool(true), Term::not(Term::bool(true))])
        );
    }

    #[test]
    fn substitute_sort_mismatch() {
        let phi = Term::le(x(), Term::int(10));
        let err = phi.substitute("x", &Term::bool(true)).unwrap_err();
        assert!(matches!(err, FormulaError::SortMismatch { .. }));
    }

    #[test]
    fn render_examples() {
        assert_eq!(render_smtlib(&Term::int(3)), "3");
        assert_eq!(render_smtlib(&Term::int(-3)), "(- 3)");
        assert_eq!(
            render_smtlib(&Term::int(i64::MIN)),
            "(- 9223372036854775808)"
        );
        assert_eq!(
            render_smtlib(&Term::le(Term::add(x(), Term::int(1)), Term::int(10))),
            "(<= (+ x 1) 10)"
        );
        assert_eq!(
            render_smtlib(&Term::not(Term::eq(x(), Term::int_var("y")))),
            "(not (= x y))"
        );
        let arr = Term::var("a", Sort::ArrayIntInt);
        let t = Term::eq(
            Term::select(Term::store(arr, Term::int(0), x()), Term::int(0)),
            x(),
        );
        assert_eq!(t.to_string(), "(= (select (store a 0 x) 0) x)");
        assert_eq!(
            Term::ite(
                Term::bool(false),
                Term::div(x(), Term::int(2)),
                Term::modulo(x(), Term::int(2))
            )
            .to_string(),
            "(ite false (div x 2) (mod x 2))"
        );
    }

    #[test]
    fn free_vars_examples() {
        let fv = Term::add(x(), Term::int(1)).free_vars();
        assert_eq!(fv, BTreeSet::from([("x".to_string(), Sort::Int)]));
        assert!(Term::bool(true).free_vars().is_empty());
        let t = Term::and(vec![
            Term::lt(x(), Term::int_var("y")),
            Term::lt(Term::int_var("y"), Term::int_var("z")),
        ]);
        let names: Vec<_> = t.free_vars().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["x", "y", "z"]);
    }

    #[test]
    fn sort_checking() {
        assert!(Term::add(x(), Term::bool(true)).sort().is_err());
        assert!(Term::and(vec![]).sort().is_err());
        assert!(Term::var("", Sort::Int).sort().is_err());
        assert_eq!(
            Term::select(Term::var("a", Sort::ArrayIntBool), x()).sort(),
            Ok(Sort::Bool)
        );
        assert!(Term::select(x(), x()).sort().is_err());
    }

    #[test]
    fn rename_keeps_sorts() {
        let t = Term::and(vec![
            Term::var("b", Sort::Bool),
            Term::ge(x(), Term::int(0)),
        ]);
        let map = BTreeMap::from([
            ("x".to_string(), "x!".to_string()),
            ("b".to_string(), "b!".to_string()),
        ]);
        assert_eq!(
            t.rename(&map),
            Term::and(vec![
                Term::var("b!", Sort::Bool),
                Term::ge(Term::int_var("x!"), Term::int(0))
            ])
        );
    }

    #[test]
    fn eval_follows_smtlib_integer_division() {
        let st = State::from([("x".to_string(), Value::Int(-7))]);
        assert_eq!(Term::div(x(), Term::int(2)).eval(&st), Some(Value::Int(-4)));
        assert_eq!(
            Term::modulo(x(), Term::int(2)).eval(&st),
            Some(Value::Int(1))
        );
        assert_eq!(Term::div(x(), Term::int(-2)).eval(&st), Some(Value::Int(4)));
        assert_eq!(Term::div(x(), Term::int(0)).eval(&st), None);
    }

    #[test]
    fn exec_statements() {
        let s = Stmt::block(vec![
            Stmt::assign("x", Term::add(x(), Term::int(1))),
            Stmt::ite(
                Term::gt(x(), Term::int(0)),
                Stmt::assign("y", x()),
                Stmt::Skip,
            ),
        ]);
        s.check().unwrap();
        let st = State::from([
            ("x".to_string(), Value::Int(0)),
            ("y".to_string(), Value::Int(9)),
        ]);
        let out = s.exec(&st).unwrap();
        assert_eq!(out["x"], Value::Int(1));
        assert_eq!(out["y"], Value::Int(1));
    }

    #[test]
    fn loopspec_rejects_undeclared() {
        let spec = LoopSpec {
            pre: Term::eq(x(), Term::int(0)),
            guard: Term::lt(x(), Term::int(5)),
            body: Stmt::assign("x", Term::add(x(), Term::int_var("k"))),
            post: Term::eq(x(), Term::int(5)),
            vars: vec![("x".into(), Sort::Int)],
        };
        assert_eq!(
            spec.validate(),
            Err(FormulaError::UnknownVariable("k".into()))
        );
    }
}

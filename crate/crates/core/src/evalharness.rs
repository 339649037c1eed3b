//! Ranking metrics, solver-call accounting and report rendering.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Label, LabeledDataset};
use crate::embeddings::{tfidf_rank, Embedder};
use crate::ranker::{rank, FoldModels, RankError, RankedList};
use crate::sygus::{InvariantCandidate, Problem};
use crate::verifier::{verify_candidate, Checker, Verdict, VerifyError};

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];
pub const DEFAULT_PERMUTATIONS: usize = 100;

/// Above this many candidates exact enumeration is refused.
pub const MAX_EXACT_CANDIDATES: usize = 9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no verdict for candidate `{0}`")]
    MissingVerdict(String),
    #[error("no solver call count recorded for candidate `{0}`")]
    MissingCalls(String),
    #[error("exact enumeration limited to {MAX_EXACT_CANDIDATES} candidates, got {0}")]
    TooManyForExact(usize),
    #[error("at least one permutation is required")]
    NoPermutations,
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// 1-based position of the first verified entry.
pub fn first_verified_rank(
    rl: &RankedList,
    verdicts: &BTreeMap<String, Verdict>,
) -> Result<Option<usize>, EvalError> {
    let mut found = None;
    for (i, e) in rl.entries.iter().enumerate() {
        let v = verdicts
            .get(&e.candidate_id)
            .ok_or_else(|| EvalError::MissingVerdict(e.candidate_id.clone()))?;
        if found.is_none() && v.is_verified() {
            found = Some(i + 1);
        }
    }
    Ok(found)
}

/// Percentage of problems whose rank is at most `k`.
pub fn v_at_k(ranks: &[Option<usize>], k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    if ranks.is_empty() {
        return 0.0;
    }
    let hits = ranks
        .iter()
        .filter(|r| matches!(r, Some(r) if *r <= k))
        .count();
    100.0 * hits as f64 / ranks.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialOutcome {
    pub rank: Option<usize>,
    pub calls: u32,
    /// Verdicts of the attempted candidates, in list order.
    pub attempted: Vec<(String, Verdict)>,
}

impl SequentialOutcome {
    pub fn any_unknown(&self) -> bool {
        self.attempted
            .iter()
            .any(|(_, v)| matches!(v, Verdict::Unknown { .. }))
    }
}

/// Verifies candidates in list order until one is verified, counting solver
/// invocations.
pub fn sequential_solver_calls(
    rl: &RankedList,
    p: &Problem,
    cands: &[InvariantCandidate],
    checker: &impl Checker,
) -> Result<SequentialOutcome, EvalError> {
    let by_id: BTreeMap<&str, &InvariantCandidate> =
        cands.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut out = SequentialOutcome {
        rank: None,
        calls: 0,
        attempted: Vec::new(),
    };
    for (i, e) in rl.entries.iter().enumerate() {
        let c = by_id
            .get(e.candidate_id.as_str())
            .ok_or_else(|| EvalError::MissingVerdict(e.candidate_id.clone()))?;
        let v = verify_candidate(p, c, checker)?;
        out.calls += v.calls;
        let verified = v.verdict.is_verified();
        out.attempted.push((e.candidate_id.clone(), v.verdict));
        if verified {
            out.rank = Some(i + 1);
            break;
        }
    }
    Ok(out)
}

/// Recorded result of verifying one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CandidateOutcome {
    pub verified: bool,
    pub calls: u32,
    pub unknown: bool,
}

impl CandidateOutcome {
    pub fn from_verdict(v: &Verdict, calls: u32) -> Self {
        CandidateOutcome {
            verified: v.is_verified(),
            calls,
            unknown: matches!(v, Verdict::Unknown { .. }),
        }
    }
}

/// Sequential checking replayed from recorded outcomes.
pub fn replay(
    order: &[&str],
    outcomes: &BTreeMap<String, CandidateOutcome>,
) -> Result<(Option<usize>, u32), EvalError> {
    let mut calls = 0;
    for (i, id) in order.iter().enumerate() {
        let o = outcomes
            .get(*id)
            .ok_or_else(|| EvalError::MissingVerdict(id.to_string()))?;
        calls += o.calls;
        if o.verified {
            return Ok((Some(i + 1), calls));
        }
    }
    Ok((None, calls))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Permutations {
    Sampled {
        count: usize,
        seed: u64,
    },
    /// Every ordering once; for small candidate sets.
    Exhaustive,
}

/// Per-problem metrics; ranks are averages when permutations are involved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemResult {
    pub problem_id: String,
    /// `None` when no candidate verifies.
    pub rank: Option<f64>,
    /// Probability that a verified candidate is within the top k.
    pub top_k: BTreeMap<usize, f64>,
    pub solver_calls: f64,
    pub unknown: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Times>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Times {
    pub embed_s: f64,
    pub rank_s: f64,
    pub verify_s: f64,
}

impl Times {
    pub fn total(&self) -> f64 {
        self.embed_s + self.rank_s + self.verify_s
    }
}

impl ProblemResult {
    fn from_rank(problem_id: &str, rank: Option<usize>, calls: u32, ks: &[usize]) -> Self {
        ProblemResult {
            problem_id: problem_id.to_string(),
            rank: rank.map(|r| r as f64),
            top_k: ks
                .iter()
                .map(|&k| {
                    (
                        k,
                        if matches!(rank, Some(r) if r <= k) {
                            1.0
                        } else {
                            0.0
                        },
                    )
                })
                .collect(),
            solver_calls: calls as f64,
            unknown: false,
            times: None,
        }
    }
}

/// Averages rank and calls over random (or all) orderings of the candidates.
pub fn expected_metrics(
    problem_id: &str,
    outcomes: &[CandidateOutcome],
    perms: Permutations,
    ks: &[usize],
) -> Result<ProblemResult, EvalError> {
    let n = outcomes.len();
    let mut orders: Vec<Vec<usize>> = Vec::new();
    match perms {
        Permutations::Sampled { count, seed } => {
            if count == 0 {
                return Err(EvalError::NoPermutations);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..n).collect();
            for _ in 0..count {
                order.shuffle(&mut rng);
                orders.push(order.clone());
            }
        }
        Permutations::Exhaustive => {
            if n > MAX_EXACT_CANDIDATES {
                return Err(EvalError::TooManyForExact(n));
            }
            orders = (0..n).permutations(n).collect();
        }
    }
    let mut rank_sum = 0.0;
    let mut calls_sum = 0.0;
    let mut hits: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut any_verified = false;
    for order in &orders {
        let mut calls = 0;
        let mut rank = None;
        for (i, &j) in order.iter().enumerate() {
            calls += outcomes[j].calls;
            if outcomes[j].verified {
                rank = Some(i + 1);
                break;
            }
        }
        calls_sum += calls as f64;
        if let Some(r) = rank {
            any_verified = true;
            rank_sum += r as f64;
            for (k, h) in hits.iter_mut() {
                if r <= *k {
                    *h += 1.0;
                }
            }
        }
    }
    let p = orders.len() as f64;
    Ok(ProblemResult {
        problem_id: problem_id.to_string(),
        rank: any_verified.then(|| rank_sum / p),
        top_k: hits.into_iter().map(|(k, h)| (k, h / p)).collect(),
        solver_calls: calls_sum / p,
        unknown: outcomes.iter().any(|o| o.unknown),
        times: None,
    })
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeStats {
    pub embed_mean: f64,
    pub embed_median: f64,
    pub rank_mean: f64,
    pub rank_median: f64,
    pub verify_mean: f64,
    pub verify_median: f64,
    pub total_mean: f64,
    pub total_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub problems: usize,
    pub solved: usize,
    /// Over solved problems only.
    pub mean_rank: Option<f64>,
    pub median_rank: Option<f64>,
    /// Percentages.
    pub v_at_k: BTreeMap<usize, f64>,
    pub total_calls: f64,
    pub times: Option<TimeStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub per_problem: Vec<ProblemResult>,
    pub aggregate: Aggregate,
}

impl EvalMetrics {
    pub fn new(mut per_problem: Vec<ProblemResult>, ks: &[usize]) -> Self {
        per_problem.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
        let ranks: Vec<f64> = per_problem.iter().filter_map(|r| r.rank).collect();
        let n = per_problem.len();
        let v_at_k = ks
            .iter()
            .map(|&k| {
                let hits: f64 = per_problem
                    .iter()
                    .map(|r| r.top_k.get(&k).copied().unwrap_or(0.0))
                    .sum();
                (k, if n == 0 { 0.0 } else { 100.0 * hits / n as f64 })
            })
            .collect();
        let times: Vec<Times> = per_problem.iter().filter_map(|r| r.times).collect();
        let time_stats = (!times.is_empty() && times.len() == n).then(|| {
            let col = |f: fn(&Times) -> f64| times.iter().map(f).collect::<Vec<_>>();
            let (e, r, v, t) = (
                col(|t| t.embed_s),
                col(|t| t.rank_s),
                col(|t| t.verify_s),
                col(Times::total),
            );
            TimeStats {
                embed_mean: mean(&e).unwrap_or(0.0),
                embed_median: median(&e).unwrap_or(0.0),
                rank_mean: mean(&r).unwrap_or(0.0),
                rank_median: median(&r).unwrap_or(0.0),
                verify_mean: mean(&v).unwrap_or(0.0),
                verify_median: median(&v).unwrap_or(0.0),
                total_mean: mean(&t).unwrap_or(0.0),
                total_median: median(&t).unwrap_or(0.0),
            }
        });
        let aggregate = Aggregate {
            problems: n,
            solved: ranks.len(),
            mean_rank: mean(&ranks),
            median_rank: median(&ranks),
            v_at_k,
            total_calls: per_problem.iter().map(|r| r.solver_calls).sum(),
            times: time_stats,
        };
        EvalMetrics {
            per_problem,
            aggregate,
        }
    }

    pub fn any_unknown(&self) -> bool {
        self.per_problem.iter().any(|r| r.unknown)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    LlmOrder,
    Expected,
    Tfidf,
    RawEmbedding,
    Irank,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::LlmOrder,
        Strategy::Expected,
        Strategy::Tfidf,
        Strategy::RawEmbedding,
        Strategy::Irank,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::LlmOrder => "llm_order",
            Strategy::Expected => "expected",
            Strategy::Tfidf => "tfidf",
            Strategy::RawEmbedding => "raw_embedding",
            Strategy::Irank => "irank",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "llm" | "llm_order" => Ok(Strategy::LlmOrder),
            "expected" => Ok(Strategy::Expected),
            "tfidf" => Ok(Strategy::Tfidf),
            "raw" | "raw_embedding" => Ok(Strategy::RawEmbedding),
            "irank" => Ok(Strategy::Irank),
            _ => Err(format!("unknown strategy `{s}`")),
        }
    }
}

/// One problem's candidates and their recorded verification outcomes.
#[derive(Debug, Clone)]
pub struct EvalProblem {
    pub problem: Problem,
    pub candidates: Vec<InvariantCandidate>,
    pub outcomes: BTreeMap<String, CandidateOutcome>,
    /// Time spent verifying, when known.
    pub verify_time: Option<Duration>,
}

impl EvalProblem {
    /// Pairs a problem with outcomes recorded in `data`.
    pub fn from_dataset(
        problem: Problem,
        candidates: Vec<InvariantCandidate>,
        data: &LabeledDataset,
    ) -> Result<Self, EvalError> {
        let mut outcomes = BTreeMap::new();
        for r in data.records_for(&problem.id) {
            let calls = r
                .calls
                .ok_or_else(|| EvalError::MissingCalls(r.cand.clone()))?;
            outcomes.insert(
                r.cand.clone(),
                CandidateOutcome {
                    verified: r.label == Label::Pos,
                    calls,
                    unknown: r.label == Label::Unknown,
                },
            );
        }
        for c in &candidates {
            if !outcomes.contains_key(&c.id) {
                return Err(EvalError::MissingVerdict(c.id.clone()));
            }
        }
        // only meaningful when every candidate was timed
        let verify_time = candidates
            .iter()
            .map(|c| {
                data.records_for(&problem.id)
                    .find(|r| r.cand == c.id)
                    .and_then(|r| r.verify_us)
            })
            .sum::<Option<u64>>()
            .map(Duration::from_micros);
        Ok(EvalProblem {
            problem,
            candidates,
            outcomes,
            verify_time,
        })
    }
}

/// What a strategy may need besides the candidates.
pub struct EvalContext<'a> {
    pub embedder: Option<&'a dyn Embedder>,
    pub models: Option<&'a FoldModels>,
    pub ks: Vec<usize>,
    pub permutations: Permutations,
    pub timings: bool,
}

/// Orders a problem's candidates under `strategy`. `Expected` has no single
/// order and is handled by [`evaluate_problem`].
pub fn order_candidates(
    strategy: Strategy,
    ep: &EvalProblem,
    ctx: &EvalContext<'_>,
) -> Result<RankedList, EvalError> {
    let p = &ep.problem;
    let need_embedder = || {
        ctx.embedder
            .ok_or(EvalError::Rank(RankError::EmbeddingUnavailable(
                "no embedding provider configured".into(),
            )))
    };
    Ok(match strategy {
        Strategy::LlmOrder | Strategy::Expected => {
            RankedList::generation_order(&p.id, &ep.candidates)
        }
        Strategy::Tfidf => tfidf_rank(p, &ep.candidates),
        Strategy::RawEmbedding => rank(None, p, &ep.candidates, need_embedder()?)?,
        Strategy::Irank => {
            let models = ctx.models.ok_or(EvalError::Rank(RankError::Model(
                "no trained models loaded".into(),
            )))?;
            let net = models.for_problem(&p.id)?;
            rank(Some(net), p, &ep.candidates, need_embedder()?)?
        }
    })
}

pub fn evaluate_problem(
    strategy: Strategy,
    ep: &EvalProblem,
    ctx: &EvalContext<'_>,
) -> Result<ProblemResult, EvalError> {
    let id = &ep.problem.id;
    if ep.candidates.is_empty() {
        return Ok(ProblemResult::from_rank(id, None, 0, &ctx.ks));
    }
    let unknown = ep
        .candidates
        .iter()
        .any(|c| ep.outcomes.get(&c.id).is_some_and(|o| o.unknown));
    let started = Instant::now();
    let mut result = if strategy == Strategy::Expected {
        let outcomes = ep
            .candidates
            .iter()
            .map(|c| {
                ep.outcomes
                    .get(&c.id)
                    .copied()
                    .ok_or_else(|| EvalError::MissingVerdict(c.id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        expected_metrics(id, &outcomes, ctx.permutations, &ctx.ks)?
    } else {
        let rl = order_candidates(strategy, ep, ctx)?;
        let (rank, calls) = replay(&rl.ids(), &ep.outcomes)?;
        ProblemResult::from_rank(id, rank, calls, &ctx.ks)
    };
    result.unknown = unknown;
    if ctx.timings {
        // embedding and ranking share one call; attribute it to ranking for
        // strategies without an embedder
        let elapsed = started.elapsed().as_secs_f64();
        let embeds = matches!(strategy, Strategy::RawEmbedding | Strategy::Irank);
        result.times = Some(Times {
            embed_s: if embeds { elapsed } else { 0.0 },
            rank_s: if embeds { 0.0 } else { elapsed },
            verify_s: ep.verify_time.map_or(0.0, |d| d.as_secs_f64()),
        });
    }
    Ok(result)
}

pub fn evaluate(
    strategy: Strategy,
    problems: &[EvalProblem],
    ctx: &EvalContext<'_>,
) -> Result<EvalMetrics, EvalError> {
    let per_problem = problems
        .iter()
        .map(|ep| evaluate_problem(strategy, ep, ctx))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalMetrics::new(per_problem, &ctx.ks))
}

// --- reports ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(format!("unknown report format `{s}`")),
        }
    }
}

/// Aggregate metrics for several strategies over the same problems.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub ks: Vec<usize>,
    pub rows: Vec<(Strategy, Aggregate)>,
}

const TIME_COLUMNS: [&str; 8] = [
    "embed_s_mean",
    "embed_s_median",
    "rank_s_mean",
    "rank_s_median",
    "verify_s_mean",
    "verify_s_median",
    "total_s_mean",
    "total_s_median",
];

/// Fixed-precision rendering shared by every format.
fn num(x: Option<f64>) -> Option<String> {
    x.map(|v| format!("{v:.4}"))
}

impl Report {
    pub fn new(ks: &[usize]) -> Self {
        Report {
            ks: ks.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, s: Strategy, a: Aggregate) {
        self.rows.push((s, a));
    }

    fn with_times(&self) -> bool {
        self.rows.iter().any(|(_, a)| a.times.is_some())
    }

    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = ["strategy", "problems", "solved", "mean_rank", "median_rank"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        cols.extend(self.ks.iter().map(|k| format!("V@{k}")));
        cols.push("total_calls".into());
        if self.with_times() {
            cols.extend(TIME_COLUMNS.iter().map(|s| s.to_string()));
        }
        cols
    }

    /// Cell text per column; `None` for an undefined value.
    fn cells(&self, s: Strategy, a: &Aggregate) -> Vec<Option<String>> {
        let mut row = vec![
            Some(s.to_string()),
            Some(a.problems.to_string()),
            Some(a.solved.to_string()),
            num(a.mean_rank),
            num(a.median_rank),
        ];
        row.extend(self.ks.iter().map(|k| num(a.v_at_k.get(k).copied())));
        row.push(num(Some(a.total_calls)));
        if self.with_times() {
            let t = a.times;
            let vals = t.map(|t| {
                [
                    t.embed_mean,
                    t.embed_median,
                    t.rank_mean,
                    t.rank_median,
                    t.verify_mean,
                    t.verify_median,
                    t.total_mean,
                    t.total_median,
                ]
            });
            for i in 0..TIME_COLUMNS.len() {
                row.push(num(vals.map(|v| v[i])));
            }
        }
        row
    }

    pub fn render(&self, format: ReportFormat) -> String {
        let cols = self.columns();
        match format {
            ReportFormat::Csv => {
                let mut out = cols.join(",") + "\n";
                for (s, a) in &self.rows {
                    let cells: Vec<String> = self
                        .cells(*s, a)
                        .into_iter()
                        .map(Option::unwrap_or_default)
                        .collect();
                    out.push_str(&cells.join(","));
                    out.push('\n');
                }
                out
            }
            ReportFormat::Markdown => {
                let mut out = format!("| {} |\n", cols.join(" | "));
                out.push_str(&format!("|{}\n", "---|".repeat(cols.len())));
                for (s, a) in &self.rows {
                    let cells: Vec<String> = self
                        .cells(*s, a)
                        .into_iter()
                        .map(|c| c.unwrap_or_else(|| "-".into()))
                        .collect();
                    out.push_str(&format!("| {} |\n", cells.join(" | ")));
                }
                out
            }
            ReportFormat::Json => {
                let rows: Vec<serde_json::Value> = self
                    .rows
                    .iter()
                    .map(|(s, a)| {
                        let obj: serde_json::Map<String, serde_json::Value> = cols
                            .iter()
                            .zip(self.cells(*s, a))
                            .enumerate()
                            .map(|(i, (c, v))| {
                                let value = match v {
                                    None => serde_json::Value::Null,
                                    Some(t) if i == 0 => serde_json::Value::String(t),
                                    Some(t) => serde_json::from_str(&t).expect("numeric cell"),
                                };
                                (c.clone(), value)
                            })
                            .collect();
                        serde_json::Value::Object(obj)
                    })
                    .collect();
                let doc = serde_json::json!({ "columns": cols, "rows": rows });
                serde_json::to_string_pretty(&doc).expect("report serializes") + "\n"
            }
        }
    }

    pub fn write(&self, path: &Path, format: ReportFormat) -> Result<(), EvalError> {
        fs::write(path, self.render(format)).map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

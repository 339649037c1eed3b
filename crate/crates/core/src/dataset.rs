//! The labeled candidate dataset, fold assignment and corpus ingestion.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::fnv1a64;
use crate::sygus::{self, InvariantCandidate, Problem, Source, SygusError};
use crate::verifier::{Verdict, Verification};

pub const NUM_FOLDS: u8 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("problem id is empty")]
    EmptyId,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(transparent)]
    Sygus(#[from] SygusError),
    #[error("{path}: {message}")]
    Layout { path: String, message: String },
}

fn io_err(path: &Path, e: impl ToString) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Fold of a problem: FNV-1a 64 of the id, modulo 5.
pub fn assign_fold(problem_id: &str) -> Result<u8, DatasetError> {
    if problem_id.is_empty() {
        return Err(DatasetError::EmptyId);
    }
    Ok((fnv1a64(problem_id.as_bytes()) % u64::from(NUM_FOLDS)) as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Pos,
    Neg,
    Unknown,
}

impl Label {
    pub fn from_verdict(v: &Verdict) -> Self {
        match v {
            Verdict::Verified => Label::Pos,
            Verdict::Rejected { .. } => Label::Neg,
            Verdict::Unknown { .. } => Label::Unknown,
        }
    }

    /// Similarity target for training; `None` for unknown.
    pub fn target(self) -> Option<f64> {
        match self {
            Label::Pos => Some(1.0),
            Label::Neg => Some(0.0),
            Label::Unknown => None,
        }
    }
}

/// One labeled candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub problem: String,
    pub cand: String,
    pub source: Source,
    pub gen_index: usize,
    pub label: Label,
    pub text: String,
    /// Solver calls spent labeling this candidate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calls: Option<u32>,
    /// Wall-clock verification time in microseconds, when recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify_us: Option<u64>,
}

impl Record {
    pub fn new(c: &InvariantCandidate, v: &Verification) -> Self {
        Record {
            problem: c.problem_id.clone(),
            cand: c.id.clone(),
            source: c.source,
            gen_index: c.generation_index,
            label: Label::from_verdict(&v.verdict),
            text: c.raw_text.clone(),
            calls: Some(v.calls),
            verify_us: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledDataset {
    pub records: Vec<Record>,
    /// Problem text by id; needed to embed problems for training.
    pub problem_texts: BTreeMap<String, String>,
}

impl LabeledDataset {
    /// Validates ids and uniqueness of `(problem, source, gen_index)`.
    pub fn new(records: Vec<Record>) -> Result<Self, DatasetError> {
        let mut seen = BTreeSet::new();
        for (i, r) in records.iter().enumerate() {
            check_record(r, i + 1, &mut seen)?;
        }
        Ok(LabeledDataset {
            records,
            problem_texts: BTreeMap::new(),
        })
    }

    pub fn with_problems<'a>(mut self, problems: impl IntoIterator<Item = &'a Problem>) -> Self {
        for p in problems {
            self.problem_texts.insert(p.id.clone(), p.raw_text.clone());
        }
        self
    }

    pub fn problem_ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.problem.as_str()).collect()
    }

    pub fn fold_of(&self) -> BTreeMap<String, u8> {
        self.problem_ids()
            .into_iter()
            .map(|p| {
                (
                    p.to_string(),
                    assign_fold(p).expect("ids validated on construction"),
                )
            })
            .collect()
    }

    pub fn records_for<'a>(&'a self, problem: &'a str) -> impl Iterator<Item = &'a Record> + 'a {
        self.records.iter().filter(move |r| r.problem == problem)
    }

    /// Labeled (pos/neg) records of problems outside `fold`.
    pub fn training_records(&self, fold: u8) -> impl Iterator<Item = &Record> + '_ {
        self.records.iter().filter(move |r| {
            r.label != Label::Unknown && assign_fold(&r.problem).is_ok_and(|f| f != fold)
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, DatasetError> {
        let mut records = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: Record = serde_json::from_str(line).map_err(|e| DatasetError::Schema {
                line: i + 1,
                message: e.to_string(),
            })?;
            check_record(&r, i + 1, &mut seen)?;
            records.push(r);
        }
        Ok(LabeledDataset {
            records,
            problem_texts: BTreeMap::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        fs::write(path, self.to_jsonl()).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_jsonl(&text)
    }
}

fn check_record(
    r: &Record,
    line: usize,
    seen: &mut BTreeSet<(String, Source, usize)>,
) -> Result<(), DatasetError> {
    let schema = |message: String| Err(DatasetError::Schema { line, message });
    if r.problem.is_empty() {
        return schema("empty problem id".into());
    }
    if !seen.insert((r.problem.clone(), r.source, r.gen_index)) {
        return schema(format!(
            "duplicate candidate ({}, {}, {})",
            r.problem, r.source, r.gen_index
        ));
    }
    Ok(())
}

/// A benchmark directory: `problems/*.sl` and
/// `candidates/<problem>/<source>-<k>.inv`.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub problems: Vec<Problem>,
    /// Candidates per problem id, in (source, generation index) order.
    pub candidates: BTreeMap<String, Vec<InvariantCandidate>>,
}

impl Corpus {
    pub fn problem(&self, id: &str) -> Option<&Problem> {
        self.problems.iter().find(|p| p.id == id)
    }

    pub fn candidates_for(&self, id: &str) -> &[InvariantCandidate] {
        self.candidates.get(id).map(Vec::as_slice).unwrap_or(&[])
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>, DatasetError> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| io_err(dir, e)))
        .collect::<Result<_, _>>()?;
    out.sort();
    Ok(out)
}

/// Splits `llm_gpt4-3.inv` into its source and generation index.
pub fn parse_candidate_file_name(name: &str) -> Option<(Source, usize)> {
    let stem = name.strip_suffix(".inv")?;
    let (source, k) = stem.rsplit_once('-')?;
    Some((source.parse().ok()?, k.parse().ok()?))
}

/// Loads a benchmark directory. Candidate files that do not parse against
/// their problem are reported as errors.
pub fn load_corpus(root: &Path) -> Result<Corpus, DatasetError> {
    load_corpus_from(&root.join("problems"), &root.join("candidates"))
}

/// Like [`load_corpus`] with the two directories given separately. A missing
/// candidates directory yields problems without candidates.
pub fn load_corpus_from(problems: &Path, cand_root: &Path) -> Result<Corpus, DatasetError> {
    let mut corpus = Corpus::default();
    for path in sorted_entries(problems)? {
        if path.extension().and_then(|e| e.to_str()) == Some("sl") {
            corpus.problems.push(sygus::load_problem(&path)?);
        }
    }
    if !cand_root.is_dir() {
        return Ok(corpus);
    }
    for p in &corpus.problems {
        let dir = cand_root.join(&p.id);
        if !dir.is_dir() {
            continue;
        }
        let mut cands = Vec::new();
        for path in sorted_entries(&dir)? {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let Some((source, k)) = parse_candidate_file_name(&name) else {
                log::warn!("skipping {}: expected <source>-<k>.inv", path.display());
                continue;
            };
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let c =
                sygus::parse_candidate(&text, p, source, k).map_err(|e| DatasetError::Layout {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
            cands.push(c);
        }
        cands.sort_by_key(|c| (c.source, c.generation_index));
        corpus.candidates.insert(p.id.clone(), cands);
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(problem: &str, k: usize, label: Label) -> Record {
        Record {
            problem: problem.into(),
            cand: InvariantCandidate::make_id(problem, Source::LlmGpt4, k),
            source: Source::LlmGpt4,
            gen_index: k,
            label,
            text: format!("(<= x {k})"),
            calls: None,
            verify_us: None,
        }
    }

    #[test]
    fn folds_are_stable_and_balanced() {
        assert_eq!(
            assign_fold("cegar1").unwrap(),
            assign_fold("cegar1").unwrap()
        );
        assert_eq!(assign_fold(""), Err(DatasetError::EmptyId));
        let mut counts = [0usize; 5];
        for i in 0..1000 {
            counts[assign_fold(&format!("problem_{i}")).unwrap() as usize] += 1;
        }
        assert!(
            counts.iter().all(|&c| (150..=250).contains(&c)),
            "{counts:?}"
        );
    }

    #[test]
    fn jsonl_round_trip() {
        let mut r = rec("p1", 0, Label::Pos);
        r.calls = Some(3);
        let ds = LabeledDataset::new(vec![
            r,
            rec("p1", 1, Label::Neg),
            rec("p2", 0, Label::Unknown),
        ])
        .unwrap();
        let text = ds.to_jsonl();
        assert!(text.starts_with(
            "{\"problem\":\"p1\",\"cand\":\"p1/llm_gpt4-0\",\"source\":\"llm_gpt4\",\"gen_index\":0,\"label\":\"pos\""
        ));
        assert_eq!(LabeledDataset::from_jsonl(&text).unwrap(), ds);
    }

    #[test]
    fn duplicate_is_schema_error_at_line() {
        let ds = LabeledDataset {
            records: vec![
                rec("p", 0, Label::Pos),
                rec("p", 1, Label::Neg),
                rec("p", 1, Label::Pos),
            ],
            problem_texts: BTreeMap::new(),
        };
        match LabeledDataset::from_jsonl(&ds.to_jsonl()) {
            Err(DatasetError::Schema { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            LabeledDataset::from_jsonl("{\"problem\":1}"),
            Err(DatasetError::Schema { line: 1, .. })
        ));
    }

    #[test]
    fn training_records_exclude_fold_and_unknown() {
        let ids: Vec<String> = (0..30).map(|i| format!("q{i}")).collect();
        let records = ids
            .iter()
            .flat_map(|p| [rec(p, 0, Label::Pos), rec(p, 1, Label::Unknown)])
            .collect();
        let ds = LabeledDataset::new(records).unwrap();
        for fold in 0..NUM_FOLDS {
            for r in ds.training_records(fold) {
                assert_ne!(assign_fold(&r.problem).unwrap(), fold);
                assert_ne!(r.label, Label::Unknown);
            }
        }
        let folds = ds.fold_of();
        assert_eq!(folds.len(), 30);
    }

    #[test]
    fn candidate_file_names() {
        assert_eq!(
            parse_candidate_file_name("llm_gpt35-12.inv"),
            Some((Source::LlmGpt35, 12))
        );
        assert_eq!(
            parse_candidate_file_name("loopinvgen-0.inv"),
            Some((Source::Loopinvgen, 0))
        );
        assert_eq!(parse_candidate_file_name("gpt-x.inv"), None);
        assert_eq!(parse_candidate_file_name("llm_gpt4-1.txt"), None);
    }
}

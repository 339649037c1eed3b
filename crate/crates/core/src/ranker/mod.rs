//! Contrastively trained embedding transform and candidate reranking.

mod model;
mod net;
pub mod synthetic;
mod train;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use model::{
    load_model, model_file_name, model_from_json, model_to_json, save_model, write_training_log,
};
pub use net::{
    grad, loss, Activation, BatchGrad, Gradients, Layer, Pair, TransformNet, NUM_LAYERS,
};
pub use train::{build_pairs, lr_factor, train, train_pairs, Hyperparams, TrainedModel};

use crate::dataset::{assign_fold, DatasetError, NUM_FOLDS};
use crate::embeddings::{cosine_abs_slices, EmbedError, Embedder};
use crate::sygus::{InvariantCandidate, Problem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RankError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("transformed vector is zero")]
    ZeroVector,
    #[error("empty batch")]
    EmptyBatch,
    #[error("no positive and negative training pairs outside fold {fold}")]
    EmptyFoldComplement { fold: u8 },
    #[error("embedding unavailable: {0}")]
    EmbeddingUnavailable(String),
    #[error(transparent)]
    Embed(EmbedError),
    #[error("no candidates to rank")]
    NoCandidates,
    #[error("invalid model file: {0}")]
    Model(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("no model for fold {0}")]
    MissingFoldModel(u8),
    #[error("model for fold {expected} was trained with fold {found:?} held out")]
    FoldMismatch { expected: u8, found: Option<u8> },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl From<EmbedError> for RankError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Unavailable(t) => RankError::EmbeddingUnavailable(t),
            EmbedError::DimensionMismatch { expected, found } => {
                RankError::DimensionMismatch { expected, found }
            }
            other => RankError::Embed(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub candidate_id: String,
    /// Absolute cosine similarity, in `[0, 1]`.
    pub score: f64,
    pub generation_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub problem_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Sorts by score descending, ties by generation index ascending.
    pub fn new(problem_id: &str, mut entries: Vec<RankedEntry>) -> Self {
        entries.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.generation_index.cmp(&b.generation_index))
                .then_with(|| a.candidate_id.cmp(&b.candidate_id))
        });
        RankedList {
            problem_id: problem_id.to_string(),
            entries,
        }
    }

    /// Candidates in generation order with zero scores.
    pub fn generation_order(problem_id: &str, cands: &[InvariantCandidate]) -> Self {
        let mut entries: Vec<RankedEntry> = cands
            .iter()
            .map(|c| RankedEntry {
                candidate_id: c.id.clone(),
                score: 0.0,
                generation_index: c.generation_index,
            })
            .collect();
        entries.sort_by_key(|e| e.generation_index);
        RankedList {
            problem_id: problem_id.to_string(),
            entries,
        }
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries
            .iter()
            .map(|e| e.candidate_id.as_str())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Score of each candidate vector against the problem vector, optionally
/// after the transform. Pairs with a zero vector score 0.
pub fn score_vectors(
    net: Option<&TransformNet>,
    problem: &[f64],
    cands: &[&[f64]],
) -> Result<Vec<f64>, RankError> {
    let apply = |x: &[f64]| -> Result<Vec<f64>, RankError> {
        match net {
            Some(n) => n.forward(x),
            None => Ok(x.to_vec()),
        }
    };
    let x = apply(problem)?;
    cands
        .iter()
        .map(|y| {
            let y = apply(y)?;
            match cosine_abs_slices(&x, &y) {
                Ok(s) => Ok(s),
                Err(EmbedError::ZeroVector) => {
                    log::warn!("zero transformed vector; scoring 0");
                    Ok(0.0)
                }
                Err(e) => Err(e.into()),
            }
        })
        .collect()
}

/// Ranks candidates by similarity to the problem. `net = None` ranks by the
/// raw embeddings.
pub fn rank(
    net: Option<&TransformNet>,
    p: &Problem,
    cands: &[InvariantCandidate],
    embedder: &dyn Embedder,
) -> Result<RankedList, RankError> {
    if cands.is_empty() {
        return Err(RankError::NoCandidates);
    }
    if let Some(n) = net {
        if n.dim != embedder.dim() {
            return Err(RankError::DimensionMismatch {
                expected: n.dim,
                found: embedder.dim(),
            });
        }
    }
    let mut texts = vec![p.raw_text.as_str()];
    texts.extend(cands.iter().map(|c| c.raw_text.as_str()));
    let vecs = embedder.embed(&texts)?;
    let ys: Vec<&[f64]> = vecs[1..].iter().map(|v| v.values()).collect();
    let scores = score_vectors(net, vecs[0].values(), &ys)?;
    let entries = cands
        .iter()
        .zip(scores)
        .map(|(c, score)| RankedEntry {
            candidate_id: c.id.clone(),
            score,
            generation_index: c.generation_index,
        })
        .collect();
    Ok(RankedList::new(&p.id, entries))
}

/// One trained model per fold, each with that fold held out.
#[derive(Debug, Clone, Default)]
pub struct FoldModels {
    models: BTreeMap<u8, TransformNet>,
}

impl FoldModels {
    pub fn insert(&mut self, fold: u8, net: TransformNet) -> Result<(), RankError> {
        if net.held_out_fold != Some(fold) {
            return Err(RankError::FoldMismatch {
                expected: fold,
                found: net.held_out_fold,
            });
        }
        self.models.insert(fold, net);
        Ok(())
    }

    /// Loads every `model-fold<k>.json` present in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, RankError> {
        let mut out = FoldModels::default();
        for fold in 0..NUM_FOLDS {
            let path = dir.join(model_file_name(fold));
            if path.exists() {
                out.insert(fold, load_model(&path)?)?;
            }
        }
        Ok(out)
    }

    /// The model whose training excluded this problem's fold.
    pub fn for_problem(&self, problem_id: &str) -> Result<&TransformNet, RankError> {
        let fold = assign_fold(problem_id)?;
        let net = self
            .models
            .get(&fold)
            .ok_or(RankError::MissingFoldModel(fold))?;
        if net.held_out_fold != Some(fold) {
            return Err(RankError::FoldMismatch {
                expected: fold,
                found: net.held_out_fold,
            });
        }
        Ok(net)
    }

    pub fn folds(&self) -> impl Iterator<Item = u8> + '_ {
        self.models.keys().copied()
    }
}

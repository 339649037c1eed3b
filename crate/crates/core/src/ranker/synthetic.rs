//! Separable synthetic ranking data with a known answer.
//!
//! Each vector has `signal` dimensions followed by nuisance dimensions. A
//! problem's positive shares its signal direction up to small noise; its
//! negatives have signal orthogonal to it. Every vector carries a nuisance
//! part of fixed norm. The positive's is independent of the problem's, while
//! a fraction of the negatives copy the problem's nuisance (think of
//! candidates that echo the problem's surface text). Raw cosine similarity
//! therefore prefers those distractors; a learned transform can discard the
//! nuisance dimensions because their role is the same for every problem.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::net::{Pair, TransformNet};
use super::train::Hyperparams;
use super::{score_vectors, RankError};
use crate::dataset::assign_fold;
use crate::embeddings::norm;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub problems: usize,
    pub dim: usize,
    pub signal: usize,
    pub negatives: usize,
    /// Norm of every nuisance part, relative to the unit problem signal.
    pub nuisance_scale: f64,
    /// Probability that a negative copies the problem's nuisance.
    pub distractor_rate: f64,
    /// Norm of the jitter added to copied nuisance.
    pub distractor_jitter: f64,
    /// Range of the signal norm of negatives.
    pub negative_signal: (f64, f64),
    /// Norm of the perturbation added to positives' signal.
    pub positive_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            problems: 50,
            dim: 16,
            signal: 4,
            negatives: 10,
            nuisance_scale: 1.0,
            distractor_rate: 0.5,
            distractor_jitter: 0.1,
            negative_signal: (0.5, 1.5),
            positive_noise: 0.1,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProblem {
    pub id: String,
    pub fold: u8,
    pub problem: Vec<f64>,
    /// Candidate vectors; index 0 is the positive.
    pub candidates: Vec<Vec<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn scaled(mut v: Vec<f64>, len: f64) -> Vec<f64> {
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x *= len / n);
    v
}

pub fn generate(spec: &SyntheticSpec) -> Vec<SyntheticProblem> {
    assert!(
        spec.signal < spec.dim,
        "need at least one nuisance dimension"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let nd = spec.dim - spec.signal;
    let join = |signal: &[f64], nuisance: &[f64]| [signal, nuisance].concat();
    (0..spec.problems)
        .map(|i| {
            let id = format!("synthetic-{i:03}");
            let s = scaled(gaussian(&mut rng, spec.signal), 1.0);
            let own = scaled(gaussian(&mut rng, nd), spec.nuisance_scale);
            let problem = join(&s, &own);
            let noise = scaled(gaussian(&mut rng, spec.signal), spec.positive_noise);
            let pos: Vec<f64> = s.iter().zip(&noise).map(|(a, b)| a + b).collect();
            let mut candidates = vec![join(
                &pos,
                &scaled(gaussian(&mut rng, nd), spec.nuisance_scale),
            )];
            for _ in 0..spec.negatives {
                let mut r = gaussian(&mut rng, spec.signal);
                let along: f64 = r.iter().zip(&s).map(|(a, b)| a * b).sum();
                r.iter_mut().zip(&s).for_each(|(x, si)| *x -= along * si);
                let len = rng.gen_range(spec.negative_signal.0..=spec.negative_signal.1);
                let nuisance = if rng.gen_bool(spec.distractor_rate) {
                    let j = scaled(gaussian(&mut rng, nd), spec.distractor_jitter);
                    own.iter().zip(&j).map(|(a, b)| a + b).collect()
                } else {
                    scaled(gaussian(&mut rng, nd), spec.nuisance_scale)
                };
                candidates.push(join(&scaled(r, len), &nuisance));
            }
            SyntheticProblem {
                fold: assign_fold(&id).expect("non-empty id"),
                id,
                problem,
                candidates,
            }
        })
        .collect()
}

/// Training settings for this data: the default optimizer with a larger
/// learning rate and short warmup, since the set is far smaller than the
/// 500 warmup steps the defaults assume.
pub fn harness_hyperparams() -> Hyperparams {
    Hyperparams {
        learning_rate: 1e-2,
        warmup_steps: 10,
        ..Hyperparams::default()
    }
}

/// Training pairs from every problem outside `fold`.
pub fn pairs_outside(data: &[SyntheticProblem], fold: u8) -> Vec<Pair> {
    data.iter()
        .filter(|p| p.fold != fold)
        .flat_map(|p| {
            p.candidates.iter().enumerate().map(|(j, c)| Pair {
                problem: p.problem.clone(),
                candidate: c.clone(),
                label: if j == 0 { 1.0 } else { 0.0 },
            })
        })
        .collect()
}

/// 1-based rank of the positive under the given transform, with ties
/// resolved in candidate order as `RankedList` does.
pub fn positive_rank(net: Option<&TransformNet>, p: &SyntheticProblem) -> Result<usize, RankError> {
    let refs: Vec<&[f64]> = p.candidates.iter().map(Vec::as_slice).collect();
    let scores = score_vectors(net, &p.problem, &refs)?;
    Ok(1 + scores[1..].iter().filter(|s| **s > scores[0]).count())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessResult {
    /// Rank of each problem's positive, each under the model that held its
    /// fold out, in problem order.
    pub trained_ranks: Vec<usize>,
    pub raw_ranks: Vec<usize>,
    /// Per-fold epoch losses.
    pub fold_losses: Vec<Vec<f64>>,
}

/// Trains one model per fold and ranks every problem with the model that
/// excluded it.
pub fn run_harness(spec: &SyntheticSpec, hp: &Hyperparams) -> Result<HarnessResult, RankError> {
    let data = generate(spec);
    let mut trained = vec![0; data.len()];
    let mut fold_losses = Vec::new();
    for fold in 0..crate::dataset::NUM_FOLDS {
        let model = super::train_pairs(&pairs_outside(&data, fold), spec.dim, hp, Some(fold))?;
        for (i, p) in data.iter().enumerate().filter(|(_, p)| p.fold == fold) {
            assert_eq!(model.net.held_out_fold, Some(p.fold));
            trained[i] = positive_rank(Some(&model.net), p)?;
        }
        fold_losses.push(model.epoch_losses);
    }
    let raw_ranks = data
        .iter()
        .map(|p| positive_rank(None, p))
        .collect::<Result<_, _>>()?;
    Ok(HarnessResult {
        trained_ranks: trained,
        raw_ranks,
        fold_losses,
    })
}

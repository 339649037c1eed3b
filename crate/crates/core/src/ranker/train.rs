//! Adam training with decoupled weight decay, gradient clipping and a linear
//! warmup/decay schedule.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{grad, Pair, TransformNet};
use super::RankError;
use crate::dataset::{Label, LabeledDataset};
use crate::embeddings::Embedder;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            epochs: 20,
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.001,
            max_grad_norm: 1.0,
            warmup_steps: 500,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub net: TransformNet,
    /// Mean pair loss of each epoch, measured before each batch's update.
    pub epoch_losses: Vec<f64>,
}

/// Learning-rate multiplier for optimizer step `step` (0-based) out of
/// `total`. Warmup longer than the run is clipped to it.
pub fn lr_factor(step: usize, warmup: usize, total: usize) -> f64 {
    let warmup = warmup.min(total);
    if step < warmup {
        (step + 1) as f64 / warmup as f64
    } else if total > warmup {
        (total - step) as f64 / (total - warmup) as f64
    } else {
        1.0
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(net: &TransformNet) -> Self {
        let sizes: Vec<usize> = net
            .layers
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect();
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(
        &mut self,
        net: &mut TransformNet,
        g: &super::net::Gradients,
        lr: f64,
        hp: &Hyperparams,
    ) {
        self.t += 1;
        let c1 = 1.0 - hp.beta1.powi(self.t);
        let c2 = 1.0 - hp.beta2.powi(self.t);
        let params = net
            .layers
            .iter_mut()
            .flat_map(|l| [(&mut l.weight, true), (&mut l.bias, false)]);
        let grads = g.layers.iter().flat_map(|l| [&l.weight, &l.bias]);
        for (i, ((p, is_weight), g)) in params.zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * g[j];
                v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * g[j] * g[j];
                if is_weight {
                    p[j] -= lr * hp.weight_decay * p[j];
                }
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + hp.eps);
            }
        }
    }
}

/// Trains a fresh `dim`-dimensional net on `pairs`.
pub fn train_pairs(
    pairs: &[Pair],
    dim: usize,
    hp: &Hyperparams,
    held_out_fold: Option<u8>,
) -> Result<TrainedModel, RankError> {
    let mut net = TransformNet::new(dim, hp.seed);
    net.held_out_fold = held_out_fold;
    if hp.epochs == 0 {
        return Ok(TrainedModel {
            net,
            epoch_losses: Vec::new(),
        });
    }
    if pairs.is_empty() {
        return Err(RankError::EmptyBatch);
    }
    let batch_size = hp.batch_size.max(1);
    let steps_per_epoch = pairs.len().div_ceil(batch_size);
    let total = hp.epochs * steps_per_epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut adam = Adam::new(&net);
    let mut step = 0;
    let mut epoch_losses = Vec::with_capacity(hp.epochs);
    let mut batch = Vec::with_capacity(batch_size);
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut counted = 0usize;
        for chunk in order.chunks(batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| pairs[i].clone()));
            let mut bg = grad(&net, &batch)?;
            let used = batch.len() - bg.skipped;
            loss_sum += bg.mean_loss * used as f64;
            counted += used;
            bg.grads.clip(hp.max_grad_norm);
            let lr = hp.learning_rate * lr_factor(step, hp.warmup_steps, total);
            adam.step(&mut net, &bg.grads, lr, hp);
            step += 1;
        }
        let mean = if counted > 0 {
            loss_sum / counted as f64
        } else {
            0.0
        };
        log::debug!("epoch {}: mean loss {mean:.6}", epoch + 1);
        epoch_losses.push(mean);
    }
    if !net.is_finite() {
        return Err(RankError::Model(
            "training diverged to non-finite parameters".into(),
        ));
    }
    Ok(TrainedModel { net, epoch_losses })
}

fn intern<'a>(t: &'a str, texts: &mut Vec<&'a str>, index: &mut BTreeMap<&'a str, usize>) -> usize {
    *index.entry(t).or_insert_with(|| {
        texts.push(t);
        texts.len() - 1
    })
}

/// Embeds the labeled pairs of every problem outside `fold`.
pub fn build_pairs(
    data: &LabeledDataset,
    fold: u8,
    embedder: &dyn Embedder,
) -> Result<Vec<Pair>, RankError> {
    let records: Vec<_> = data.training_records(fold).collect();
    let has = |l: Label| records.iter().any(|r| r.label == l);
    if !has(Label::Pos) || !has(Label::Neg) {
        return Err(RankError::EmptyFoldComplement { fold });
    }
    let mut texts: Vec<&str> = Vec::new();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut slots = Vec::with_capacity(records.len());
    for r in &records {
        let ptext = data.problem_texts.get(&r.problem).ok_or_else(|| {
            RankError::EmbeddingUnavailable(format!("text of problem {}", r.problem))
        })?;
        let pi = intern(ptext, &mut texts, &mut index);
        let ci = intern(&r.text, &mut texts, &mut index);
        slots.push((
            pi,
            ci,
            r.label.target().expect("training records are labeled"),
        ));
    }
    let vecs = embedder.embed(&texts)?;
    Ok(slots
        .into_iter()
        .map(|(pi, ci, label)| Pair {
            problem: vecs[pi].values().to_vec(),
            candidate: vecs[ci].values().to_vec(),
            label,
        })
        .collect())
}

/// Trains the model for `fold` on all problems outside it.
pub fn train(
    data: &LabeledDataset,
    fold: u8,
    hp: &Hyperparams,
    embedder: &dyn Embedder,
) -> Result<TrainedModel, RankError> {
    let pairs = build_pairs(data, fold, embedder)?;
    log::info!("fold {fold}: training on {} pairs", pairs.len());
    train_pairs(&pairs, embedder.dim(), hp, Some(fold))
}

//! The square three-layer transform network and its gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RankError;
use crate::embeddings::{dot, norm};

pub const NUM_LAYERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// No nonlinearity; only useful for tests.
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// A `dim x dim` affine map, weights row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(dim: usize) -> Self {
        Layer {
            weight: vec![0.0; dim * dim],
            bias: vec![0.0; dim],
        }
    }

    fn identity(dim: usize) -> Self {
        let mut l = Layer::zeros(dim);
        for i in 0..dim {
            l.weight[i * dim + i] = 1.0;
        }
        l
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        self.weight
            .chunks_exact(d)
            .zip(&self.bias)
            .map(|(row, b)| dot(row, x) + b)
            .collect()
    }

    /// `W^T g`.
    fn back(&self, g: &[f64]) -> Vec<f64> {
        let d = g.len();
        let mut out = vec![0.0; d];
        for (row, gi) in self.weight.chunks_exact(d).zip(g) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * gi;
            }
        }
        out
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(&self.bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformNet {
    pub dim: usize,
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub seed: u64,
    /// Fold excluded from this model's training data.
    pub held_out_fold: Option<u8>,
}

/// Intermediate values of one forward pass.
struct Trace {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation outputs of the hidden layers.
    hidden_pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl TransformNet {
    /// Weights uniform in `(-1/sqrt(d), 1/sqrt(d))`, zero biases.
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "dimension must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dim as f64).sqrt();
        let layers = (0..NUM_LAYERS)
            .map(|_| Layer {
                weight: (0..dim * dim)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect(),
                bias: vec![0.0; dim],
            })
            .collect();
        TransformNet {
            dim,
            layers,
            activation: Activation::Relu,
            seed,
            held_out_fold: None,
        }
    }

    pub fn identity(dim: usize) -> Self {
        TransformNet {
            dim,
            layers: (0..NUM_LAYERS).map(|_| Layer::identity(dim)).collect(),
            activation: Activation::Identity,
            seed: 0,
            held_out_fold: None,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        TransformNet {
            dim,
            layers: (0..NUM_LAYERS).map(|_| Layer::zeros(dim)).collect(),
            activation: Activation::Relu,
            seed: 0,
            held_out_fold: None,
        }
    }

    pub fn num_params(&self) -> usize {
        NUM_LAYERS * (self.dim * self.dim + self.dim)
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Layer::params)
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), RankError> {
        if x.len() != self.dim {
            return Err(RankError::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut inputs = Vec::with_capacity(NUM_LAYERS);
        let mut hidden_pre = Vec::with_capacity(NUM_LAYERS - 1);
        let mut a = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&a);
            inputs.push(a);
            if k + 1 < NUM_LAYERS {
                a = z.iter().map(|&v| self.activation.apply(v)).collect();
                hidden_pre.push(z);
            } else {
                a = z;
            }
        }
        Trace {
            inputs,
            hidden_pre,
            output: a,
        }
    }

    /// `W3 act(W2 act(W1 x + b1) + b2) + b3`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, RankError> {
        self.check_dim(x)?;
        Ok(self.trace(x).output)
    }

    /// Accumulates `scale * d(out)/d(theta)^T g_out` into `grads`.
    fn backward(&self, t: &Trace, g_out: &[f64], scale: f64, grads: &mut Gradients) {
        let d = self.dim;
        let mut g = g_out.to_vec();
        for k in (0..NUM_LAYERS).rev() {
            let input = &t.inputs[k];
            let gl = &mut grads.layers[k];
            for (i, gi) in g.iter().enumerate() {
                let gi = gi * scale;
                gl.bias[i] += gi;
                let row = &mut gl.weight[i * d..(i + 1) * d];
                for (w, a) in row.iter_mut().zip(input) {
                    *w += gi * a;
                }
            }
            if k > 0 {
                let ga = self.layers[k].back(&g);
                g = ga
                    .iter()
                    .zip(&t.hidden_pre[k - 1])
                    .map(|(gv, z)| gv * self.activation.derivative(*z))
                    .collect();
            }
        }
    }
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros(dim: usize) -> Self {
        Gradients {
            layers: (0..NUM_LAYERS).map(|_| Layer::zeros(dim)).collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Layer::params)
    }

    pub fn global_norm(&self) -> f64 {
        self.values().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|g| *g *= s);
        }
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip(&mut self, max_norm: f64) -> f64 {
        let n = self.global_norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }
}

/// One training example: problem vector, candidate vector, label in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub problem: Vec<f64>,
    pub candidate: Vec<f64>,
    pub label: f64,
}

fn cosine_parts(u: &[f64], v: &[f64]) -> Result<(f64, f64, f64), RankError> {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(RankError::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv), nu, nv))
}

/// `(|cos(net(x), net(y))| - label)^2`.
pub fn loss(net: &TransformNet, x: &[f64], y: &[f64], label: f64) -> Result<f64, RankError> {
    let u = net.forward(x)?;
    let v = net.forward(y)?;
    let (c, _, _) = cosine_parts(&u, &v)?;
    Ok((c.abs() - label).powi(2))
}

fn accumulate_pair(
    net: &TransformNet,
    pair: &Pair,
    scale: f64,
    grads: &mut Gradients,
) -> Result<f64, RankError> {
    net.check_dim(&pair.problem)?;
    net.check_dim(&pair.candidate)?;
    let tu = net.trace(&pair.problem);
    let tv = net.trace(&pair.candidate);
    let (u, v) = (&tu.output, &tv.output);
    let (c, nu, nv) = cosine_parts(u, v)?;
    let a = c.abs();
    let sign = if c >= 0.0 { 1.0 } else { -1.0 };
    let dl_dc = 2.0 * (a - pair.label) * sign;
    let inv = 1.0 / (nu * nv);
    let g_u: Vec<f64> = u
        .iter()
        .zip(v)
        .map(|(ui, vi)| dl_dc * (vi * inv - c * ui / (nu * nu)))
        .collect();
    let g_v: Vec<f64> = u
        .iter()
        .zip(v)
        .map(|(ui, vi)| dl_dc * (ui * inv - c * vi / (nv * nv)))
        .collect();
    net.backward(&tu, &g_u, scale, grads);
    net.backward(&tv, &g_v, scale, grads);
    Ok((a - pair.label).powi(2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrad {
    pub mean_loss: f64,
    pub grads: Gradients,
    /// Pairs dropped because a transformed vector was zero.
    pub skipped: usize,
}

/// Exact gradient of the mean loss over the usable pairs of `batch`.
pub fn grad(net: &TransformNet, batch: &[Pair]) -> Result<BatchGrad, RankError> {
    if batch.is_empty() {
        return Err(RankError::EmptyBatch);
    }
    let mut usable = Vec::with_capacity(batch.len());
    for p in batch {
        net.check_dim(&p.problem)?;
        net.check_dim(&p.candidate)?;
        let u = net.forward(&p.problem)?;
        let v = net.forward(&p.candidate)?;
        if norm(&u) > 0.0 && norm(&v) > 0.0 {
            usable.push(p);
        }
    }
    let mut grads = Gradients::zeros(net.dim);
    let skipped = batch.len() - usable.len();
    if usable.is_empty() {
        return Ok(BatchGrad {
            mean_loss: 0.0,
            grads,
            skipped,
        });
    }
    let scale = 1.0 / usable.len() as f64;
    let mut total = 0.0;
    for p in usable {
        total += accumulate_pair(net, p, scale, &mut grads)?;
    }
    Ok(BatchGrad {
        mean_loss: total * scale,
        grads,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_net_is_identity() {
        let net = TransformNet::identity(4);
        let x = [0.5, -1.0, 2.0, 0.0];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn zero_weights_output_last_bias() {
        let mut net = TransformNet::zeros(3);
        net.layers[2].bias = vec![1.0, 2.0, 3.0];
        net.layers[0].bias = vec![7.0, 7.0, 7.0];
        assert_eq!(net.forward(&[9.0, 9.0, 9.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn seeded_init_is_stable() {
        let a = TransformNet::new(8, 42);
        let b = TransformNet::new(8, 42);
        assert_eq!(a, b);
        let x: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
        let ya: Vec<u64> = a.forward(&x).unwrap().iter().map(|v| v.to_bits()).collect();
        let yb: Vec<u64> = b.forward(&x).unwrap().iter().map(|v| v.to_bits()).collect();
        assert_eq!(ya, yb);
        assert_ne!(TransformNet::new(8, 43), a);
        let bound = 1.0 / 8f64.sqrt();
        assert!(a
            .layers
            .iter()
            .all(|l| l.weight.iter().all(|w| w.abs() < bound)));
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
    }

    #[test]
    fn dimension_checked() {
        let net = TransformNet::identity(3);
        assert_eq!(
            net.forward(&[1.0, 2.0]),
            Err(RankError::DimensionMismatch {
                expected: 3,
                found: 2
            })
        );
    }

    #[test]
    fn loss_examples() {
        let net = TransformNet::identity(2);
        assert_eq!(loss(&net, &[1.0, 0.0], &[2.0, 0.0], 1.0).unwrap(), 0.0);
        assert_eq!(loss(&net, &[1.0, 0.0], &[0.0, 3.0], 0.0).unwrap(), 0.0);
        // cos = 0.5 at 60 degrees
        let y = [0.5, 3f64.sqrt() / 2.0];
        assert!((loss(&net, &[1.0, 0.0], &y, 1.0).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(
            loss(&TransformNet::zeros(2), &[1.0, 0.0], &y, 1.0),
            Err(RankError::ZeroVector)
        );
    }

    #[test]
    fn duplicate_pairs_average_to_single_pair() {
        let net = TransformNet::new(6, 1);
        let p = Pair {
            problem: vec![0.3, -0.2, 0.9, 0.1, 0.0, 0.5],
            candidate: vec![-0.4, 0.8, 0.2, 0.3, 0.7, -0.1],
            label: 1.0,
        };
        let one = grad(&net, std::slice::from_ref(&p)).unwrap();
        let two = grad(&net, &[p.clone(), p]).unwrap();
        assert!((one.mean_loss - two.mean_loss).abs() < 1e-15);
        for (a, b) in one.grads.values().zip(two.grads.values()) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn gradient_vanishes_at_minimum() {
        let net = TransformNet::identity(4);
        let p = Pair {
            problem: vec![1.0, 2.0, -1.0, 0.5],
            candidate: vec![2.0, 4.0, -2.0, 1.0],
            label: 1.0,
        };
        let g = grad(&net, &[p]).unwrap();
        assert_eq!(g.mean_loss, 0.0);
        assert!(g.grads.global_norm() < 1e-8);
    }

    #[test]
    fn zero_outputs_are_skipped() {
        let net = TransformNet::zeros(2);
        let p = Pair {
            problem: vec![1.0, 0.0],
            candidate: vec![0.0, 1.0],
            label: 0.0,
        };
        let g = grad(&net, &[p]).unwrap();
        assert_eq!(g.skipped, 1);
        assert_eq!(g.grads.global_norm(), 0.0);
        assert_eq!(grad(&net, &[]), Err(RankError::EmptyBatch));
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = Gradients::zeros(2);
        g.layers[0].weight = vec![3.0, 4.0, 0.0, 0.0];
        assert_eq!(g.clip(1.0), 5.0);
        assert!(g.global_norm() <= 1.0 + 1e-12);
        let mut small = Gradients::zeros(2);
        small.layers[1].bias = vec![0.1, 0.0];
        small.clip(1.0);
        assert_eq!(small.layers[1].bias, vec![0.1, 0.0]);
    }
}

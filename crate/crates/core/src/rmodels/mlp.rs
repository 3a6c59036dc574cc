//! Two-hidden-layer tanh feed-forward scorer with manual backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// One output: a scalar reward.
    Scalar,
    /// One output: a directed pair logit g(ctx, s1, s2).
    PairLogit,
    /// Two outputs: μ and the raw (pre-softplus) σ.
    Gaussian,
}

impl Head {
    pub fn n_outputs(self) -> usize {
        match self {
            Head::Scalar | Head::PairLogit => 1,
            Head::Gaussian => 2,
        }
    }
}

/// Scorer weights, stored flat as `[W1, b1, W2, b2, W3, b3]` with row-major
/// matrices of shape (out, in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerParams {
    pub head: Head,
    pub in_dim: usize,
    pub hidden: [usize; 2],
    pub weights: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct Cache {
    x: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
}

/// Initial raw σ bias: softplus(raw) + 1e-3 = 1.
pub const SIGMA_RAW_INIT: f64 = 0.539_742_417_236_952_2;

impl ScorerParams {
    pub fn n_params_for(in_dim: usize, hidden: [usize; 2], head: Head) -> usize {
        let [h1, h2] = hidden;
        let o = head.n_outputs();
        h1 * in_dim + h1 + h2 * h1 + h2 + o * h2 + o
    }

    pub fn zeros(head: Head, in_dim: usize, hidden: [usize; 2]) -> Self {
        Self {
            head,
            in_dim,
            hidden,
            weights: vec![0.0; Self::n_params_for(in_dim, hidden, head)],
        }
    }

    /// Uniform Glorot initialisation; the σ output starts at 1.
    pub fn init(head: Head, in_dim: usize, hidden: [usize; 2], seed: u64) -> Self {
        let mut p = Self::zeros(head, in_dim, hidden);
        let mut r = rng::stream(seed, "scorer-init");
        let [h1, h2] = hidden;
        let o = head.n_outputs();
        let mut off = 0;
        for (fan_in, fan_out) in [(in_dim, h1), (h1, h2), (h2, o)] {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut p.weights[off..off + fan_in * fan_out] {
                *w = r.random_range(-a..a);
            }
            off += fan_in * fan_out + fan_out;
        }
        if head == Head::Gaussian {
            let n = p.weights.len();
            p.weights[n - 1] = SIGMA_RAW_INIT;
        }
        p
    }

    pub fn n_outputs(&self) -> usize {
        self.head.n_outputs()
    }

    fn offsets(&self) -> [usize; 6] {
        let [h1, h2] = self.hidden;
        let o = self.n_outputs();
        let w1 = 0;
        let b1 = w1 + h1 * self.in_dim;
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + o * h2;
        [w1, b1, w2, b2, w3, b3]
    }

    pub fn forward(&self, x: &[f64]) -> ([f64; 2], Cache) {
        debug_assert_eq!(x.len(), self.in_dim);
        let [h1n, h2n] = self.hidden;
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let w = &self.weights;
        let affine = |wo: usize, bo: usize, n_out: usize, input: &[f64]| -> Vec<f64> {
            let n_in = input.len();
            (0..n_out)
                .map(|j| {
                    let row = &w[wo + j * n_in..wo + (j + 1) * n_in];
                    w[bo + j] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect()
        };
        let h1: Vec<f64> = affine(w1, b1, h1n, x).into_iter().map(f64::tanh).collect();
        let h2: Vec<f64> = affine(w2, b2, h2n, &h1).into_iter().map(f64::tanh).collect();
        let o = affine(w3, b3, self.n_outputs(), &h2);
        let out = [o[0], o.get(1).copied().unwrap_or(0.0)];
        (out, Cache { x: x.to_vec(), h1, h2 })
    }

    pub fn output(&self, x: &[f64]) -> [f64; 2] {
        self.forward(x).0
    }

    /// Accumulate d(loss)/d(weights) into `grad` given d(loss)/d(outputs).
    pub fn backward(&self, cache: &Cache, dout: [f64; 2], grad: &mut [f64]) {
        let [h1n, h2n] = self.hidden;
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let w = &self.weights;
        let o = self.n_outputs();
        let mut dh2 = vec![0.0; h2n];
        for k in 0..o {
            let d = dout[k];
            if d == 0.0 {
                continue;
            }
            grad[b3 + k] += d;
            for j in 0..h2n {
                grad[w3 + k * h2n + j] += d * cache.h2[j];
                dh2[j] += d * w[w3 + k * h2n + j];
            }
        }
        let mut dh1 = vec![0.0; h1n];
        for j in 0..h2n {
            let dz = dh2[j] * (1.0 - cache.h2[j] * cache.h2[j]);
            grad[b2 + j] += dz;
            let row = w2 + j * h1n;
            for i in 0..h1n {
                grad[row + i] += dz * cache.h1[i];
                dh1[i] += dz * w[row + i];
            }
        }
        let n_in = self.in_dim;
        for j in 0..h1n {
            let dz = dh1[j] * (1.0 - cache.h1[j] * cache.h1[j]);
            if dz == 0.0 {
                continue;
            }
            grad[b1 + j] += dz;
            let row = w1 + j * n_in;
            for (g, xi) in grad[row..row + n_in].iter_mut().zip(&cache.x) {
                *g += dz * xi;
            }
        }
    }
}

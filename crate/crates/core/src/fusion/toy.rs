//! A two-objective toy environment with a known trade-off, for exercising
//! the tuner without running RL.

use rand_distr::{Distribution, Normal};

use super::{FusionWeights, Probe};
use crate::error::{Error, Result};
use crate::rng;

/// Component `j` drifts at rate `(A w)_j` per step plus Gaussian noise:
/// pushing one objective pulls the other down through the off-diagonal
/// entries of `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTrendProbe {
    pub a: Vec<Vec<f64>>,
    pub noise_sd: f64,
    pub seed: u64,
}

impl LinearTrendProbe {
    /// Gains `[[1, −0.5], [−0.8, 1]]`: both trends are non-negative only
    /// when `0.8 w₁ ≤ w₂ ≤ 2 w₁`.
    pub fn two_component(noise_sd: f64, seed: u64) -> Self {
        Self { a: vec![vec![1.0, -0.5], vec![-0.8, 1.0]], noise_sd, seed }
    }

    /// Expected per-step drift of every component under weights `w`.
    pub fn drift(&self, w: &[f64]) -> Vec<f64> {
        self.a.iter().map(|row| row.iter().zip(w).map(|(a, x)| a * x).sum()).collect()
    }
}

impl Probe for LinearTrendProbe {
    fn run(&mut self, w: &FusionWeights, round: usize, steps: usize) -> Result<Vec<Vec<f64>>> {
        if w.w.len() != self.a.len() {
            return Err(Error::invalid("toy probe dimension mismatch"));
        }
        let drift = self.drift(&w.w);
        let noise = Normal::new(0.0, self.noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
        let mut r = rng::stream_u64(rng::derive(self.seed, "toy-probe"), round as u64);
        Ok((0..steps)
            .map(|t| drift.iter().map(|d| d * t as f64 + noise.sample(&mut r)).collect())
            .collect())
    }
}

/// Grid search over the weight simplex for weights whose expected drifts
/// are all at least `-eps`; returns the first found.
pub fn feasible_on_simplex(probe: &LinearTrendProbe, eps: f64, grid: usize) -> Option<Vec<f64>> {
    (0..=grid).find_map(|i| {
        let w1 = i as f64 / grid as f64;
        let w = vec![w1, 1.0 - w1];
        probe.drift(&w).iter().all(|d| *d >= -eps).then_some(w)
    })
}

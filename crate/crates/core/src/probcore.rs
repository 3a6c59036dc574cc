//! Gaussian preference distributions.
//!
//! A suggestion is scored as `N(mu, sigma^2)`. The probability that one
//! suggestion beats another is the logistic-normal integral
//! `E[sigmoid(z)]`, `z ~ N(mu_w - mu_l, sigma_w^2 + sigma_l^2)`, which is
//! approximated in closed form through the probit link:
//!
//! ```text
//! p ~= sigmoid((mu_w - mu_l) / sqrt(1 + pi/8 * (sigma_w^2 + sigma_l^2)))
//! ```
//!
//! The Monte-Carlo estimator is kept alongside as the reference oracle.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::rng;

/// Smallest standard deviation any operation will work with.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// `pi / 8`, the squared probit-to-logit slope matching constant.
pub const PROBIT_SCALE: f64 = std::f64::consts::PI / 8.0;

/// A Gaussian preference score `N(mu, sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianScore {
    mu: f64,
    sigma: f64,
}

impl GaussianScore {
    /// Validates `sigma > 0` and finiteness; `sigma` is clamped to [`SIGMA_FLOOR`].
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::invalid(format!("mu must be finite, got {mu}")));
        }
        check_sigma(sigma)?;
        Ok(Self {
            mu,
            sigma: sigma.max(SIGMA_FLOOR),
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::invalid(format!(
            "sigma must be finite and positive, got {sigma}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    ClosedForm,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefProbEstimate {
    pub value: f64,
    pub method: EstimateMethod,
    /// Zero for the closed form.
    pub n_samples: u64,
    /// Only meaningful for Monte-Carlo estimates.
    pub seed: u64,
}

/// The argument of the sigmoid in the closed form.
pub fn closed_form_logit(w: &GaussianScore, l: &GaussianScore) -> f64 {
    (w.mu - l.mu) / (1.0 + PROBIT_SCALE * (w.variance() + l.variance())).sqrt()
}

pub fn pref_prob_closed(w: &GaussianScore, l: &GaussianScore) -> PrefProbEstimate {
    PrefProbEstimate {
        value: sigmoid(closed_form_logit(w, l)),
        method: EstimateMethod::ClosedForm,
        n_samples: 0,
        seed: 0,
    }
}

/// Monte-Carlo estimate of `E[sigmoid(z)]`.
///
/// Draws come from a ChaCha8 generator seeded with `seed` and the ziggurat
/// standard-normal sampler, so a given `(inputs, n, seed)` reproduces the
/// same value on every platform.
pub fn pref_prob_mc(
    w: &GaussianScore,
    l: &GaussianScore,
    n: u64,
    seed: u64,
) -> Result<PrefProbEstimate> {
    if n == 0 {
        return Err(Error::invalid("Monte-Carlo sample count must be >= 1"));
    }
    let mean = w.mu - l.mu;
    let sd = (w.variance() + l.variance()).sqrt();
    let mut rng = rng::from_seed(seed);
    let mut acc = 0.0;
    for _ in 0..n {
        let e: f64 = StandardNormal.sample(&mut rng);
        acc += sigmoid(mean + sd * e);
    }
    Ok(PrefProbEstimate {
        value: acc / n as f64,
        method: EstimateMethod::MonteCarlo,
        n_samples: n,
        seed,
    })
}

/// Overlap `integral sqrt(p_a p_b)` of two normals, in (0, 1].
pub fn bhattacharyya_coeff(a: &GaussianScore, b: &GaussianScore) -> f64 {
    let s2 = a.variance() + b.variance();
    let d = a.mu - b.mu;
    (2.0 * a.sigma * b.sigma / s2).sqrt() * (-d * d / (4.0 * s2)).exp()
}

/// `-ln BC`, evaluated term-wise so it stays exact when BC underflows.
pub fn bhattacharyya_dist(a: &GaussianScore, b: &GaussianScore) -> f64 {
    let s2 = a.variance() + b.variance();
    let d = a.mu - b.mu;
    let log_ratio = (2.0 * a.sigma * b.sigma / s2).ln();
    (d * d / (4.0 * s2) - 0.5 * log_ratio).max(0.0)
}

/// Uncertainty lower bound `(mu_w - mu_l)^2 / (4 (sigma_w + sigma_l)^2)`.
///
/// Never exceeds [`bhattacharyya_dist`] for the same pair.
pub fn ulb(w: &GaussianScore, l: &GaussianScore) -> f64 {
    let d = w.mu - l.mu;
    let s = w.sigma + l.sigma;
    d * d / (4.0 * s * s)
}

/// `sigma^2 - 2 ln sigma`; minimum 1 at sigma = 1.
pub fn variance_penalty(sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let s = sigma.max(SIGMA_FLOOR);
    Ok(s * s - 2.0 * s.ln())
}

/// KL(N(mu, sigma^2) || N(mu, 1)) = (sigma^2 - 1 - 2 ln sigma) / 2.
pub fn kl_gauss_to_unit(sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let s = sigma.max(SIGMA_FLOOR);
    Ok(0.5 * (s * s - 1.0 - 2.0 * s.ln()))
}

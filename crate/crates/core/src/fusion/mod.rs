//! Reward fusion: logistic-regression initial weights and Pareto-guided
//! multiplicative refinement.

pub mod toy;

use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot as dotp, log_sigmoid, ls_slope, sigmoid};
use crate::report::fmt_sig;
use crate::rng;
use crate::textrewards::{COMPONENT_NAMES, N_COMPONENTS};

pub const WEIGHTS_FORMAT: &str = "qsalign-fusion-weights";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    InitialLr,
    ParetoTuned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub w: Vec<f64>,
    pub lambda_l2: f64,
    pub provenance: Provenance,
}

impl FusionWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w.iter().any(|x| !x.is_finite()) || !(self.lambda_l2 >= 0.0) {
            return Err(Error::numeric("fusion weights must be finite with lambda_l2 >= 0"));
        }
        Ok(())
    }

    /// Check the weights line up with the reward components.
    pub fn validate_for_rewards(&self) -> Result<()> {
        self.validate()?;
        if self.w.len() != N_COMPONENTS {
            return Err(Error::config(format!(
                "fusion weights have {} entries, expected {N_COMPONENTS}",
                self.w.len()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate_for_rewards()?;
        let file = WeightsFile {
            format: WEIGHTS_FORMAT.into(),
            version: WEIGHTS_VERSION,
            components: COMPONENT_NAMES.iter().map(|s| s.to_string()).collect(),
            weights: self.clone(),
        };
        let s = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: WeightsFile = serde_json::from_str(&s)?;
        if f.format != WEIGHTS_FORMAT || f.version != WEIGHTS_VERSION {
            return Err(Error::data(format!("unsupported weights file {} v{}", f.format, f.version)));
        }
        if f.components.iter().map(String::as_str).ne(COMPONENT_NAMES.iter().copied()) {
            return Err(Error::data("weights file component names do not match the reward components"));
        }
        f.weights.validate_for_rewards()?;
        Ok(f.weights)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WeightsFile {
    format: String,
    version: u32,
    components: Vec<String>,
    weights: FusionWeights,
}

/// −mean log σ(wᵀΔ) + λ‖w‖².
pub fn fusion_objective(deltas: &[Vec<f64>], w: &[f64], lambda_l2: f64) -> f64 {
    let nll: f64 = deltas.iter().map(|d| -log_sigmoid(dotp(w, d))).sum::<f64>() / deltas.len() as f64;
    nll + lambda_l2 * w.iter().map(|x| x * x).sum::<f64>()
}

fn gradient_hessian(deltas: &[Vec<f64>], w: &[f64], lambda_l2: f64) -> (Vec<f64>, Vec<f64>) {
    let d = w.len();
    let n = deltas.len() as f64;
    let mut g: Vec<f64> = w.iter().map(|x| 2.0 * lambda_l2 * x).collect();
    let mut h = vec![0.0; d * d];
    for i in 0..d {
        h[i * d + i] = 2.0 * lambda_l2;
    }
    for x in deltas {
        let s = sigmoid(dotp(w, x));
        let c = -(1.0 - s) / n;
        let k = s * (1.0 - s) / n;
        for i in 0..d {
            g[i] += c * x[i];
            for j in 0..d {
                h[i * d + j] += k * x[i] * x[j];
            }
        }
    }
    (g, h)
}

/// Solve H x = g for symmetric positive-definite H (Cholesky).
fn solve_spd(h: &[f64], g: &[f64]) -> Option<Vec<f64>> {
    let d = g.len();
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = h[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    let mut y = vec![0.0; d];
    for i in 0..d {
        let s: f64 = (0..i).map(|k| l[i * d + k] * y[k]).sum();
        y[i] = (g[i] - s) / l[i * d + i];
    }
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let s: f64 = (i + 1..d).map(|k| l[k * d + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * d + i];
    }
    Some(x)
}

/// Logistic-regression fusion weights: minimise −mean log σ(wᵀΔ) + λ‖w‖²
/// over preference deltas Δ = r_w − r_l. Damped Newton steps of size `lr`
/// with backtracking, from a seeded small random start, until the gradient
/// norm is at most 1e-6 or `epochs` iterations have run.
pub fn fit_fusion_weights(deltas: &[Vec<f64>], lambda_l2: f64, lr: f64, epochs: usize, seed: u64) -> Result<FusionWeights> {
    let Some(first) = deltas.first() else {
        return Err(Error::invalid("fusion fit needs at least one delta"));
    };
    let d = first.len();
    if d == 0 || deltas.iter().any(|x| x.len() != d) {
        return Err(Error::invalid("fusion deltas must share one non-zero dimension"));
    }
    if deltas.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid("fusion deltas must be finite"));
    }
    if !(lambda_l2 >= 0.0) || !(lr > 0.0) {
        return Err(Error::invalid("fusion fit needs lambda_l2 >= 0 and lr > 0"));
    }
    let mut r = rng::stream(seed, "fusion/init");
    let init = Normal::new(0.0, 0.01).expect("valid normal");
    let mut w: Vec<f64> = (0..d).map(|_| init.sample(&mut r)).collect();
    let mut f = fusion_objective(deltas, &w, lambda_l2);
    for _ in 0..epochs {
        let (g, mut h) = gradient_hessian(deltas, &w, lambda_l2);
        if g.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1e-6 {
            break;
        }
        // A tiny ridge keeps the unregularised Hessian invertible.
        for i in 0..d {
            h[i * d + i] += 1e-10;
        }
        let dir = solve_spd(&h, &g).unwrap_or_else(|| g.clone());
        let slope: f64 = -dotp(&g, &dir);
        let mut step = lr;
        loop {
            let cand: Vec<f64> = w.iter().zip(&dir).map(|(x, p)| x - step * p).collect();
            let fc = fusion_objective(deltas, &cand, lambda_l2);
            if fc <= f + 1e-4 * step * slope || step < 1e-12 {
                if fc <= f {
                    w = cand;
                    f = fc;
                }
                break;
            }
            step *= 0.5;
        }
        if step < 1e-12 {
            break;
        }
    }
    let out = FusionWeights { w, lambda_l2, provenance: Provenance::InitialLr };
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParetoConfig {
    pub probe_steps: usize,
    pub window: usize,
    pub alpha_up: f64,
    pub alpha_down: f64,
    pub dominance_share: f64,
    pub max_rounds: usize,
    pub trend_epsilon: f64,
}

impl Default for ParetoConfig {
    fn default() -> Self {
        Self {
            probe_steps: 100,
            window: 50,
            alpha_up: 1.5,
            alpha_down: 0.75,
            dominance_share: 0.6,
            max_rounds: 10,
            trend_epsilon: 1e-3,
        }
    }
}

impl ParetoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probe_steps == 0 || self.window < 2 || self.max_rounds == 0 {
            return Err(Error::config("pareto probe_steps, max_rounds must be >= 1 and window >= 2"));
        }
        if !(self.alpha_up > 1.0) || !(self.alpha_down > 0.0 && self.alpha_down < 1.0) {
            return Err(Error::config("pareto needs alpha_up > 1 and alpha_down in (0, 1)"));
        }
        if !(self.dominance_share > 0.0 && self.dominance_share < 1.0) || !(self.trend_epsilon > 0.0) {
            return Err(Error::config("pareto needs dominance_share in (0, 1) and trend_epsilon > 0"));
        }
        Ok(())
    }
}

/// One tuning round: the weights probed and what was observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub weights: Vec<f64>,
    pub slopes: Vec<f64>,
    pub shares: Vec<f64>,
    pub raised: Vec<usize>,
    pub lowered: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoOutcome {
    pub weights: FusionWeights,
    pub converged: bool,
    pub rounds: Vec<RoundLog>,
}

/// Runs a short training under given weights and returns, per step, the
/// mean of every reward component.
pub trait Probe {
    fn run(&mut self, w: &FusionWeights, round: usize, steps: usize) -> Result<Vec<Vec<f64>>>;
}

impl<F> Probe for F
where
    F: FnMut(&FusionWeights, usize, usize) -> Result<Vec<Vec<f64>>>,
{
    fn run(&mut self, w: &FusionWeights, round: usize, steps: usize) -> Result<Vec<Vec<f64>>> {
        self(w, round, steps)
    }
}

/// Least-squares slope of each component over the last `window` steps,
/// oriented so that a positive slope always raises the fused reward
/// (a component with a negative weight improves as it falls).
pub fn oriented_slopes(series: &[Vec<f64>], w: &[f64], window: usize) -> Vec<f64> {
    let tail = &series[series.len().saturating_sub(window)..];
    (0..w.len())
        .map(|j| {
            let ys: Vec<f64> = tail.iter().map(|row| row[j]).collect();
            let s = if ys.len() < 2 { 0.0 } else { ls_slope(&ys) };
            if w[j] < 0.0 {
                -s
            } else if w[j] > 0.0 {
                s
            } else {
                0.0
            }
        })
        .collect()
}

/// Pareto-guided refinement: raise the weight of every component whose
/// trend falls, damp any component that accounts for more than
/// `dominance_share` of the fused improvement, and stop once no component
/// falls. Updates are multiplicative, so weight signs never change.
pub fn pareto_tune(w0: &FusionWeights, probe: &mut dyn Probe, cfg: &ParetoConfig) -> Result<ParetoOutcome> {
    cfg.validate()?;
    w0.validate()?;
    let mut w = w0.clone();
    let mut rounds = Vec::new();
    for round in 0..cfg.max_rounds {
        let series = probe
            .run(&w, round, cfg.probe_steps)
            .map_err(|e| Error::numeric(format!("pareto probe failed in round {round}: {e}")))?;
        if series.len() < 2 || series.iter().any(|row| row.len() != w.w.len()) {
            return Err(Error::data(format!(
                "pareto probe in round {round} returned {} steps of the wrong shape",
                series.len()
            )));
        }
        let slopes = oriented_slopes(&series, &w.w, cfg.window);
        let contrib: Vec<f64> = slopes.iter().zip(&w.w).map(|(s, x)| s * x.abs()).collect();
        let total: f64 = contrib.iter().sum();
        let shares: Vec<f64> = contrib.iter().map(|c| if total > 0.0 { c / total } else { 0.0 }).collect();
        let mut log = RoundLog {
            round,
            weights: w.w.clone(),
            slopes: slopes.clone(),
            shares: shares.clone(),
            raised: vec![],
            lowered: vec![],
        };
        if slopes.iter().all(|s| *s >= -cfg.trend_epsilon) {
            rounds.push(log);
            return Ok(ParetoOutcome { weights: w, converged: true, rounds });
        }
        for j in 0..w.w.len() {
            if slopes[j] < -cfg.trend_epsilon {
                w.w[j] *= cfg.alpha_up;
                log.raised.push(j);
            } else if total > 0.0 && shares[j] > cfg.dominance_share {
                w.w[j] *= cfg.alpha_down;
                log.lowered.push(j);
            }
        }
        w.provenance = Provenance::ParetoTuned;
        rounds.push(log);
    }
    Ok(ParetoOutcome { weights: w, converged: false, rounds })
}

/// Round-by-round tuning log as CSV (one row per round and component).
pub fn write_tuning_log<W: Write>(rounds: &[RoundLog], names: &[&str], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["round", "component", "weight", "slope", "share", "action"])?;
    for r in rounds {
        for (j, name) in names.iter().enumerate().take(r.weights.len()) {
            let action = if r.raised.contains(&j) {
                "raise"
            } else if r.lowered.contains(&j) {
                "lower"
            } else {
                "keep"
            };
            wr.write_record([
                r.round.to_string(),
                name.to_string(),
                fmt_sig(r.weights[j]),
                fmt_sig(r.slopes[j]),
                fmt_sig(r.shares[j]),
                action.to_string(),
            ])?;
        }
    }
    wr.flush().map_err(|e| Error::io("<tuning log>", e))?;
    Ok(())
}

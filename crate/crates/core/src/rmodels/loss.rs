//! Pairwise losses and their exact gradients.

use rayon::prelude::*;

use super::mlp::{Head, ScorerParams};
use super::TripletFeatures;
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::probcore::{GaussianScore, PROBIT_SCALE};

/// Offset added to softplus(raw) so the σ head is strictly positive.
pub const SIGMA_OFFSET: f64 = 1e-3;

/// Examples per gradient chunk; chunks are reduced in index order so results
/// do not depend on the number of worker threads.
const CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Bt,
    Paired,
    Garm { lambda: f64 },
}

impl LossKind {
    pub fn head(self) -> Head {
        match self {
            LossKind::Bt => Head::Scalar,
            LossKind::Paired => Head::PairLogit,
            LossKind::Garm { .. } => Head::Gaussian,
        }
    }
}

fn require_head(p: &ScorerParams, head: Head) -> Result<()> {
    if p.head != head {
        return Err(Error::config(format!("scorer has a {:?} head, expected {:?}", p.head, head)));
    }
    Ok(())
}

pub fn btrm_score(p: &ScorerParams, f: &[f64]) -> Result<f64> {
    require_head(p, Head::Scalar)?;
    Ok(p.output(f)[0])
}

pub fn pair_input(f_ctx: &[f64], f1: &[f64], f2: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(f_ctx.len() + f1.len() + f2.len());
    x.extend_from_slice(f_ctx);
    x.extend_from_slice(f1);
    x.extend_from_slice(f2);
    x
}

/// sigmoid(g(ctx, s1, s2) − g(ctx, s2, s1)); antisymmetric by construction.
pub fn pairedrm_prob(p: &ScorerParams, f_ctx: &[f64], f1: &[f64], f2: &[f64]) -> Result<f64> {
    require_head(p, Head::PairLogit)?;
    Ok(sigmoid(pairedrm_logit(p, f_ctx, f1, f2)))
}

pub fn pairedrm_logit(p: &ScorerParams, f_ctx: &[f64], f1: &[f64], f2: &[f64]) -> f64 {
    p.output(&pair_input(f_ctx, f1, f2))[0] - p.output(&pair_input(f_ctx, f2, f1))[0]
}

pub fn sigma_from_raw(raw: f64) -> f64 {
    softplus(raw) + SIGMA_OFFSET
}

pub fn garm_score(p: &ScorerParams, f: &[f64]) -> Result<GaussianScore> {
    require_head(p, Head::Gaussian)?;
    let [mu, raw] = p.output(f);
    GaussianScore::new(mu, sigma_from_raw(raw))
}

/// Per-example loss; accumulates the unnormalised gradient into `grad`.
fn example_loss_grad(p: &ScorerParams, t: &TripletFeatures, kind: LossKind, grad: &mut [f64]) -> f64 {
    match kind {
        LossKind::Bt => {
            let (sw, cw) = p.forward(&t.chosen);
            let (sl, cl) = p.forward(&t.rejected);
            let d = sw[0] - sl[0];
            let g = -sigmoid(-d);
            p.backward(&cw, [g, 0.0], grad);
            p.backward(&cl, [-g, 0.0], grad);
            softplus(-d)
        }
        LossKind::Paired => {
            let (a, ca) = p.forward(&pair_input(&t.ctx, &t.chosen, &t.rejected));
            let (b, cb) = p.forward(&pair_input(&t.ctx, &t.rejected, &t.chosen));
            let d = a[0] - b[0];
            let g = -sigmoid(-d);
            p.backward(&ca, [g, 0.0], grad);
            p.backward(&cb, [-g, 0.0], grad);
            softplus(-d)
        }
        LossKind::Garm { lambda } => {
            let (ow, cw) = p.forward(&t.chosen);
            let (ol, cl) = p.forward(&t.rejected);
            let (sw, sl) = (sigma_from_raw(ow[1]), sigma_from_raw(ol[1]));
            let dmu = ow[0] - ol[0];
            let s2 = 1.0 + PROBIT_SCALE * (sw * sw + sl * sl);
            let s = s2.sqrt();
            let z = dmu / s;
            let dz = -sigmoid(-z);
            // dz/dσ = −Δμ·k·σ / S³
            let dz_dsigma = -dmu * PROBIT_SCALE / (s2 * s);
            let dsw = dz * dz_dsigma * sw + lambda * (2.0 * sw - 2.0 / sw);
            let dsl = dz * dz_dsigma * sl + lambda * (2.0 * sl - 2.0 / sl);
            p.backward(&cw, [dz / s, dsw * sigmoid(ow[1])], grad);
            p.backward(&cl, [-dz / s, dsl * sigmoid(ol[1])], grad);
            let penalty = sw * sw - 2.0 * sw.ln() + sl * sl - 2.0 * sl.ln();
            softplus(-z) + lambda * penalty
        }
    }
}

/// Mean loss over `batch` and its exact gradient.
pub fn loss_grad(p: &ScorerParams, batch: &[&TripletFeatures], kind: LossKind) -> Result<(f64, Vec<f64>)> {
    require_head(p, kind.head())?;
    if batch.is_empty() {
        return Err(Error::invalid("loss over an empty batch"));
    }
    if let LossKind::Garm { lambda } = kind {
        if !(lambda >= 0.0) {
            return Err(Error::invalid("lambda_reg must be >= 0"));
        }
    }
    let n = p.weights.len();
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; n];
            let l: f64 = chunk.iter().map(|t| example_loss_grad(p, t, kind, &mut g)).sum();
            (l, g)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for (l, g) in parts {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((loss * inv, grad))
}

pub fn btrm_loss_grad(p: &ScorerParams, batch: &[&TripletFeatures]) -> Result<(f64, Vec<f64>)> {
    loss_grad(p, batch, LossKind::Bt)
}

pub fn pairedrm_loss_grad(p: &ScorerParams, batch: &[&TripletFeatures]) -> Result<(f64, Vec<f64>)> {
    loss_grad(p, batch, LossKind::Paired)
}

pub fn garm_loss_grad(p: &ScorerParams, batch: &[&TripletFeatures], lambda_reg: f64) -> Result<(f64, Vec<f64>)> {
    loss_grad(p, batch, LossKind::Garm { lambda: lambda_reg })
}

//! Reward models over (context, suggestion) features: Bradley-Terry,
//! antisymmetric paired, and Gaussian (GaRM) heads on a shared MLP body.

mod features;
mod loss;
mod mlp;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use features::{featurize_triplets, Featurizer, TripletFeatures};
pub use loss::{
    btrm_loss_grad, btrm_score, garm_loss_grad, garm_score, loss_grad, pair_input, pairedrm_logit,
    pairedrm_loss_grad, pairedrm_prob, sigma_from_raw, LossKind, SIGMA_OFFSET,
};
pub use mlp::{Cache, Head, ScorerParams, SIGMA_RAW_INIT};

use crate::clicksim::{Context, PreferenceTriplet, Suggestion};
use crate::error::{Error, Result};
use crate::optim::{clip_grad_norm, Adam};
use crate::probcore::GaussianScore;
use crate::rng;

pub const CHECKPOINT_FORMAT: &str = "qsalign-reward-model";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const HIDDEN: [usize; 2] = [32, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmKind {
    Bt,
    Paired,
    Garm,
}

impl RmKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RmKind::Bt => "bt",
            RmKind::Paired => "paired",
            RmKind::Garm => "garm",
        }
    }

    pub fn head(self) -> Head {
        match self {
            RmKind::Bt => Head::Scalar,
            RmKind::Paired => Head::PairLogit,
            RmKind::Garm => Head::Gaussian,
        }
    }

    pub fn loss(self, lambda_reg: f64) -> LossKind {
        match self {
            RmKind::Bt => LossKind::Bt,
            RmKind::Paired => LossKind::Paired,
            RmKind::Garm => LossKind::Garm { lambda: lambda_reg },
        }
    }
}

impl std::str::FromStr for RmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bt" => Ok(RmKind::Bt),
            "paired" => Ok(RmKind::Paired),
            "garm" => Ok(RmKind::Garm),
            other => Err(Error::config(format!("unknown reward model kind `{other}` (bt, paired, garm)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub grad_clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda_reg: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: Adam with a larger learning rate and smaller
    /// batches than the large-scale settings, suited to tens of thousands
    /// of triplets on one core.
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            grad_clip_norm: 1.0,
            batch_size: 128,
            epochs: 8,
            lambda_reg: 0.05,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Large-scale reward-model hyper-parameters (tiny learning rate, large
    /// batches); far too slow to move the model at desk scale.
    pub fn large_scale() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.99,
            beta2: 0.999,
            grad_clip_norm: 1.0,
            batch_size: 512,
            epochs: 1,
            lambda_reg: 0.05,
            weight_decay: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.lambda_reg >= 0.0
            && self.weight_decay >= 0.0
            && self.batch_size >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                "train config needs learning_rate > 0, 0 < beta1, beta2 < 1, lambda_reg >= 0, batch_size >= 1",
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: ScorerParams,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Gradient norm after clipping, per optimiser step.
    pub step_grad_norm: Vec<f64>,
}

/// Minibatch Adam over `data`, reshuffled each epoch from `cfg.seed`.
pub fn train(p: &ScorerParams, data: &[TripletFeatures], cfg: &TrainConfig, kind: LossKind) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("reward model training needs at least one triplet"));
    }
    if p.head != kind.head() {
        return Err(Error::config(format!("scorer head {:?} does not match the loss", p.head)));
    }
    let mut params = p.clone();
    let mut opt = Adam::new(params.weights.len(), cfg.learning_rate, cfg.beta1, cfg.beta2);
    opt.weight_decay = cfg.weight_decay;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut r = rng::stream(cfg.seed, "rm-train");
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut step_grad_norm = Vec::new();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TripletFeatures> = idx.iter().map(|&i| &data[i]).collect();
            let (loss, mut grad) = loss_grad(&params, &batch, kind)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::numeric(format!("non-finite loss at epoch {epoch}, step {step}")));
            }
            let pre = clip_grad_norm(&mut grad, cfg.grad_clip_norm);
            step_grad_norm.push(if cfg.grad_clip_norm > 0.0 { pre.min(cfg.grad_clip_norm) } else { pre });
            opt.step(&mut params.weights, &grad);
            total += loss * batch.len() as f64;
        }
        epoch_loss.push(total / data.len() as f64);
    }
    Ok(TrainOutcome { params, epoch_loss, step_grad_norm })
}

/// A trained scorer with the featurizer it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub kind: RmKind,
    pub featurizer: Featurizer,
    pub params: ScorerParams,
}

/// Pointwise reward output: μ and σ (σ = 0 for heads without one).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmOutput {
    pub mu: f64,
    pub sigma: f64,
}

impl RewardModel {
    pub fn init(kind: RmKind, featurizer: Featurizer, seed: u64) -> Self {
        let in_dim = match kind {
            RmKind::Paired => featurizer.ctx_dim + 2 * featurizer.dim,
            _ => featurizer.dim,
        };
        Self {
            kind,
            featurizer,
            params: ScorerParams::init(kind.head(), in_dim, HIDDEN, seed),
        }
    }

    /// Features of a context with no suggestion text, the reference
    /// opponent for pointwise paired scores.
    fn null_features(&self, ctx: &Context) -> Vec<f64> {
        let mut f = vec![0.0; self.featurizer.dim];
        let d = self.featurizer.dim;
        f[d - self.featurizer.ctx_dim..].copy_from_slice(&ctx.features);
        f
    }

    pub fn score_features(&self, ctx: &Context, f: &[f64]) -> Result<RmOutput> {
        match self.kind {
            RmKind::Bt => Ok(RmOutput { mu: btrm_score(&self.params, f)?, sigma: 0.0 }),
            RmKind::Garm => {
                let g = garm_score(&self.params, f)?;
                Ok(RmOutput { mu: g.mu(), sigma: g.sigma() })
            }
            RmKind::Paired => {
                let null = self.null_features(ctx);
                Ok(RmOutput { mu: pairedrm_logit(&self.params, &ctx.features, f, &null), sigma: 0.0 })
            }
        }
    }

    pub fn score_text(&self, ctx: &Context, text: &str) -> Result<RmOutput> {
        let f = self.featurizer.featurize_text(ctx, text)?;
        self.score_features(ctx, &f)
    }

    pub fn score(&self, ctx: &Context, s: &Suggestion) -> Result<RmOutput> {
        self.score_text(ctx, &s.text)
    }

    /// Signed preference margin for chosen over rejected.
    pub fn margin(&self, t: &TripletFeatures) -> Result<f64> {
        match self.kind {
            RmKind::Bt => Ok(btrm_score(&self.params, &t.chosen)? - btrm_score(&self.params, &t.rejected)?),
            RmKind::Garm => Ok(garm_score(&self.params, &t.chosen)?.mu() - garm_score(&self.params, &t.rejected)?.mu()),
            RmKind::Paired => Ok(pairedrm_prob(&self.params, &t.ctx, &t.chosen, &t.rejected)? - 0.5),
        }
    }

    pub fn gaussian_pair(&self, t: &TripletFeatures) -> Result<(GaussianScore, GaussianScore)> {
        Ok((garm_score(&self.params, &t.chosen)?, garm_score(&self.params, &t.rejected)?))
    }
}

/// Fraction of triplets ranked correctly; exact ties count one half.
pub fn rm_accuracy(model: &RewardModel, test: &[TripletFeatures]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("accuracy over an empty test set"));
    }
    let mut hits = 0.0;
    for t in test {
        let m = model.margin(t)?;
        hits += if m > 0.0 {
            1.0
        } else if m == 0.0 {
            0.5
        } else {
            0.0
        };
    }
    Ok(hits / test.len() as f64)
}

/// Stable fingerprint of a triplet dataset (FNV-1a over ids and texts).
pub fn data_fingerprint(triplets: &[PreferenceTriplet]) -> String {
    let mut h = 0u64;
    for t in triplets {
        let key = format!("{}\u{1f}{}\u{1f}{}\u{1f}{}", t.context_id, t.chosen_text, t.rejected_text, t.week);
        h = rng::splitmix64(h ^ rng::fnv1a(key.as_bytes()));
    }
    format!("{h:016x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmCheckpoint {
    pub format: String,
    pub version: u32,
    pub kind: RmKind,
    pub head: Head,
    pub in_dim: usize,
    pub hidden: [usize; 2],
    pub featurizer: Featurizer,
    pub lambda_reg: Option<f64>,
    pub train_config: TrainConfig,
    pub data_fingerprint: String,
    pub epoch_loss: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RmCheckpoint {
    pub fn new(model: &RewardModel, cfg: &TrainConfig, fingerprint: String, epoch_loss: Vec<f64>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: model.kind,
            head: model.params.head,
            in_dim: model.params.in_dim,
            hidden: model.params.hidden,
            featurizer: model.featurizer,
            lambda_reg: (model.kind == RmKind::Garm).then_some(cfg.lambda_reg),
            train_config: cfg.clone(),
            data_fingerprint: fingerprint,
            epoch_loss,
            weights: model.params.weights.clone(),
        }
    }

    pub fn model(&self) -> Result<RewardModel> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::data(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        if self.head != self.kind.head()
            || self.weights.len() != ScorerParams::n_params_for(self.in_dim, self.hidden, self.head)
        {
            return Err(Error::data("checkpoint architecture metadata does not match its weights"));
        }
        Ok(RewardModel {
            kind: self.kind,
            featurizer: self.featurizer,
            params: ScorerParams {
                head: self.head,
                in_dim: self.in_dim,
                hidden: self.hidden,
                weights: self.weights.clone(),
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

#[cfg(test)]
mod tests;

//! The toy suggestion policy, GRPO, SFT-analog fitting and RFT.

mod policy;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use policy::{
    build_inputs, enumerate_actions, greedy_action, item_dim, item_features, kl, kl_scores, logprob, logprob_scores,
    naturalness_index, refuse_dim, refuse_features, sample_action, Action, ActionTable, Policy, PolicyInputs,
    Scores, ITEM_HASH_BUCKETS, ITEM_SCALARS, REFUSE_BIAS_INIT,
};

use crate::clicksim::{sftdata, Context, ContextSet, DedupeConfig, ServingPolicy, Suggestion};
use crate::error::{Error, Result};
use crate::math::{mean, pop_std};
use crate::optim::{clip_grad_norm, Adam};
use crate::report::fmt_sig;
use crate::rmodels::RewardModel;
use crate::rng::{self, StreamRng};
use crate::textrewards::{RewardVector, COMPONENT_NAMES, N_COMPONENTS};

pub const POLICY_FORMAT: &str = "qsalign-policy";
pub const POLICY_VERSION: u32 = 1;

/// Policy the KL penalty is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// The rollout policy of the current step.
    #[default]
    Old,
    /// A frozen reference (the SFT policy).
    SftReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    /// (r − mean) / (std + 1e-8) within each group.
    #[default]
    Standardized,
    /// The raw fused reward.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub beta_kl: f64,
    pub clip_ratio: f64,
    pub learning_rate: f64,
    pub steps: usize,
    /// Contexts per step; 0 uses every context.
    pub contexts_per_step: usize,
    pub inner_epochs: usize,
    pub grad_clip_norm: f64,
    pub anchor: Anchor,
    pub advantage: AdvantageMode,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 10,
            beta_kl: 0.1,
            clip_ratio: 0.2,
            learning_rate: 0.05,
            steps: 200,
            contexts_per_step: 0,
            inner_epochs: 1,
            grad_clip_norm: 1.0,
            anchor: Anchor::Old,
            advantage: AdvantageMode::Standardized,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::config("grpo group_size must be >= 2"));
        }
        if !(self.beta_kl >= 0.0) || !(self.clip_ratio > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::config("grpo needs beta_kl >= 0, clip_ratio > 0, learning_rate > 0"));
        }
        if self.inner_epochs == 0 {
            return Err(Error::config("grpo inner_epochs must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub context_id: u64,
    pub action: Action,
    pub logprob_old: f64,
    pub reward: RewardVector,
}

/// The rollouts of one context under the old policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextGroup {
    pub ctx_index: usize,
    pub rollouts: Vec<Rollout>,
}

/// Draw `g` independent actions with their exact log-probabilities.
pub fn sample_group(p: &Policy, inp: &PolicyInputs, g: usize, seed: u64) -> Result<Vec<(Action, f64)>> {
    if inp.pool_size() < 3 {
        return Err(Error::invalid(format!("pool of {} cannot fill a triple", inp.pool_size())));
    }
    p.validate()?;
    let s = p.scores(inp);
    let table = ActionTable::new(&s);
    let mut r = rng::from_seed(seed);
    Ok((0..g)
        .map(|_| {
            let a = sample_action(&s, &mut r);
            (a, table.lp(&a))
        })
        .collect())
}

pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::invalid("group advantages need at least 2 rewards"));
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let m = mean(rewards);
    let sd = pop_std(rewards);
    Ok(rewards.iter().map(|r| (r - m) / (sd + 1e-8)).collect())
}

fn advantages(cfg: &GrpoConfig, rewards: &[f64]) -> Result<Vec<f64>> {
    match cfg.advantage {
        AdvantageMode::Standardized => group_advantages(rewards),
        AdvantageMode::Raw => Ok(rewards.to_vec()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SurrogateStats {
    pub objective: f64,
    pub kl: f64,
    pub clip_fraction: f64,
}

/// Clipped surrogate minus β·KL(π_θ ‖ anchor), averaged over contexts, and
/// its exact gradient with respect to the parameters of `p`.
pub fn surrogate(
    p: &Policy,
    anchor: &Policy,
    batch: &[ContextGroup],
    inputs: &[PolicyInputs],
    cfg: &GrpoConfig,
) -> Result<(SurrogateStats, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("grpo surrogate over an empty batch"));
    }
    let n_params = p.n_params();
    let parts: Vec<Result<(f64, f64, usize, usize, Vec<f64>)>> = batch
        .par_iter()
        .map(|grp| {
            let inp = &inputs[grp.ctx_index];
            let s = p.scores(inp);
            let table = ActionTable::new(&s);
            let rewards: Vec<f64> = grp.rollouts.iter().map(|r| r.reward.fused).collect();
            let adv = advantages(cfg, &rewards)?;
            let n = inp.pool_size();
            let g = grp.rollouts.len() as f64;
            let mut w3 = vec![0.0; n * n * n];
            let mut w_refuse = 0.0;
            let mut obj = 0.0;
            let mut clipped = 0;
            for (ro, a) in grp.rollouts.iter().zip(&adv) {
                let lp = table.lp(&ro.action);
                let ratio = (lp - ro.logprob_old).exp();
                let lo = 1.0 - cfg.clip_ratio;
                let hi = 1.0 + cfg.clip_ratio;
                let unclipped = ratio * a;
                let clipped_v = ratio.clamp(lo, hi) * a;
                obj += unclipped.min(clipped_v) / g;
                if ratio < lo || ratio > hi {
                    clipped += 1;
                }
                // The clipped branch is constant in θ.
                if unclipped > clipped_v {
                    continue;
                }
                let w = a * ratio / g;
                match ro.action {
                    Action::Refuse => w_refuse += w,
                    Action::Triple([i, j, k]) => w3[(i * n + j) * n + k] += w,
                }
            }
            let mut gi = vec![0.0; n];
            let mut gr = 0.0;
            table.accumulate_weighted_grad(w_refuse, &w3, &mut gi, &mut gr);
            let kl = if cfg.beta_kl > 0.0 {
                kl_scores(&s, &anchor.scores(inp), Some((&mut gi, &mut gr, -cfg.beta_kl)))
            } else {
                kl_scores(&s, &anchor.scores(inp), None)
            };
            let mut grad = vec![0.0; n_params];
            p.accumulate_param_grad(inp, &gi, gr, &mut grad);
            Ok((obj - cfg.beta_kl * kl, kl, clipped, grp.rollouts.len(), grad))
        })
        .collect();
    let mut stats = SurrogateStats::default();
    let mut grad = vec![0.0; n_params];
    let mut n_clipped = 0;
    let mut n_rollouts = 0;
    for part in parts {
        let (o, k, c, r, g) = part?;
        stats.objective += o;
        stats.kl += k;
        n_clipped += c;
        n_rollouts += r;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / batch.len() as f64;
    stats.objective *= inv;
    stats.kl *= inv;
    stats.clip_fraction = n_clipped as f64 / n_rollouts.max(1) as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((stats, grad))
}

/// One ascent step on the surrogate from `p`; `batch` must come from `p_old`.
pub fn grpo_step(
    p: &Policy,
    anchor: &Policy,
    batch: &[ContextGroup],
    inputs: &[PolicyInputs],
    cfg: &GrpoConfig,
    opt: &mut Adam,
) -> Result<(Policy, SurrogateStats)> {
    let (stats, mut grad) = surrogate(p, anchor, batch, inputs, cfg)?;
    if !stats.objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numeric("non-finite grpo surrogate"));
    }
    clip_grad_norm(&mut grad, cfg.grad_clip_norm);
    // Adam minimises; the surrogate is maximised.
    grad.iter_mut().for_each(|g| *g = -*g);
    let mut params = p.params();
    opt.step(&mut params, &grad);
    let mut next = p.clone();
    next.set_params(&params);
    next.validate()?;
    Ok((next, stats))
}

/// Reward of an action in the context at a given index.
pub type RewardFn<'a> = dyn Fn(usize, &Action) -> Result<RewardVector> + Sync + 'a;

/// Sample `group_size` rollouts per context from `p_old` and score them.
pub fn collect_groups(
    p_old: &Policy,
    inputs: &[PolicyInputs],
    ctx_indices: &[usize],
    reward_fn: &RewardFn<'_>,
    group_size: usize,
    seed: u64,
) -> Result<Vec<ContextGroup>> {
    ctx_indices
        .par_iter()
        .map(|&ci| {
            let inp = &inputs[ci];
            let acts = sample_group(p_old, inp, group_size, rng::derive_u64(seed, inp.context_id))?;
            let rollouts = acts
                .into_iter()
                .map(|(action, lp)| {
                    Ok(Rollout { context_id: inp.context_id, action, logprob_old: lp, reward: reward_fn(ci, &action)? })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ContextGroup { ctx_index: ci, rollouts })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub fused: f64,
    pub components: [f64; N_COMPONENTS],
    pub kl: f64,
    pub clip_fraction: f64,
    pub refusal_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrpoRun {
    pub policy: Policy,
    pub trace: Vec<TraceRow>,
}

/// GRPO from `init`, anchored to `reference` when the config asks for it.
pub fn train_grpo(
    init: &Policy,
    reference: &Policy,
    inputs: &[PolicyInputs],
    reward_fn: &RewardFn<'_>,
    cfg: &GrpoConfig,
) -> Result<GrpoRun> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::invalid("grpo needs at least one context"));
    }
    let mut p = init.clone();
    let mut opt = Adam::new(p.n_params(), cfg.learning_rate, 0.9, 0.999);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut pick = rng::stream(cfg.seed, "grpo/contexts");
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let ctx: Vec<usize> = if cfg.contexts_per_step == 0 || cfg.contexts_per_step >= inputs.len() {
            order.clone()
        } else {
            order.shuffle(&mut pick);
            let mut c = order[..cfg.contexts_per_step].to_vec();
            c.sort_unstable();
            c
        };
        let step_seed = rng::derive_u64(rng::derive(cfg.seed, "grpo/rollouts"), step as u64);
        let p_old = p.clone();
        let groups = collect_groups(&p_old, inputs, &ctx, reward_fn, cfg.group_size, step_seed)?;
        let anchor = match cfg.anchor {
            Anchor::Old => &p_old,
            Anchor::SftReference => reference,
        };
        let mut last = SurrogateStats::default();
        for _ in 0..cfg.inner_epochs {
            let (next, stats) = grpo_step(&p, anchor, &groups, inputs, cfg, &mut opt)
                .map_err(|e| Error::numeric(format!("grpo step {step}: {e}")))?;
            p = next;
            if last == SurrogateStats::default() {
                last = stats;
            }
        }
        trace.push(trace_row(step, &groups, last));
    }
    Ok(GrpoRun { policy: p, trace })
}

fn trace_row(step: usize, groups: &[ContextGroup], stats: SurrogateStats) -> TraceRow {
    let mut comp = [0.0; N_COMPONENTS];
    let mut fused = 0.0;
    let mut n = 0.0;
    let mut refusals = 0.0;
    for g in groups {
        for r in &g.rollouts {
            for (c, v) in comp.iter_mut().zip(r.reward.components()) {
                *c += v;
            }
            fused += r.reward.fused;
            if r.action == Action::Refuse {
                refusals += 1.0;
            }
            n += 1.0;
        }
    }
    comp.iter_mut().for_each(|c| *c /= n);
    TraceRow {
        step,
        fused: fused / n,
        components: comp,
        kl: stats.kl,
        clip_fraction: stats.clip_fraction,
        refusal_rate: refusals / n,
    }
}

pub fn write_trace<W: Write>(trace: &[TraceRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["step".to_string(), "fused".to_string()];
    header.extend(COMPONENT_NAMES.iter().map(|c| c.to_string()));
    header.extend(["kl", "clip_fraction", "refusal_rate"].map(String::from));
    wr.write_record(&header)?;
    for t in trace {
        let mut rec = vec![t.step.to_string(), fmt_sig(t.fused)];
        rec.extend(t.components.iter().map(|c| fmt_sig(*c)));
        rec.extend([fmt_sig(t.kl), fmt_sig(t.clip_fraction), fmt_sig(t.refusal_rate)]);
        wr.write_record(&rec)?;
    }
    wr.flush().map_err(|e| Error::io("<grpo trace>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self { epochs: 30, learning_rate: 0.05, batch_size: 32, seed: 0 }
    }
}

/// A supervised target: the action to imitate in the context at an index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftTarget {
    pub ctx_index: usize,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftOutcome {
    pub policy: Policy,
    /// Mean target log-probability after each epoch.
    pub epoch_logprob: Vec<f64>,
}

fn mean_target_logprob(p: &Policy, inputs: &[PolicyInputs], data: &[SftTarget]) -> f64 {
    let total: f64 = data
        .iter()
        .map(|t| logprob_scores(&p.scores(&inputs[t.ctx_index]), &t.action, None))
        .sum();
    total / data.len().max(1) as f64
}

/// Maximise the mean log-probability of the target actions with Adam.
pub fn sft_fit(p: &Policy, inputs: &[PolicyInputs], data: &[SftTarget], cfg: &SftConfig) -> Result<SftOutcome> {
    p.validate()?;
    for t in data {
        let inp = inputs
            .get(t.ctx_index)
            .ok_or_else(|| Error::invalid(format!("sft target context {} out of range", t.ctx_index)))?;
        logprob(p, inp, &t.action)?;
    }
    if cfg.epochs > 0 && (data.is_empty() || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0)) {
        return Err(Error::invalid("sft needs targets, batch_size >= 1 and learning_rate > 0"));
    }
    let mut policy = p.clone();
    let mut opt = Adam::new(policy.n_params(), cfg.learning_rate, 0.9, 0.999);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut r = rng::stream(cfg.seed, "sft");
    let mut epoch_logprob = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut r);
        for chunk in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; policy.n_params()];
            for &i in chunk {
                let t = &data[i];
                let inp = &inputs[t.ctx_index];
                let mut gi = vec![0.0; inp.pool_size()];
                let mut gr = 0.0;
                logprob_scores(&policy.scores(inp), &t.action, Some((&mut gi, &mut gr, -1.0 / chunk.len() as f64)));
                policy.accumulate_param_grad(inp, &gi, gr, &mut grad);
            }
            let mut params = policy.params();
            opt.step(&mut params, &grad);
            policy.set_params(&params);
        }
        policy.validate()?;
        epoch_logprob.push(mean_target_logprob(&policy, inputs, data));
    }
    Ok(SftOutcome { policy, epoch_logprob })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RftExample {
    pub context_id: u64,
    pub ctx_index: usize,
    pub action: Action,
    pub texts: Vec<String>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RftOutcome {
    pub dataset: Vec<RftExample>,
    pub dropped: usize,
    pub policy: Policy,
}

/// Rejection-sampling fine-tuning: sample `k` actions per context, rank the
/// distinct suggestions they contain by reward-model score, keep the top 3
/// after near-duplicate removal, and fit the policy to the result. A
/// context whose samples are mostly refusals keeps refusal as its target.
#[allow(clippy::too_many_arguments)]
pub fn rft_round(
    p: &Policy,
    rm: &RewardModel,
    set: &ContextSet,
    inputs: &[PolicyInputs],
    k: usize,
    dedupe: &DedupeConfig,
    sft: &SftConfig,
    seed: u64,
) -> Result<RftOutcome> {
    if inputs.len() != set.len() {
        return Err(Error::invalid("rft needs policy inputs for every context"));
    }
    if rm.params.head != rm.kind.head() {
        return Err(Error::config(format!("{} reward model has a {:?} head", rm.kind.as_str(), rm.params.head)));
    }
    if k == 0 {
        return Err(Error::invalid("rft needs k >= 1 samples per context"));
    }
    let item_scores = rm_item_scores(rm, set)?;
    let mut dataset = Vec::new();
    let mut dropped = 0;
    for (ci, inp) in inputs.iter().enumerate() {
        let samples = sample_group(p, inp, k, rng::derive_u64(rng::derive(seed, "rft"), inp.context_id))?;
        let refusals = samples.iter().filter(|(a, _)| *a == Action::Refuse).count();
        if 2 * refusals > samples.len() {
            dataset.push(RftExample {
                context_id: inp.context_id,
                ctx_index: ci,
                action: Action::Refuse,
                texts: vec![],
                scores: vec![],
            });
            continue;
        }
        let mut cand: Vec<usize> = samples
            .iter()
            .filter_map(|(a, _)| match a {
                Action::Triple(t) => Some(*t),
                Action::Refuse => None,
            })
            .flatten()
            .collect();
        cand.sort_unstable();
        cand.dedup();
        let scores = &item_scores[ci];
        let cand_scores: Vec<f64> = cand.iter().map(|&i| scores[i]).collect();
        let order: Vec<usize> = sftdata::rank_desc(&cand_scores).into_iter().map(|r| cand[r]).collect();
        let pool = &set.pools[ci];
        let kept = sftdata::dedupe_top_k(&order, |i| pool[i].text.as_str(), dedupe, 3);
        if kept.len() < 3 {
            dropped += 1;
            continue;
        }
        dataset.push(RftExample {
            context_id: inp.context_id,
            ctx_index: ci,
            action: Action::Triple([kept[0], kept[1], kept[2]]),
            texts: kept.iter().map(|&i| pool[i].text.clone()).collect(),
            scores: kept.iter().map(|&i| scores[i]).collect(),
        });
    }
    let targets: Vec<SftTarget> = dataset.iter().map(|e| SftTarget { ctx_index: e.ctx_index, action: e.action }).collect();
    let policy = if targets.is_empty() {
        p.clone()
    } else {
        sft_fit(p, inputs, &targets, sft)?.policy
    };
    Ok(RftOutcome { dataset, dropped, policy })
}

impl ServingPolicy for Policy {
    fn serve(&self, ctx: &Context, pool: &[Suggestion], r: &mut StreamRng) -> Option<[usize; 3]> {
        let inp = PolicyInputs::new(ctx, pool);
        match sample_action(&self.scores(&inp), r) {
            Action::Refuse => None,
            Action::Triple(t) => Some(t),
        }
    }
}

/// Reward-model mean score of every pool item, per context.
pub fn rm_item_scores(rm: &RewardModel, set: &ContextSet) -> Result<Vec<Vec<f64>>> {
    set.contexts
        .par_iter()
        .zip(&set.pools)
        .map(|(c, pool)| pool.iter().map(|s| Ok(rm.score(c, s)?.mu)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format: String,
    pub version: u32,
    pub stage: String,
    pub pool_fingerprint: String,
    pub policy: Policy,
}

/// Fingerprint of the candidate pools a policy was trained over.
pub fn pool_fingerprint(set: &ContextSet) -> String {
    let mut h = 0u64;
    for (c, pool) in set.contexts.iter().zip(&set.pools) {
        h = rng::splitmix64(h ^ c.id);
        for s in pool {
            h = rng::splitmix64(h ^ rng::fnv1a(s.text.as_bytes()));
        }
    }
    format!("{h:016x}")
}

impl PolicyCheckpoint {
    pub fn new(stage: &str, policy: &Policy, set: &ContextSet) -> Self {
        Self {
            format: POLICY_FORMAT.into(),
            version: POLICY_VERSION,
            stage: stage.into(),
            pool_fingerprint: pool_fingerprint(set),
            policy: policy.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&s)?;
        if ck.format != POLICY_FORMAT || ck.version != POLICY_VERSION {
            return Err(Error::data(format!("unsupported policy checkpoint {} v{}", ck.format, ck.version)));
        }
        ck.policy.validate()?;
        Ok(ck)
    }
}

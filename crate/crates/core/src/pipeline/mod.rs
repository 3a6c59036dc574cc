//! Run configuration and the end-to-end stages shared by the CLI and the
//! acceptance suite. Every stage seed is derived from the run seed.

pub mod artifacts;
mod rewards;

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use rewards::{reward_from_text, ContextRewards, RewardTable, RmScale};

use crate::clicksim::{
    assemble_sft_data, base_serve, curate_triplets, policy_shift, sample_contexts, simulate_logs, temporal_shift,
    ClickLogRecord, ContextSet, CurationMode, CurationStats, DedupeConfig, DriftConfig, PreferenceTriplet, SftAssembly,
    SourcePolicy, World, WorldConfig,
};
use crate::error::{Error, Result};
use crate::evalkit::{self, ctr_estimate, ctr_exact, AccuracyRow, CalibrationBin, CtrRow};
use crate::fusion::{fit_fusion_weights, pareto_tune, FusionWeights, ParetoConfig, ParetoOutcome};
use crate::grpo::{
    build_inputs, rft_round, sft_fit, train_grpo, Action, ActionTable, GrpoConfig, GrpoRun, Policy, PolicyInputs,
    RftOutcome, SftConfig, SftOutcome, SftTarget,
};
use crate::rmodels::{featurize_triplets, train, Featurizer, RewardModel, RmKind, TrainConfig, TrainOutcome};
use crate::rng;
use crate::textrewards::{
    composite_reward, DeterministicRubric, ReferenceModel, RewardContext, SuggestionGroup, N_COMPONENTS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogsConfig {
    /// Impressions served by the base policy over the training contexts.
    pub impressions: usize,
    pub curation: CurationMode,
}

impl Default for LogsConfig {
    fn default() -> Self {
        Self { impressions: 100_000, curation: CurationMode::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmStageConfig {
    pub feature_dim: usize,
    pub train: TrainConfig,
}

impl Default for RmStageConfig {
    fn default() -> Self {
        Self { feature_dim: 64, train: TrainConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceConfig {
    /// Add-k smoothing of the bigram reference model.
    pub add_k: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { add_k: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftStageConfig {
    /// Noise of the teacher's scores around ground-truth utility.
    pub teacher_noise_sd: f64,
    pub dedupe: DedupeConfig,
    pub fit: SftConfig,
}

impl Default for SftStageConfig {
    fn default() -> Self {
        Self { teacher_noise_sd: 1.0, dedupe: DedupeConfig::default(), fit: SftConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionStageConfig {
    pub lambda_l2: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Weight of a component whose preference deltas are all zero (the
    /// group-level components cannot be fitted from single suggestions).
    pub fallback: Vec<f64>,
    pub tune: bool,
    /// Contexts per probe step while tuning.
    pub probe_contexts: usize,
    pub pareto: ParetoConfig,
}

impl Default for FusionStageConfig {
    fn default() -> Self {
        Self {
            lambda_l2: 0.01,
            lr: 1.0,
            epochs: 100,
            fallback: vec![0.5, 0.0, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0],
            tune: true,
            probe_contexts: 50,
            pareto: ParetoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RftStageConfig {
    pub k: usize,
    pub dedupe: DedupeConfig,
    pub fit: SftConfig,
}

impl Default for RftStageConfig {
    fn default() -> Self {
        Self { k: 50, dedupe: DedupeConfig::default(), fit: SftConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub test_contexts: usize,
    pub test_impressions: usize,
    /// Weeks after training at which shifted test sets are drawn.
    pub weeks: Vec<u32>,
    /// Week of the contexts served by the RFT policy for the policy-shift set.
    pub policy_shift_week: u32,
    pub ctr_impressions: usize,
    pub calibration_bins: usize,
    pub min_bin_count: usize,
    pub useful_quantile: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            test_contexts: 200,
            test_impressions: 100_000,
            weeks: vec![1, 2, 3, 4],
            policy_shift_week: 4,
            ctr_impressions: 20_000,
            calibration_bins: 20,
            min_bin_count: 50,
            useful_quantile: 0.6,
        }
    }
}

/// A fully specified run. Only `seed` is required; every section falls
/// back to its defaults and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub drift: DriftConfig,
    #[serde(default)]
    pub logs: LogsConfig,
    #[serde(default)]
    pub rm: RmStageConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub sft: SftStageConfig,
    #[serde(default)]
    pub fusion: FusionStageConfig,
    #[serde(default)]
    pub grpo: GrpoConfig,
    #[serde(default)]
    pub rft: RftStageConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            world: WorldConfig::default(),
            drift: DriftConfig::default(),
            logs: LogsConfig::default(),
            rm: RmStageConfig::default(),
            reference: ReferenceConfig::default(),
            sft: SftStageConfig::default(),
            fusion: FusionStageConfig::default(),
            grpo: GrpoConfig::default(),
            rft: RftStageConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&s).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate().map_err(|e| Error::config(e.to_string()))?;
        self.rm.train.validate()?;
        self.grpo.validate()?;
        self.fusion.pareto.validate()?;
        Featurizer::new(self.rm.feature_dim, self.world.context_dim()).map_err(|e| Error::config(e.to_string()))?;
        if self.fusion.fallback.len() != N_COMPONENTS {
            return Err(Error::config(format!("fusion.fallback needs {N_COMPONENTS} entries")));
        }
        if self.logs.impressions == 0 || self.eval.test_contexts == 0 || self.eval.test_impressions == 0 {
            return Err(Error::config("logs.impressions, eval.test_contexts and eval.test_impressions must be >= 1"));
        }
        if self.eval.calibration_bins < 3 || !(0.0..=1.0).contains(&self.eval.useful_quantile) {
            return Err(Error::config("eval needs calibration_bins >= 3 and useful_quantile in [0, 1]"));
        }
        if !(self.sft.teacher_noise_sd >= 0.0) || !(self.reference.add_k >= 0.0) || self.rft.k == 0 {
            return Err(Error::config("sft.teacher_noise_sd and reference.add_k must be >= 0, rft.k >= 1"));
        }
        Ok(())
    }

    /// Fingerprint of the effective configuration.
    pub fn hash(&self) -> String {
        let s = self.to_toml().unwrap_or_default();
        format!("{:016x}", rng::fnv1a(s.as_bytes()))
    }

    /// Seed of a named stage.
    pub fn stage_seed(&self, label: &str) -> u64 {
        rng::derive(self.seed, label)
    }
}

/// The world and the base policy's click logs over its contexts.
pub struct Simulation {
    pub world: World,
    pub logs: Vec<ClickLogRecord>,
}

pub fn simulate(cfg: &RunConfig) -> Result<Simulation> {
    let world = crate::clicksim::gen_world(cfg.seed, &cfg.world)?;
    let logs = simulate_logs(
        &world.user_model,
        &world.contexts,
        &base_serve,
        SourcePolicy::Base,
        cfg.logs.impressions,
        cfg.stage_seed("logs/train"),
    )?;
    Ok(Simulation { world, logs })
}

/// Fresh base-served test triplets from a context set.
pub fn base_test_triplets(world: &World, set: &ContextSet, cfg: &RunConfig) -> Result<Vec<PreferenceTriplet>> {
    let logs = simulate_logs(
        &world.user_model,
        set,
        &base_serve,
        SourcePolicy::Base,
        cfg.eval.test_impressions,
        cfg.stage_seed(&format!("logs/{}", set.label)),
    )?;
    Ok(curate_triplets(&logs, set, cfg.logs.curation).0)
}

pub fn iid_contexts(world: &World, cfg: &RunConfig) -> ContextSet {
    sample_contexts(world, "iid-test", 0, cfg.eval.test_contexts, &cfg.drift)
}

pub fn week_contexts(world: &World, week: u32, cfg: &RunConfig) -> ContextSet {
    temporal_shift(world, week, cfg.eval.test_contexts, &cfg.drift)
}

/// Test triplets from week-`policy_shift_week` contexts served by `policy`.
pub fn policy_shift_triplets(world: &World, policy: &Policy, cfg: &RunConfig) -> Result<Vec<PreferenceTriplet>> {
    let (_, t, _) = policy_shift(
        world,
        policy,
        SourcePolicy::RftShifted,
        cfg.eval.policy_shift_week,
        cfg.eval.test_contexts,
        cfg.eval.test_impressions,
        &cfg.drift,
        cfg.stage_seed("logs/policy-shift"),
    )?;
    Ok(t)
}

pub fn featurizer(cfg: &RunConfig) -> Result<Featurizer> {
    Featurizer::new(cfg.rm.feature_dim, cfg.world.context_dim())
}

/// The training config of one reward-model kind, with its derived seed.
pub fn rm_train_config(cfg: &RunConfig, kind: RmKind) -> TrainConfig {
    TrainConfig { seed: cfg.stage_seed(&format!("rm/{}", kind.as_str())), ..cfg.rm.train.clone() }
}

pub fn train_reward_model(
    kind: RmKind,
    triplets: &[PreferenceTriplet],
    cfg: &RunConfig,
) -> Result<(RewardModel, TrainOutcome)> {
    let fz = featurizer(cfg)?;
    let tc = rm_train_config(cfg, kind);
    let feats = featurize_triplets(&fz, triplets)?;
    let model = RewardModel::init(kind, fz, tc.seed);
    let out = if tc.epochs == 0 {
        TrainOutcome { params: model.params.clone(), epoch_loss: vec![], step_grad_norm: vec![] }
    } else {
        train(&model.params, &feats, &tc, kind.loss(tc.lambda_reg))?
    };
    Ok((RewardModel { params: out.params.clone(), ..model }, out))
}

/// Reference language model over every suggestion the base policy served.
pub fn fit_reference(logs: &[ClickLogRecord], set: &ContextSet, cfg: &RunConfig) -> Result<ReferenceModel> {
    let mut corpus: Vec<&str> = Vec::with_capacity(3 * logs.len());
    for rec in logs {
        let ci = set
            .index_of(rec.context_id)
            .ok_or_else(|| Error::data(format!("log record for unknown context {}", rec.context_id)))?;
        corpus.extend(rec.triple.iter().map(|&i| set.pools[ci][i].text.as_str()));
    }
    ReferenceModel::fit(corpus, cfg.reference.add_k)
}

pub struct SftStage {
    pub assembly: SftAssembly,
    pub targets: Vec<SftTarget>,
    pub outcome: SftOutcome,
}

/// Teacher-ranked, de-duplicated triples (refusal on unsafe contexts),
/// fitted from the base policy.
pub fn sft_stage(world: &World, cfg: &RunConfig) -> Result<SftStage> {
    let set = &world.contexts;
    let um = &world.user_model;
    let noise = Normal::new(0.0, cfg.sft.teacher_noise_sd).map_err(|e| Error::config(e.to_string()))?;
    let mut r = rng::stream(cfg.seed, "sft/teacher");
    let teacher: Vec<Vec<f64>> = set
        .contexts
        .iter()
        .zip(&set.pools)
        .map(|(c, pool)| pool.iter().map(|s| um.utility(c, s) + noise.sample(&mut r)).collect())
        .collect();
    let assembly = assemble_sft_data(set, &teacher, &cfg.sft.dedupe)?;
    let mut targets: Vec<SftTarget> = assembly
        .examples
        .iter()
        .filter(|e| !set.contexts[e.context_index].is_unsafe)
        .map(|e| SftTarget { ctx_index: e.context_index, action: Action::Triple(e.triple) })
        .collect();
    targets.extend(
        set.contexts
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_unsafe)
            .map(|(ci, _)| SftTarget { ctx_index: ci, action: Action::Refuse }),
    );
    targets.sort_by_key(|t| t.ctx_index);
    let inputs = build_inputs(set);
    let base = Policy::base(cfg.world.embed_dim);
    let fit = SftConfig { seed: cfg.stage_seed("sft/fit"), ..cfg.sft.fit.clone() };
    let outcome = sft_fit(&base, &inputs, &targets, &fit)?;
    Ok(SftStage { assembly, targets, outcome })
}

/// Reward components of a single suggestion, for preference deltas.
fn single_components(
    t: &PreferenceTriplet,
    chosen: bool,
    rm: &RewardModel,
    scale: RmScale,
    rc: &RewardContext<'_>,
) -> Result<[f64; N_COMPONENTS]> {
    let s = if chosen { &t.chosen } else { &t.rejected };
    let sig = scale.signal(rm.score(&t.context, s)?);
    let g = SuggestionGroup::new([s.text.as_str()]);
    let v = composite_reward(&[0.0; N_COMPONENTS], rc, &t.context, &g, sig)?;
    Ok(v.components())
}

/// `r(chosen) − r(rejected)` for every triplet.
pub fn fusion_deltas(
    triplets: &[PreferenceTriplet],
    rm: &RewardModel,
    scale: RmScale,
    rc: &RewardContext<'_>,
) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    triplets
        .par_iter()
        .map(|t| {
            let w = single_components(t, true, rm, scale, rc)?;
            let l = single_components(t, false, rm, scale, rc)?;
            Ok(w.iter().zip(&l).map(|(a, b)| a - b).collect())
        })
        .collect()
}

/// Logistic-regression weights over the components that vary across
/// deltas; the rest take their configured fallback.
pub fn initial_weights(deltas: &[Vec<f64>], cfg: &RunConfig) -> Result<FusionWeights> {
    let active: Vec<usize> = (0..N_COMPONENTS).filter(|&j| deltas.iter().any(|d| d[j] != 0.0)).collect();
    let mut w = cfg.fusion.fallback.clone();
    if !active.is_empty() {
        let sub: Vec<Vec<f64>> = deltas.iter().map(|d| active.iter().map(|&j| d[j]).collect()).collect();
        let fit = fit_fusion_weights(&sub, cfg.fusion.lambda_l2, cfg.fusion.lr, cfg.fusion.epochs, cfg.stage_seed("fusion/fit"))?;
        for (k, &j) in active.iter().enumerate() {
            w[j] = fit.w[k];
        }
    }
    let out = FusionWeights { w, lambda_l2: cfg.fusion.lambda_l2, provenance: crate::fusion::Provenance::InitialLr };
    out.validate_for_rewards()?;
    Ok(out)
}

/// Short GRPO probes from `init` for the Pareto tuner.
pub fn tune_weights(
    w0: &FusionWeights,
    init: &Policy,
    inputs: &[PolicyInputs],
    table: &RewardTable,
    cfg: &RunConfig,
) -> Result<ParetoOutcome> {
    let mut probe = |w: &FusionWeights, round: usize, steps: usize| -> Result<Vec<Vec<f64>>> {
        let gc = GrpoConfig {
            steps,
            contexts_per_step: cfg.fusion.probe_contexts,
            seed: rng::derive_u64(cfg.stage_seed("fusion/probe"), round as u64),
            ..cfg.grpo.clone()
        };
        let reward = |ci: usize, a: &Action| table.reward(ci, a, &w.w);
        let run = train_grpo(init, init, inputs, &reward, &gc)?;
        Ok(run.trace.iter().map(|t| t.components.to_vec()).collect())
    };
    pareto_tune(w0, &mut probe, &cfg.fusion.pareto)
}

/// GRPO from `init` under fused `weights`; `label` names the seed stream.
pub fn grpo_stage(
    init: &Policy,
    inputs: &[PolicyInputs],
    table: &RewardTable,
    weights: &[f64],
    cfg: &RunConfig,
    label: &str,
) -> Result<GrpoRun> {
    let gc = GrpoConfig { seed: cfg.stage_seed(label), ..cfg.grpo.clone() };
    let reward = |ci: usize, a: &Action| table.reward(ci, a, weights);
    train_grpo(init, init, inputs, &reward, &gc)
}

pub fn rft_stage(init: &Policy, rm: &RewardModel, set: &ContextSet, cfg: &RunConfig) -> Result<RftOutcome> {
    let inputs = build_inputs(set);
    let fit = SftConfig { seed: cfg.stage_seed("rft/fit"), ..cfg.rft.fit.clone() };
    rft_round(init, rm, set, &inputs, cfg.rft.k, &cfg.rft.dedupe, &fit, cfg.stage_seed("rft/sample"))
}

/// Exact refusal probability averaged over unsafe contexts, and over safe ones.
pub fn refusal_rates(p: &Policy, set: &ContextSet) -> (f64, f64) {
    let (mut unsafe_sum, mut unsafe_n, mut safe_sum, mut safe_n) = (0.0, 0, 0.0, 0);
    for (c, pool) in set.contexts.iter().zip(&set.pools) {
        let inp = PolicyInputs::new(c, pool);
        let pr = ActionTable::new(&p.scores(&inp)).lp_refuse().exp();
        if c.is_unsafe {
            unsafe_sum += pr;
            unsafe_n += 1;
        } else {
            safe_sum += pr;
            safe_n += 1;
        }
    }
    let ratio = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    (ratio(unsafe_sum, unsafe_n), ratio(safe_sum, safe_n))
}

/// Expected reference log-probability of served suggestions (refusals
/// excluded), averaged over contexts.
pub fn mean_ref_logprob(p: &Policy, inputs: &[PolicyInputs], table: &RewardTable) -> f64 {
    let mut total = 0.0;
    for (ci, inp) in inputs.iter().enumerate() {
        let at = ActionTable::new(&p.scores(inp));
        let (mut acc, mut mass) = (0.0, 0.0);
        at.for_each(|a, lp| {
            if let Some(v) = table.ppl_of(ci, &a) {
                acc += lp.exp() * v;
                mass += lp.exp();
            }
        });
        total += if mass > 0.0 { acc / mass } else { 0.0 };
    }
    total / inputs.len() as f64
}

/// One row of the CTR table for a named policy.
#[allow(clippy::too_many_arguments)]
pub fn policy_row(
    name: &str,
    p: &Policy,
    world: &World,
    inputs: &[PolicyInputs],
    table: &RewardTable,
    safety_set: &ContextSet,
    cfg: &RunConfig,
) -> Result<CtrRow> {
    let exact = ctr_exact(p, &world.user_model, &world.contexts)?;
    let mc = if cfg.eval.ctr_impressions > 0 {
        Some(ctr_estimate(p, &world.user_model, &world.contexts, cfg.eval.ctr_impressions, cfg.stage_seed(&format!("ctr/{name}")))?)
    } else {
        None
    };
    let (refusal_accuracy, false_refusal_rate) = refusal_rates(p, safety_set);
    Ok(CtrRow {
        seed: cfg.seed,
        policy: name.into(),
        ctr_exact: exact,
        ctr_mc: mc.map_or(f64::NAN, |m| m.ctr),
        stderr: mc.map_or(f64::NAN, |m| m.stderr),
        impressions: mc.map_or(0, |m| m.impressions),
        refusal_accuracy,
        false_refusal_rate,
        mean_ref_logprob: mean_ref_logprob(p, inputs, table),
    })
}

/// Named weight vector with some components switched off.
pub fn ablate(weights: &[f64], drop: &[usize]) -> Vec<f64> {
    let mut w = weights.to_vec();
    for &j in drop {
        w[j] = 0.0;
    }
    w
}

pub const PPL_COMPONENT: usize = 6;
pub const RM_MU_COMPONENT: usize = 7;
pub const RM_SIGMA_COMPONENT: usize = 8;

/// Initial and tuned fusion weights.
pub struct FusionStage {
    pub initial: FusionWeights,
    pub tuning: Option<ParetoOutcome>,
    pub weights: FusionWeights,
}

/// Reward table over the training contexts, with the RM means standardised
/// over the same pools.
pub fn reward_table(world: &World, garm: &RewardModel, reference: &ReferenceModel) -> Result<RewardTable> {
    let rubric = DeterministicRubric::default();
    let rc = RewardContext { rubric: &rubric, reference };
    let scale = RmScale::fit(&world.contexts, garm)?;
    RewardTable::build(&world.contexts, garm, scale, &rc)
}

/// Logistic-regression fusion weights from the preference triplets,
/// optionally refined by Pareto tuning from `init`.
pub fn fusion_stage(
    triplets: &[PreferenceTriplet],
    garm: &RewardModel,
    reference: &ReferenceModel,
    table: &RewardTable,
    init: &Policy,
    inputs: &[PolicyInputs],
    cfg: &RunConfig,
) -> Result<FusionStage> {
    let rubric = DeterministicRubric::default();
    let rc = RewardContext { rubric: &rubric, reference };
    let deltas = fusion_deltas(triplets, garm, table.scale, &rc)?;
    let initial = initial_weights(&deltas, cfg)?;
    let tuning = if cfg.fusion.tune { Some(tune_weights(&initial, init, inputs, table, cfg)?) } else { None };
    let weights = tuning.as_ref().map_or_else(|| initial.clone(), |t| t.weights.clone());
    Ok(FusionStage { initial, tuning, weights })
}

/// Names of the ablated GRPO variants.
pub const ABLATIONS: [&str; 2] = ["no_ppl", "no_garm"];

/// Fused weights of a named ablation.
pub fn ablation_weights(weights: &[f64], name: &str) -> Result<Vec<f64>> {
    match name {
        "no_ppl" => Ok(ablate(weights, &[PPL_COMPONENT])),
        "no_garm" => Ok(ablate(weights, &[RM_MU_COMPONENT, RM_SIGMA_COMPONENT])),
        other => Err(Error::config(format!("unknown ablation `{other}` ({})", ABLATIONS.join(", ")))),
    }
}

/// GRPO seed stream shared by the full recipe and its ablations, so they
/// differ only in their weights.
pub const GRPO_STREAM: &str = "grpo/full";

/// Everything one seed of the full pipeline produces.
pub struct SeedRun {
    pub simulation: Simulation,
    pub triplets: Vec<PreferenceTriplet>,
    pub curation: CurationStats,
    pub reward_models: Vec<(RmKind, RewardModel, TrainOutcome)>,
    pub reference: ReferenceModel,
    pub sft: SftStage,
    pub fusion: FusionStage,
    pub grpo: GrpoRun,
    pub ablations: Vec<(String, GrpoRun)>,
    pub rft: RftOutcome,
    pub report: evalkit::EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Train BTRM and PairedRM as well, for the accuracy table.
    pub baselines: bool,
    /// Train the no-ppl and no-GaRM GRPO variants.
    pub ablations: bool,
}

impl RunOptions {
    pub fn full() -> Self {
        Self { baselines: true, ablations: true }
    }
}

/// Run every stage for `cfg.seed`.
pub fn run_seed(cfg: &RunConfig, opts: RunOptions) -> Result<SeedRun> {
    cfg.validate()?;
    let simulation = simulate(cfg)?;
    let world = &simulation.world;
    let (triplets, curation) = curate_triplets(&simulation.logs, &world.contexts, cfg.logs.curation);
    let kinds: &[RmKind] = if opts.baselines { &[RmKind::Garm, RmKind::Bt, RmKind::Paired] } else { &[RmKind::Garm] };
    let mut reward_models = Vec::new();
    for &k in kinds {
        let (m, out) = train_reward_model(k, &triplets, cfg)?;
        reward_models.push((k, m, out));
    }
    let garm = reward_models[0].1.clone();
    let reference = fit_reference(&simulation.logs, &world.contexts, cfg)?;

    let sft = sft_stage(world, cfg)?;
    let inputs = build_inputs(&world.contexts);
    let table = reward_table(world, &garm, &reference)?;
    let fusion = fusion_stage(&triplets, &garm, &reference, &table, &sft.outcome.policy, &inputs, cfg)?;
    let grpo = grpo_stage(&sft.outcome.policy, &inputs, &table, &fusion.weights.w, cfg, GRPO_STREAM)?;
    let mut ablations = Vec::new();
    if opts.ablations {
        for name in ABLATIONS {
            let w = ablation_weights(&fusion.weights.w, name)?;
            ablations.push((name.to_string(), grpo_stage(&sft.outcome.policy, &inputs, &table, &w, cfg, GRPO_STREAM)?));
        }
    }
    let rft = rft_stage(&sft.outcome.policy, &garm, &world.contexts, cfg)?;
    let models: Vec<(RmKind, &RewardModel)> = reward_models.iter().map(|(k, m, _)| (*k, m)).collect();
    let policies = EvalPolicies {
        sft: &sft.outcome.policy,
        grpo: &grpo.policy,
        rft: &rft.policy,
        ablations: ablations.iter().map(|(n, r)| (n.as_str(), &r.policy)).collect(),
    };
    let report = evaluate(cfg, world, &table, &models, &policies)?;
    Ok(SeedRun {
        triplets,
        curation,
        reward_models,
        reference,
        sft,
        fusion,
        grpo,
        ablations,
        rft,
        report,
        simulation,
    })
}

/// Accuracy of a reward model on the IID, weekly and policy-shifted sets.
pub fn shift_datasets(world: &World, rft_policy: &Policy, cfg: &RunConfig) -> Result<Vec<(String, Vec<PreferenceTriplet>)>> {
    let mut out = vec![("iid".to_string(), base_test_triplets(world, &iid_contexts(world, cfg), cfg)?)];
    for &w in &cfg.eval.weeks {
        out.push((format!("week{w}"), base_test_triplets(world, &week_contexts(world, w, cfg), cfg)?));
    }
    out.push((format!("week{}_rft", cfg.eval.policy_shift_week), policy_shift_triplets(world, rft_policy, cfg)?));
    Ok(out)
}

/// The trained policies an evaluation compares.
pub struct EvalPolicies<'a> {
    pub sft: &'a Policy,
    pub grpo: &'a Policy,
    pub rft: &'a Policy,
    pub ablations: Vec<(&'a str, &'a Policy)>,
}

/// CTR and safety per policy, reward-model accuracy under shift, GaRM
/// calibration and the GSB proxy. The first reward model must be GaRM.
pub fn evaluate(
    cfg: &RunConfig,
    world: &World,
    table: &RewardTable,
    reward_models: &[(RmKind, &RewardModel)],
    policies: &EvalPolicies<'_>,
) -> Result<evalkit::EvalReport> {
    let Some(&(RmKind::Garm, garm)) = reward_models.first() else {
        return Err(Error::config("evaluation needs the GaRM reward model first"));
    };
    let inputs = build_inputs(&world.contexts);
    let safety_set = iid_contexts(world, cfg);
    let base = Policy::base(cfg.world.embed_dim);
    let mut report = evalkit::EvalReport { seeds: vec![cfg.seed], config_hash: cfg.hash(), ..Default::default() };
    let mut named: Vec<(&str, &Policy)> =
        vec![("base", &base), ("sft", policies.sft), ("grpo", policies.grpo), ("rft", policies.rft)];
    named.extend(policies.ablations.iter().copied());
    for (name, p) in &named {
        report.ctr.push(policy_row(name, p, world, &inputs, table, &safety_set, cfg)?);
    }

    let datasets = shift_datasets(world, policies.rft, cfg)?;
    let fz = featurizer(cfg)?;
    let feats: Vec<(String, Vec<crate::rmodels::TripletFeatures>)> = datasets
        .iter()
        .map(|(n, t)| Ok((n.clone(), featurize_triplets(&fz, t)?)))
        .collect::<Result<_>>()?;
    for (kind, model) in reward_models {
        for row in evalkit::ood_eval(model, &feats)? {
            report.accuracy.push(evalkit::RmRow { seed: cfg.seed, model: kind.as_str().into(), row });
        }
    }
    let bins = evalkit::calibration_bins(garm, &feats[0].1, cfg.eval.calibration_bins, cfg.eval.min_bin_count)?;
    report.calibration.extend(
        bins.into_iter().enumerate().map(|(bin, bin_data)| evalkit::BinRow { seed: cfg.seed, bin, bin_data }),
    );
    let thr = evalkit::useful_threshold(&world.user_model, &world.contexts, cfg.eval.useful_quantile)?;
    let sft_groups = evalkit::greedy_groups(policies.sft, &world.contexts);
    for (name, p) in [("grpo", policies.grpo), ("rft", policies.rft)] {
        let g = evalkit::greedy_groups(p, &world.contexts);
        report.gsb.push(evalkit::GsbRow {
            seed: cfg.seed,
            candidate: name.into(),
            baseline: "sft".into(),
            contexts: world.contexts.len(),
            gsb: evalkit::gsb_proxy(&g, &sft_groups, &world.contexts, &world.user_model, thr)?,
        });
    }
    Ok(report)
}

/// Accuracy rows of one model, keyed by dataset name.
pub fn accuracy_of<'a>(report: &'a evalkit::EvalReport, model: &str) -> Vec<&'a AccuracyRow> {
    report.accuracy.iter().filter(|r| r.model == model).map(|r| &r.row).collect()
}

/// Calibration bins of one seed.
pub fn bins_of(report: &evalkit::EvalReport, seed: u64) -> Vec<CalibrationBin> {
    report.calibration.iter().filter(|b| b.seed == seed).map(|b| b.bin_data).collect()
}

/// The CTR row of a named policy.
pub fn ctr_of<'a>(report: &'a evalkit::EvalReport, policy: &str) -> Option<&'a CtrRow> {
    report.ctr.iter().find(|r| r.policy == policy)
}

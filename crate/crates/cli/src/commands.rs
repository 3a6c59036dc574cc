use std::path::{Path, PathBuf};

use qsalign::clicksim::{curate_triplets, ClickLogRecord, PreferenceTriplet, World};
use qsalign::evalkit;
use qsalign::fusion::{write_tuning_log, FusionWeights};
use qsalign::grpo::{build_inputs, pool_fingerprint, write_trace, Policy, PolicyCheckpoint};
use qsalign::pipeline::artifacts::{self as art, write_seed_run, RunDir};
use qsalign::pipeline::{
    ablation_weights, evaluate, fit_reference, fusion_stage, grpo_stage, reward_table, rft_stage, rm_train_config,
    run_seed, sft_stage, simulate as simulate_stage, train_reward_model, EvalPolicies, RunConfig,
    RunOptions, ABLATIONS, GRPO_STREAM,
};
use qsalign::rmodels::{data_fingerprint, RewardModel, RmCheckpoint, RmKind};
use qsalign::textrewards::{ReferenceModel, COMPONENT_NAMES};
use qsalign::{Error, Result};

use crate::Global;

/// The effective configuration: `--config`, else the run directory's
/// config.toml, else defaults; `--seed` overrides the file's seed.
fn load_config(g: &Global, dir: &RunDir) -> Result<RunConfig> {
    let (text, origin) = match &g.config {
        Some(p) => (std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?, p.display().to_string()),
        None => {
            let p = dir.path(art::CONFIG);
            if p.is_file() {
                (std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?, p.display().to_string())
            } else {
                (String::new(), "defaults".to_string())
            }
        }
    };
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config(format!("{origin}: {e}")))?;
    if let Some(s) = g.seed {
        let v = i64::try_from(s).map_err(|_| Error::config("--seed must fit in a signed 64-bit integer"))?;
        table.insert("seed".into(), toml::Value::Integer(v));
    }
    let text = toml::to_string(&table).map_err(|e| Error::config(e.to_string()))?;
    RunConfig::from_toml(&text).map_err(|e| match e {
        Error::Config(m) => Error::config(format!("{origin}: {m}")),
        other => other,
    })
}

fn open(g: &Global) -> Result<(RunDir, RunConfig)> {
    let dir = RunDir::new(&g.out);
    let cfg = load_config(g, &dir)?;
    Ok((dir, cfg))
}

fn world(dir: &RunDir) -> Result<World> {
    art::load_world(&dir.require(art::WORLD, "simulate")?)
}

fn triplets(dir: &RunDir) -> Result<Vec<PreferenceTriplet>> {
    art::load_jsonl(&dir.require(art::TRIPLETS, "curate")?)
}

fn reference(dir: &RunDir) -> Result<ReferenceModel> {
    ReferenceModel::load(&dir.require(art::REFERENCE, "curate")?)
}

fn reward_model(dir: &RunDir, kind: RmKind, path: Option<PathBuf>) -> Result<RewardModel> {
    let p = match path {
        Some(p) => p,
        None => dir.require(&art::rm_file(kind), &format!("train-rm --kind {}", kind.as_str()))?,
    };
    let m = RmCheckpoint::load(&p)?.model()?;
    if m.kind != kind {
        return Err(Error::data(format!("{} holds a {} model, expected {}", p.display(), m.kind.as_str(), kind.as_str())));
    }
    Ok(m)
}

/// A policy checkpoint, checked against the world's candidate pools.
fn policy(dir: &RunDir, stage: &str, producer: &str, w: &World) -> Result<Policy> {
    let p = dir.require(&art::policy_file(stage), producer)?;
    let ck = PolicyCheckpoint::load(&p)?;
    if ck.pool_fingerprint != pool_fingerprint(&w.contexts) {
        return Err(Error::data(format!("{} was trained on different candidate pools", p.display())));
    }
    Ok(ck.policy)
}

fn done(path: &Path) {
    println!("wrote {}", path.display());
}

pub fn simulate(g: &Global, impressions: Option<usize>, contexts: Option<usize>) -> Result<()> {
    let (dir, mut cfg) = open(g)?;
    if let Some(n) = impressions {
        cfg.logs.impressions = n;
    }
    if let Some(n) = contexts {
        cfg.world.n_contexts = n;
    }
    cfg.validate()?;
    let sim = simulate_stage(&cfg)?;
    dir.create()?;
    art::save_config(&dir.path(art::CONFIG), &cfg)?;
    art::save_json(&dir.path(art::WORLD), &sim.world)?;
    art::save_jsonl(&dir.path(art::LOGS), &sim.logs)?;
    println!("{} contexts, {} impressions", sim.world.contexts.len(), sim.logs.len());
    done(&dir.path(art::LOGS));
    Ok(())
}

pub fn curate(g: &Global) -> Result<()> {
    let (dir, cfg) = open(g)?;
    let w = world(&dir)?;
    let logs: Vec<ClickLogRecord> = art::load_jsonl(&dir.require(art::LOGS, "simulate")?)?;
    let (t, stats) = curate_triplets(&logs, &w.contexts, cfg.logs.curation);
    art::save_jsonl(&dir.path(art::TRIPLETS), &t)?;
    art::save_json(&dir.path(art::CURATION), &stats)?;
    fit_reference(&logs, &w.contexts, &cfg)?.save(&dir.path(art::REFERENCE))?;
    println!("{} triplets from {} records", t.len(), logs.len());
    done(&dir.path(art::TRIPLETS));
    Ok(())
}

pub fn train_rm(g: &Global, kind: &str, epochs: Option<usize>) -> Result<()> {
    let (dir, mut cfg) = open(g)?;
    let kind: RmKind = kind.parse()?;
    if let Some(e) = epochs {
        cfg.rm.train.epochs = e;
    }
    let t = triplets(&dir)?;
    let (model, out) = train_reward_model(kind, &t, &cfg)?;
    let path = dir.path(&art::rm_file(kind));
    RmCheckpoint::new(&model, &rm_train_config(&cfg, kind), data_fingerprint(&t), out.epoch_loss.clone()).save(&path)?;
    if let Some(l) = out.epoch_loss.last() {
        println!("{} epochs, final loss {l:.6}", out.epoch_loss.len());
    }
    done(&path);
    Ok(())
}

pub fn sft(g: &Global, epochs: Option<usize>) -> Result<()> {
    let (dir, mut cfg) = open(g)?;
    if let Some(e) = epochs {
        cfg.sft.fit.epochs = e;
    }
    let w = world(&dir)?;
    let stage = sft_stage(&w, &cfg)?;
    art::save_jsonl(&dir.path(art::SFT_DATA), &stage.targets)?;
    let path = dir.path(&art::policy_file("sft"));
    PolicyCheckpoint::new("sft", &stage.outcome.policy, &w.contexts).save(&path)?;
    println!("{} targets ({} contexts dropped)", stage.targets.len(), stage.assembly.dropped);
    done(&path);
    Ok(())
}

pub fn fuse(g: &Global, no_tune: bool) -> Result<()> {
    let (dir, mut cfg) = open(g)?;
    if no_tune {
        cfg.fusion.tune = false;
    }
    let w = world(&dir)?;
    let t = triplets(&dir)?;
    let garm = reward_model(&dir, RmKind::Garm, None)?;
    let refm = reference(&dir)?;
    let sft = policy(&dir, "sft", "sft", &w)?;
    let table = reward_table(&w, &garm, &refm)?;
    let inputs = build_inputs(&w.contexts);
    let stage = fusion_stage(&t, &garm, &refm, &table, &sft, &inputs, &cfg)?;
    stage.initial.save(&dir.path(art::INITIAL_WEIGHTS))?;
    stage.weights.save(&dir.path(art::WEIGHTS))?;
    if let Some(o) = &stage.tuning {
        art::write_with(&dir.path(art::TUNING_LOG), |wr| write_tuning_log(&o.rounds, &COMPONENT_NAMES, wr))?;
        println!("tuning {} after {} rounds", if o.converged { "converged" } else { "stopped" }, o.rounds.len());
    }
    done(&dir.path(art::WEIGHTS));
    Ok(())
}

pub fn train_rl(
    g: &Global,
    steps: Option<usize>,
    ablation: Option<&str>,
    weights: Option<PathBuf>,
    rm: Option<PathBuf>,
) -> Result<()> {
    let (dir, mut cfg) = open(g)?;
    if let Some(s) = steps {
        cfg.grpo.steps = s;
    }
    cfg.validate()?;
    let w = world(&dir)?;
    let garm = reward_model(&dir, RmKind::Garm, rm)?;
    let refm = reference(&dir)?;
    let sft = policy(&dir, "sft", "sft", &w)?;
    let wpath = match weights {
        Some(p) => p,
        None => dir.require(art::WEIGHTS, "fuse")?,
    };
    let fw = FusionWeights::load(&wpath)?;
    let (stage, wv) = match ablation {
        Some(name) => (name, ablation_weights(&fw.w, name)?),
        None => ("grpo", fw.w.clone()),
    };
    let table = reward_table(&w, &garm, &refm)?;
    let run = grpo_stage(&sft, &build_inputs(&w.contexts), &table, &wv, &cfg, GRPO_STREAM)?;
    let path = dir.path(&art::policy_file(stage));
    PolicyCheckpoint::new(stage, &run.policy, &w.contexts).save(&path)?;
    art::write_with(&dir.path(&art::trace_file(stage)), |wr| write_trace(&run.trace, wr))?;
    if let (Some(a), Some(b)) = (run.trace.first(), run.trace.last()) {
        println!("fused reward {:.4} -> {:.4} over {} steps", a.fused, b.fused, run.trace.len());
    }
    done(&path);
    Ok(())
}

pub fn rft(g: &Global, k: Option<usize>, rm: Option<PathBuf>) -> Result<()> {
    let (dir, mut cfg) = open(g)?;
    if let Some(k) = k {
        cfg.rft.k = k;
    }
    cfg.validate()?;
    let w = world(&dir)?;
    let garm = reward_model(&dir, RmKind::Garm, rm)?;
    let sft = policy(&dir, "sft", "sft", &w)?;
    let out = rft_stage(&sft, &garm, &w.contexts, &cfg)?;
    art::save_jsonl(&dir.path(art::RFT_DATA), &out.dataset)?;
    let path = dir.path(&art::policy_file("rft"));
    PolicyCheckpoint::new("rft", &out.policy, &w.contexts).save(&path)?;
    println!("{} examples ({} contexts dropped)", out.dataset.len(), out.dropped);
    done(&path);
    Ok(())
}

pub fn report(g: &Global) -> Result<()> {
    let (dir, cfg) = open(g)?;
    let w = world(&dir)?;
    let garm = reward_model(&dir, RmKind::Garm, None)?;
    let mut models = vec![(RmKind::Garm, garm)];
    for kind in [RmKind::Bt, RmKind::Paired] {
        if dir.path(&art::rm_file(kind)).is_file() {
            models.push((kind, reward_model(&dir, kind, None)?));
        }
    }
    let refm = reference(&dir)?;
    let sft = policy(&dir, "sft", "sft", &w)?;
    let grpo = policy(&dir, "grpo", "train-rl", &w)?;
    let rftp = policy(&dir, "rft", "rft", &w)?;
    let mut ablations = Vec::new();
    for name in ABLATIONS {
        if dir.path(&art::policy_file(name)).is_file() {
            ablations.push((name, policy(&dir, name, "train-rl --ablation", &w)?));
        }
    }
    let table = reward_table(&w, &models[0].1, &refm)?;
    let refs: Vec<(RmKind, &RewardModel)> = models.iter().map(|(k, m)| (*k, m)).collect();
    let policies = EvalPolicies {
        sft: &sft,
        grpo: &grpo,
        rft: &rftp,
        ablations: ablations.iter().map(|(n, p)| (*n, p)).collect(),
    };
    let r = evaluate(&cfg, &w, &table, &refs, &policies)?;
    let out = dir.path(art::REPORT);
    evalkit::report(&r, &out)?;
    print!("{}", evalkit::summary(&r));
    done(&out);
    Ok(())
}

pub fn run(g: &Global, seeds: &[u64], quick: bool) -> Result<()> {
    let root = RunDir::new(&g.out);
    let base = load_config(g, &root)?;
    let opts = if quick { RunOptions::default() } else { RunOptions::full() };
    if seeds.is_empty() {
        let r = run_seed(&base, opts)?;
        write_seed_run(&root, &base, &r)?;
        print!("{}", evalkit::summary(&r.report));
        done(root.root());
        return Ok(());
    }
    let mut merged = evalkit::EvalReport { config_hash: base.hash(), ..Default::default() };
    for &s in seeds {
        let cfg = RunConfig { seed: s, ..base.clone() };
        let dir = RunDir::new(root.path(&format!("seed-{s}")));
        let r = run_seed(&cfg, opts)?;
        write_seed_run(&dir, &cfg, &r)?;
        println!("seed {s} done");
        merged.merge(r.report);
    }
    let out = root.path(art::REPORT);
    evalkit::report(&merged, &out)?;
    print!("{}", evalkit::summary(&merged));
    done(&out);
    Ok(())
}

//! File layout of a run directory and the readers and writers for it.
//!
//! Every artifact is written deterministically (sorted keys where maps are
//! involved, fixed float formatting in CSVs), so two runs with the same
//! configuration produce byte-identical directories.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{RunConfig, SeedRun};
use crate::clicksim::{read_jsonl, write_jsonl, World, WORLD_VERSION};
use crate::error::{Error, Result};
use crate::evalkit;
use crate::fusion::write_tuning_log;
use crate::grpo::{write_trace, PolicyCheckpoint};
use crate::rmodels::{data_fingerprint, RmCheckpoint, RmKind};
use crate::textrewards::COMPONENT_NAMES;

pub const CONFIG: &str = "config.toml";
pub const WORLD: &str = "world.json";
pub const LOGS: &str = "logs.jsonl";
pub const TRIPLETS: &str = "triplets.jsonl";
pub const CURATION: &str = "curation.json";
pub const REFERENCE: &str = "reference.json";
pub const SFT_DATA: &str = "sft_dataset.jsonl";
pub const WEIGHTS: &str = "fusion_weights.json";
pub const INITIAL_WEIGHTS: &str = "fusion_weights_initial.json";
pub const TUNING_LOG: &str = "tuning_log.csv";
pub const RFT_DATA: &str = "rft_dataset.jsonl";
pub const REPORT: &str = "report";

pub fn rm_file(kind: RmKind) -> String {
    format!("rm_{}.json", kind.as_str())
}

pub fn policy_file(stage: &str) -> String {
    format!("policy_{stage}.json")
}

pub fn trace_file(stage: &str) -> String {
    format!("trace_{stage}.csv")
}

/// A run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn create(&self) -> Result<()> {
        std::fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))
    }

    /// Path of an input artifact, with a data error naming the producing
    /// command when it is missing.
    pub fn require(&self, name: &str, producer: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::data(format!("{} not found; run `{producer}` first", p.display())))
        }
    }
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

pub fn save_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_jsonl(items, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(f)).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// Write a file through a buffered writer.
pub fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn save_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::write(path, cfg.to_toml()?).map_err(|e| Error::io(path, e))
}

pub fn load_world(path: &Path) -> Result<World> {
    let w: World = load_json(path)?;
    if w.version != WORLD_VERSION {
        return Err(Error::data(format!("{}: unsupported world version {}", path.display(), w.version)));
    }
    Ok(w)
}

/// Persist every artifact of a finished seed into `dir`.
pub fn write_seed_run(dir: &RunDir, cfg: &RunConfig, run: &SeedRun) -> Result<()> {
    dir.create()?;
    let set = &run.simulation.world.contexts;
    save_config(&dir.path(CONFIG), cfg)?;
    save_json(&dir.path(WORLD), &run.simulation.world)?;
    save_jsonl(&dir.path(LOGS), &run.simulation.logs)?;
    save_jsonl(&dir.path(TRIPLETS), &run.triplets)?;
    save_json(&dir.path(CURATION), &run.curation)?;
    let fp = data_fingerprint(&run.triplets);
    for (kind, model, out) in &run.reward_models {
        let tc = super::rm_train_config(cfg, *kind);
        RmCheckpoint::new(model, &tc, fp.clone(), out.epoch_loss.clone()).save(&dir.path(&rm_file(*kind)))?;
    }
    run.reference.save(&dir.path(REFERENCE))?;
    save_jsonl(&dir.path(SFT_DATA), &run.sft.targets)?;
    PolicyCheckpoint::new("sft", &run.sft.outcome.policy, set).save(&dir.path(&policy_file("sft")))?;
    run.fusion.initial.save(&dir.path(INITIAL_WEIGHTS))?;
    run.fusion.weights.save(&dir.path(WEIGHTS))?;
    if let Some(t) = &run.fusion.tuning {
        write_with(&dir.path(TUNING_LOG), |w| write_tuning_log(&t.rounds, &COMPONENT_NAMES, w))?;
    }
    let mut stages: Vec<(&str, &crate::grpo::GrpoRun)> = vec![("grpo", &run.grpo)];
    stages.extend(run.ablations.iter().map(|(n, r)| (n.as_str(), r)));
    for (stage, r) in stages {
        PolicyCheckpoint::new(stage, &r.policy, set).save(&dir.path(&policy_file(stage)))?;
        write_with(&dir.path(&trace_file(stage)), |w| write_trace(&r.trace, w))?;
    }
    save_jsonl(&dir.path(RFT_DATA), &run.rft.dataset)?;
    PolicyCheckpoint::new("rft", &run.rft.policy, set).save(&dir.path(&policy_file("rft")))?;
    evalkit::report(&run.report, &dir.path(REPORT))
}

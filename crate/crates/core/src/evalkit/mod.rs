//! Evaluation: simulated CTR, reward-model accuracy under shift, ULB
//! calibration bins, the GSB proxy, and CSV reporting.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clicksim::click::scan;
use crate::clicksim::{click_probabilities, expected_click_prob, Context, SourcePolicy, ContextSet, ServingPolicy, Suggestion, UserModel};
use crate::error::{Error, Result};
use crate::grpo::{Action, ActionTable, Policy, PolicyInputs};
use crate::probcore::ulb;
use crate::report::fmt_sig;
use crate::rmodels::{rm_accuracy, RewardModel, RmKind, TripletFeatures};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtrEstimate {
    pub ctr: f64,
    pub stderr: f64,
    pub impressions: usize,
}

/// Monte-Carlo CTR: impression `i` goes to context `i mod n`; a withheld
/// group (refusal) counts as an impression without a click.
pub fn ctr_estimate(
    policy: &dyn ServingPolicy,
    um: &UserModel,
    set: &ContextSet,
    n_impressions: usize,
    seed: u64,
) -> Result<CtrEstimate> {
    if set.is_empty() || n_impressions == 0 {
        return Err(Error::invalid("ctr estimate needs contexts and at least one impression"));
    }
    let base = rng::derive(seed, &format!("ctr/{}", set.label));
    let clicks: usize = (0..n_impressions)
        .into_par_iter()
        .map(|i| {
            let ci = i % set.len();
            let (ctx, pool) = (&set.contexts[ci], &set.pools[ci]);
            let mut r = rng::stream_u64(base, i as u64);
            let Some(t) = policy.serve(ctx, pool, &mut r) else { return 0 };
            let u = um.triple_utilities(ctx, pool, t);
            usize::from(scan(um, ctx, t, u, SourcePolicy::Base, &mut r).clicked_position.is_some())
        })
        .sum();
    let n = n_impressions as f64;
    let p = clicks as f64 / n;
    Ok(CtrEstimate { ctr: p, stderr: (p * (1.0 - p) / n).sqrt(), impressions: n_impressions })
}

/// Click probability of every item, alone and after a paraphrase shown
/// above it, for one context.
struct ClickTable {
    fresh: Vec<f64>,
    repeated: Vec<f64>,
}

impl ClickTable {
    fn new(um: &UserModel, ctx: &Context, pool: &[Suggestion]) -> Self {
        let sd = um.noise_sd(ctx);
        let u: Vec<f64> = pool.iter().map(|s| um.utility(ctx, s)).collect();
        Self {
            fresh: u.iter().map(|u| expected_click_prob(*u, sd)).collect(),
            repeated: u.iter().map(|u| expected_click_prob(u - um.redundancy_penalty, sd)).collect(),
        }
    }
}

fn same_item(a: &Suggestion, b: &Suggestion) -> bool {
    (a.cluster.is_some() && a.cluster == b.cluster) || a.text == b.text
}

/// Exact probability that a served triple receives a click.
pub fn triple_click_prob(um: &UserModel, ctx: &Context, pool: &[Suggestion], t: [usize; 3]) -> f64 {
    let u = um.triple_utilities(ctx, pool, t);
    1.0 - click_probabilities(um, u, um.noise_sd(ctx))[3]
}

/// Exact expected CTR of a policy over a context set (contexts weighted
/// equally), summing every action's click probability.
pub fn ctr_exact(p: &Policy, um: &UserModel, set: &ContextSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::invalid("ctr over an empty context set"));
    }
    p.validate()?;
    let total: f64 = set
        .contexts
        .par_iter()
        .zip(&set.pools)
        .map(|(ctx, pool)| {
            let inp = PolicyInputs::new(ctx, pool);
            let table = ActionTable::new(&p.scores(&inp));
            let ct = ClickTable::new(um, ctx, pool);
            let b = um.position_bias;
            let mut acc = 0.0;
            table.for_each(|a, lp| {
                let Action::Triple([i, j, k]) = a else { return };
                let pj = if same_item(&pool[j], &pool[i]) { ct.repeated[j] } else { ct.fresh[j] };
                let pk = if same_item(&pool[k], &pool[i]) || same_item(&pool[k], &pool[j]) {
                    ct.repeated[k]
                } else {
                    ct.fresh[k]
                };
                let none = (1.0 - b[0] * ct.fresh[i]) * (1.0 - b[1] * pj) * (1.0 - b[2] * pk);
                acc += lp.exp() * (1.0 - none);
            });
            acc
        })
        .sum();
    Ok(total / set.len() as f64)
}

/// One ULB bin with its accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub accuracy: f64,
}

impl CalibrationBin {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// ULB confidence and correctness (1, 0.5 on ties, 0) of every triplet.
pub fn ulb_outcomes(garm: &RewardModel, test: &[TripletFeatures]) -> Result<Vec<(f64, f64)>> {
    if garm.kind != RmKind::Garm {
        return Err(Error::config("calibration needs a GaRM reward model"));
    }
    test.par_iter()
        .map(|t| {
            let (w, l) = garm.gaussian_pair(t)?;
            let hit = if w.mu() > l.mu() {
                1.0
            } else if w.mu() == l.mu() {
                0.5
            } else {
                0.0
            };
            Ok((ulb(&w, &l), hit))
        })
        .collect()
}

/// Equal-width ULB bins over the observed range; a bin with fewer than
/// `min_count` samples merges into its right neighbour (the last one
/// merges left).
pub fn calibration_bins(
    garm: &RewardModel,
    test: &[TripletFeatures],
    n_bins: usize,
    min_count: usize,
) -> Result<Vec<CalibrationBin>> {
    if test.is_empty() {
        return Err(Error::invalid("calibration over an empty test set"));
    }
    if n_bins < 3 {
        return Err(Error::invalid("calibration needs at least 3 bins"));
    }
    bin_outcomes(&ulb_outcomes(garm, test)?, n_bins, min_count)
}

pub fn bin_outcomes(outcomes: &[(f64, f64)], n_bins: usize, min_count: usize) -> Result<Vec<CalibrationBin>> {
    if outcomes.iter().any(|(u, _)| !u.is_finite()) {
        return Err(Error::numeric("non-finite ULB"));
    }
    let lo = outcomes.iter().map(|o| o.0).fold(f64::INFINITY, f64::min);
    let hi = outcomes.iter().map(|o| o.0).fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let mut bins: Vec<(f64, f64, usize, f64)> =
        (0..n_bins).map(|b| (lo + b as f64 * width, lo + (b + 1) as f64 * width, 0, 0.0)).collect();
    if let Some(last) = bins.last_mut() {
        last.1 = hi.max(lo + width);
    }
    for (u, hit) in outcomes {
        let b = (((u - lo) / width) as usize).min(n_bins - 1);
        bins[b].2 += 1;
        bins[b].3 += hit;
    }
    let mut merged: Vec<(f64, f64, usize, f64)> = Vec::new();
    let mut pending: Option<(f64, f64, usize, f64)> = None;
    for b in bins {
        let cur = match pending.take() {
            Some(p) => (p.0, b.1, p.2 + b.2, p.3 + b.3),
            None => b,
        };
        if cur.2 < min_count {
            pending = Some(cur);
        } else {
            merged.push(cur);
        }
    }
    if let Some(p) = pending {
        match merged.last_mut() {
            Some(m) => {
                m.1 = p.1;
                m.2 += p.2;
                m.3 += p.3;
            }
            None => merged.push(p),
        }
    }
    Ok(merged
        .into_iter()
        .map(|(lower, upper, count, hits)| CalibrationBin {
            lower,
            upper,
            count,
            accuracy: if count > 0 { hits / count as f64 } else { 0.0 },
        })
        .collect())
}

/// Utility at the `q` quantile over every pool item of a context set.
pub fn useful_threshold(um: &UserModel, set: &ContextSet, q: f64) -> Result<f64> {
    let mut u: Vec<f64> = set
        .contexts
        .iter()
        .zip(&set.pools)
        .flat_map(|(c, pool)| pool.iter().map(move |s| um.utility(c, s)))
        .collect();
    if u.is_empty() || !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid("utility quantile needs items and q in [0, 1]"));
    }
    u.sort_by(f64::total_cmp);
    Ok(u[((u.len() - 1) as f64 * q).round() as usize])
}

/// Usefulness score 0..=3 of a group: suggestions whose ground-truth
/// utility (after redundancy) reaches the threshold. Refusals score 0.
pub fn group_score(um: &UserModel, ctx: &Context, pool: &[Suggestion], g: Option<[usize; 3]>, threshold: f64) -> i64 {
    match g {
        None => 0,
        Some(t) => um.triple_utilities(ctx, pool, t).iter().filter(|u| **u >= threshold).count() as i64,
    }
}

/// Good-Same-Bad proxy: Σ over contexts of score(a) − score(b).
pub fn gsb_proxy(
    groups_a: &[Option<[usize; 3]>],
    groups_b: &[Option<[usize; 3]>],
    set: &ContextSet,
    um: &UserModel,
    useful_threshold: f64,
) -> Result<i64> {
    if groups_a.len() != set.len() || groups_b.len() != set.len() {
        return Err(Error::invalid(format!(
            "gsb needs one group per context: {} and {} for {} contexts",
            groups_a.len(),
            groups_b.len(),
            set.len()
        )));
    }
    let mut total = 0;
    for (i, (ctx, pool)) in set.contexts.iter().zip(&set.pools).enumerate() {
        for g in [groups_a[i], groups_b[i]].iter().flatten() {
            if g.iter().any(|&x| x >= pool.len()) {
                return Err(Error::invalid("gsb group index outside the pool"));
            }
        }
        total += group_score(um, ctx, pool, groups_a[i], useful_threshold)
            - group_score(um, ctx, pool, groups_b[i], useful_threshold);
    }
    Ok(total)
}

/// The greedy group of a policy in every context.
pub fn greedy_groups(p: &Policy, set: &ContextSet) -> Vec<Option<[usize; 3]>> {
    set.contexts
        .iter()
        .zip(&set.pools)
        .map(|(c, pool)| match crate::grpo::greedy_action(&p.scores(&PolicyInputs::new(c, pool))) {
            Action::Refuse => None,
            Action::Triple(t) => Some(t),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub dataset: String,
    pub n: usize,
    pub accuracy: f64,
    /// Mean ULB of the GaRM pair scores; `None` for other kinds.
    pub mean_ulb: Option<f64>,
}

/// Accuracy of one reward model on each named dataset, in registration order.
pub fn ood_eval(rm: &RewardModel, datasets: &[(String, Vec<TripletFeatures>)]) -> Result<Vec<AccuracyRow>> {
    datasets
        .iter()
        .map(|(name, data)| {
            let accuracy = rm_accuracy(rm, data).map_err(|e| Error::invalid(format!("dataset {name}: {e}")))?;
            let mean_ulb = if rm.kind == RmKind::Garm {
                let o = ulb_outcomes(rm, data)?;
                Some(o.iter().map(|x| x.0).sum::<f64>() / o.len() as f64)
            } else {
                None
            };
            Ok(AccuracyRow { dataset: name.clone(), n: data.len(), accuracy, mean_ulb })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtrRow {
    pub seed: u64,
    pub policy: String,
    pub ctr_exact: f64,
    pub ctr_mc: f64,
    pub stderr: f64,
    pub impressions: usize,
    pub refusal_accuracy: f64,
    pub false_refusal_rate: f64,
    pub mean_ref_logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmRow {
    pub seed: u64,
    pub model: String,
    pub row: AccuracyRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub seed: u64,
    pub bin: usize,
    pub bin_data: CalibrationBin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsbRow {
    pub seed: u64,
    pub candidate: String,
    pub baseline: String,
    pub contexts: usize,
    pub gsb: i64,
}

/// Every table of an evaluation run plus its metadata.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub ctr: Vec<CtrRow>,
    pub accuracy: Vec<RmRow>,
    pub calibration: Vec<BinRow>,
    pub gsb: Vec<GsbRow>,
    /// Free-form lines appended to the summary.
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn merge(&mut self, other: EvalReport) {
        self.seeds.extend(other.seeds);
        self.ctr.extend(other.ctr);
        self.accuracy.extend(other.accuracy);
        self.calibration.extend(other.calibration);
        self.gsb.extend(other.gsb);
        self.notes.extend(other.notes);
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut wr = csv::Writer::from_path(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    wr.write_record(header)?;
    for r in rows {
        wr.write_record(&r)?;
    }
    wr.flush().map_err(|e| Error::io(path, e))
}

/// Write `ctr.csv`, `rm_accuracy.csv`, `calibration.csv`, `gsb.csv` and
/// `summary.txt` into `out_dir`.
pub fn report(r: &EvalReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_csv(
        &out_dir.join("ctr.csv"),
        &[
            "seed",
            "policy",
            "ctr_exact",
            "ctr_mc",
            "stderr",
            "impressions",
            "refusal_accuracy",
            "false_refusal_rate",
            "mean_ref_logprob",
        ],
        r.ctr
            .iter()
            .map(|c| {
                vec![
                    c.seed.to_string(),
                    c.policy.clone(),
                    fmt_sig(c.ctr_exact),
                    fmt_sig(c.ctr_mc),
                    fmt_sig(c.stderr),
                    c.impressions.to_string(),
                    fmt_sig(c.refusal_accuracy),
                    fmt_sig(c.false_refusal_rate),
                    fmt_sig(c.mean_ref_logprob),
                ]
            })
            .collect(),
    )?;
    write_csv(
        &out_dir.join("rm_accuracy.csv"),
        &["seed", "model", "dataset", "n", "accuracy", "mean_ulb"],
        r.accuracy
            .iter()
            .map(|a| {
                vec![
                    a.seed.to_string(),
                    a.model.clone(),
                    a.row.dataset.clone(),
                    a.row.n.to_string(),
                    fmt_sig(a.row.accuracy),
                    opt(a.row.mean_ulb),
                ]
            })
            .collect(),
    )?;
    write_csv(
        &out_dir.join("calibration.csv"),
        &["seed", "bin", "lower", "upper", "count", "accuracy"],
        r.calibration
            .iter()
            .map(|b| {
                vec![
                    b.seed.to_string(),
                    b.bin.to_string(),
                    fmt_sig(b.bin_data.lower),
                    fmt_sig(b.bin_data.upper),
                    b.bin_data.count.to_string(),
                    fmt_sig(b.bin_data.accuracy),
                ]
            })
            .collect(),
    )?;
    write_csv(
        &out_dir.join("gsb.csv"),
        &["seed", "candidate", "baseline", "contexts", "gsb_proxy"],
        r.gsb
            .iter()
            .map(|g| vec![g.seed.to_string(), g.candidate.clone(), g.baseline.clone(), g.contexts.to_string(), g.gsb.to_string()])
            .collect(),
    )?;
    std::fs::write(out_dir.join("summary.txt"), summary(r)).map_err(|e| Error::io(out_dir.join("summary.txt"), e))
}

/// Plain-text digest: per-policy mean CTR and per-model mean accuracy.
pub fn summary(r: &EvalReport) -> String {
    let mut s = String::new();
    let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(s, "seeds: {}", seeds.join(" "));
    let _ = writeln!(s, "config: {}", r.config_hash);
    let mut policies: Vec<&str> = Vec::new();
    for c in &r.ctr {
        if !policies.contains(&c.policy.as_str()) {
            policies.push(&c.policy);
        }
    }
    for p in policies {
        let rows: Vec<&CtrRow> = r.ctr.iter().filter(|c| c.policy == p).collect();
        let m = rows.iter().map(|c| c.ctr_exact).sum::<f64>() / rows.len() as f64;
        let _ = writeln!(s, "ctr {p}: {} over {} seeds", fmt_sig(m), rows.len());
    }
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for a in &r.accuracy {
        let k = (a.model.as_str(), a.row.dataset.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (model, data) in keys {
        let rows: Vec<&RmRow> = r.accuracy.iter().filter(|a| a.model == model && a.row.dataset == data).collect();
        let m = rows.iter().map(|a| a.row.accuracy).sum::<f64>() / rows.len() as f64;
        let _ = writeln!(s, "accuracy {model} on {data}: {}", fmt_sig(m));
    }
    for g in &r.gsb {
        let _ = writeln!(s, "gsb proxy (seed {}) {} vs {}: {:+}", g.seed, g.candidate, g.baseline, g.gsb);
    }
    if !r.gsb.is_empty() {
        let _ = writeln!(s, "gsb proxy counts suggestions at or above the utility threshold; it stands in for human review");
    }
    for n in &r.notes {
        let _ = writeln!(s, "{n}");
    }
    s
}

#[cfg(test)]
mod tests;

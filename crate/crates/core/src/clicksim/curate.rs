//! Preference-triplet curation from click logs.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ClickLogRecord, Context, ContextSet, SourcePolicy, Suggestion, UserModel};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTriplet {
    pub context_id: u64,
    pub chosen_text: String,
    pub rejected_text: String,
    pub week: u32,
    pub source_policy: SourcePolicy,
    /// Context and suggestion records carried along so a triplet file can be
    /// featurized without the world that produced it.
    pub context: Context,
    pub chosen: Suggestion,
    pub rejected: Suggestion,
}

impl PreferenceTriplet {
    pub fn new(context: &Context, chosen: &Suggestion, rejected: &Suggestion, source_policy: SourcePolicy) -> Self {
        Self {
            context_id: context.id,
            chosen_text: chosen.text.clone(),
            rejected_text: rejected.text.clone(),
            week: context.week,
            source_policy,
            context: context.clone(),
            chosen: chosen.clone(),
            rejected: rejected.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurationMode {
    /// A click at position 3 yields two triplets (vs positions 1 and 2).
    #[default]
    BothEarlier,
    /// A click at position 3 yields one triplet, against position 2.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CurationStats {
    pub records: usize,
    pub dropped_no_click: usize,
    pub dropped_first_position: usize,
    pub dropped_unknown_context: usize,
    pub dropped_identical_text: usize,
    pub kept_records: usize,
    pub triplets: usize,
}

/// Keep clicks at positions 2 and 3; the clicked suggestion is chosen and an
/// earlier-positioned one is rejected.
pub fn curate_triplets(
    logs: &[ClickLogRecord],
    set: &ContextSet,
    mode: CurationMode,
) -> (Vec<PreferenceTriplet>, CurationStats) {
    let mut stats = CurationStats { records: logs.len(), ..Default::default() };
    let mut out = Vec::new();
    for rec in logs {
        let pos = match rec.clicked_position {
            None => {
                stats.dropped_no_click += 1;
                continue;
            }
            Some(1) => {
                stats.dropped_first_position += 1;
                continue;
            }
            Some(p) => p as usize,
        };
        let Some(ci) = set.index_of(rec.context_id) else {
            stats.dropped_unknown_context += 1;
            continue;
        };
        let ctx = &set.contexts[ci];
        let pool = &set.pools[ci];
        let chosen = &pool[rec.triple[pos - 1]];
        let negatives: &[usize] = match (pos, mode) {
            (2, _) => &[0],
            (_, CurationMode::BothEarlier) => &[0, 1],
            (_, CurationMode::Single) => &[1],
        };
        let mut kept = false;
        for &k in negatives {
            let rejected = &pool[rec.triple[k]];
            if rejected.text == chosen.text {
                stats.dropped_identical_text += 1;
                continue;
            }
            out.push(PreferenceTriplet::new(ctx, chosen, rejected, rec.serving_policy));
            kept = true;
        }
        if kept {
            stats.kept_records += 1;
        }
    }
    stats.triplets = out.len();
    (out, stats)
}

/// Triplets labelled by a direct noisy comparison: each side draws
/// `u + noise_scale·sd·N(0, 1)` with the context's noise level and the
/// larger draw wins.
/// The label law depends on utilities and noise only through their ratio, so
/// it is invariant to a joint rescaling of (u, sd).
pub fn comparison_triplets(um: &UserModel, set: &ContextSet, n: usize, noise_scale: f64, seed: u64) -> Vec<PreferenceTriplet> {
    let base = rng::derive(seed, &format!("comparisons/{}", set.label));
    (0..n)
        .map(|i| {
            let mut r = rng::stream_u64(base, i as u64);
            let ci = r.random_range(0..set.len());
            let (ctx, pool) = (&set.contexts[ci], &set.pools[ci]);
            let a = r.random_range(0..pool.len());
            let b = (a + r.random_range(1..pool.len())) % pool.len();
            let sd = noise_scale * um.noise_sd(ctx);
            let ea: f64 = StandardNormal.sample(&mut r);
            let eb: f64 = StandardNormal.sample(&mut r);
            let za = um.utility(ctx, &pool[a]) + sd * ea;
            let zb = um.utility(ctx, &pool[b]) + sd * eb;
            let (w, l) = if za >= zb { (a, b) } else { (b, a) };
            PreferenceTriplet::new(ctx, &pool[w], &pool[l], SourcePolicy::Base)
        })
        .collect()
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut w: W) -> Result<()> {
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(r: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::data(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

//! Diversity-aware assembly of SFT-analog targets.

use serde::{Deserialize, Serialize};

use super::ContextSet;
use crate::error::{Error, Result};
use crate::text::{cosine, hashed_unigrams, jaccard};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DedupeConfig {
    pub jaccard_max: f64,
    pub cosine_max: f64,
    /// Buckets of the hashed unigram vector used for cosine similarity.
    pub hash_dim: usize,
}

impl Default for DedupeConfig {
    fn default() -> Self {
        Self { jaccard_max: 0.5, cosine_max: 0.9, hash_dim: 64 }
    }
}

impl DedupeConfig {
    pub fn too_similar(&self, a: &str, b: &str) -> bool {
        if jaccard(a, b) > self.jaccard_max {
            return true;
        }
        let (va, vb) = (hashed_unigrams(a, self.hash_dim), hashed_unigrams(b, self.hash_dim));
        cosine(&va, &vb) > self.cosine_max
    }
}

/// Greedy selection over `order` (best first): keep an item unless it is too
/// similar to one already kept; stop after `k` items.
pub fn dedupe_top_k<'a>(order: &[usize], text: impl Fn(usize) -> &'a str, cfg: &DedupeConfig, k: usize) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::with_capacity(k);
    for &i in order {
        if kept.len() == k {
            break;
        }
        if kept.iter().all(|&j| !cfg.too_similar(text(i), text(j))) {
            kept.push(i);
        }
    }
    kept
}

/// Stable descending order of scores; ties keep index order.
pub fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftExample {
    pub context_index: usize,
    pub triple: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftAssembly {
    pub examples: Vec<SftExample>,
    pub dropped: usize,
}

/// Rank each pool by teacher score, drop near-duplicates, keep the top 3.
pub fn assemble_sft_data(set: &ContextSet, teacher_scores: &[Vec<f64>], cfg: &DedupeConfig) -> Result<SftAssembly> {
    if teacher_scores.len() != set.len() {
        return Err(Error::invalid("one teacher score vector per context is required"));
    }
    let mut examples = Vec::new();
    let mut dropped = 0;
    for (ci, (pool, scores)) in set.pools.iter().zip(teacher_scores).enumerate() {
        if scores.len() != pool.len() {
            return Err(Error::invalid(format!("context {ci}: teacher scores do not match pool size")));
        }
        let kept = dedupe_top_k(&rank_desc(scores), |i| pool[i].text.as_str(), cfg, 3);
        if kept.len() < 3 {
            dropped += 1;
            continue;
        }
        examples.push(SftExample { context_index: ci, triple: [kept[0], kept[1], kept[2]] });
    }
    Ok(SftAssembly { examples, dropped })
}

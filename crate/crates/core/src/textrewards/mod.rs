//! Composite reward suite: rule-based rewards, a rubric judge, and the
//! logged-perplexity reward under a bigram reference model.

mod refmodel;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use refmodel::{ReferenceModel, UNK};

use crate::clicksim::Context;
use crate::error::{Error, Result};
use crate::text::{detect_language, jaccard, word_count};

pub const N_COMPONENTS: usize = 9;

/// Reward components in weight-vector order.
pub const COMPONENT_NAMES: [&str; N_COMPONENTS] =
    ["format", "length", "language", "diversity", "safety", "rubric", "ppl", "rm", "rm_sigma"];

pub const SAFETY_REFUSAL_BONUS: f64 = 1.0;
pub const SAFETY_PENALTY: f64 = -5.0;
pub const SOFT_WORD_LIMIT: usize = 12;
pub const MAX_CHARS: usize = 95;

/// An ordered group of suggestions, or a refusal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestionGroup {
    pub suggestions: Vec<String>,
    pub is_refusal: bool,
}

impl SuggestionGroup {
    pub fn new<S: Into<String>>(suggestions: impl IntoIterator<Item = S>) -> Self {
        Self {
            suggestions: suggestions.into_iter().map(Into::into).collect(),
            is_refusal: false,
        }
    }

    pub fn refusal() -> Self {
        Self { suggestions: vec![], is_refusal: true }
    }
}

pub fn format_reward(g: &SuggestionGroup) -> f64 {
    let ok = !g.is_refusal && g.suggestions.len() == 3 && g.suggestions.iter().all(|s| !s.trim().is_empty());
    if ok {
        1.0
    } else {
        0.0
    }
}

/// Per suggestion `clamp(1 − (words − 12)/5, 0, 1)`, averaged.
pub fn length_reward(g: &SuggestionGroup) -> Result<f64> {
    if g.suggestions.is_empty() {
        return Err(Error::invalid("length reward of an empty group"));
    }
    let per = |s: &String| (1.0 - (word_count(s) as f64 - SOFT_WORD_LIMIT as f64) / 5.0).clamp(0.0, 1.0);
    Ok(g.suggestions.iter().map(per).sum::<f64>() / g.suggestions.len() as f64)
}

/// Fraction of suggestions in the context's language; ambiguous ones count 0.5.
pub fn language_consistency_reward(ctx: &Context, g: &SuggestionGroup) -> f64 {
    if g.suggestions.is_empty() {
        return 0.0;
    }
    let score = |s: &String| match detect_language(s).matches(ctx.language) {
        Some(true) => 1.0,
        Some(false) => 0.0,
        None => 0.5,
    };
    g.suggestions.iter().map(score).sum::<f64>() / g.suggestions.len() as f64
}

/// 1 − mean pairwise unigram Jaccard over the three suggestions.
pub fn diversity_reward(g: &SuggestionGroup) -> Result<f64> {
    let s = &g.suggestions;
    if s.len() != 3 {
        return Err(Error::invalid(format!("diversity needs 3 suggestions, got {}", s.len())));
    }
    let sim = jaccard(&s[0], &s[1]) + jaccard(&s[0], &s[2]) + jaccard(&s[1], &s[2]);
    Ok(1.0 - sim / 3.0)
}

pub fn safety_reward(ctx: &Context, g: &SuggestionGroup) -> f64 {
    match (ctx.is_unsafe, g.is_refusal) {
        (true, true) => SAFETY_REFUSAL_BONUS,
        (true, false) | (false, true) => SAFETY_PENALTY,
        (false, false) => 0.0,
    }
}

/// A binary quality judge for a single suggestion.
pub trait Rubric: Sync {
    fn passes(&self, ctx: &Context, suggestion: &str) -> bool;
}

/// Fails stubs (at most one token), repeats of the prior query, and
/// suggestions longer than `max_chars` characters counting spaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeterministicRubric {
    pub max_chars: usize,
    /// Unigram Jaccard at or above which a suggestion repeats the prior query.
    pub repeat_jaccard: f64,
}

impl Default for DeterministicRubric {
    fn default() -> Self {
        Self { max_chars: MAX_CHARS, repeat_jaccard: 0.9 }
    }
}

impl Rubric for DeterministicRubric {
    fn passes(&self, ctx: &Context, s: &str) -> bool {
        if word_count(s) <= 1 || s.chars().count() > self.max_chars {
            return false;
        }
        !(ctx.prior_query.trim() == s.trim() || jaccard(&ctx.prior_query, s) >= self.repeat_jaccard)
    }
}

pub fn rubric_reward(rubric: &dyn Rubric, ctx: &Context, s: &str) -> f64 {
    if rubric.passes(ctx, s) {
        1.0
    } else {
        0.0
    }
}

pub fn rubric_group_reward(rubric: &dyn Rubric, ctx: &Context, g: &SuggestionGroup) -> f64 {
    if g.suggestions.is_empty() {
        return 0.0;
    }
    g.suggestions.iter().map(|s| rubric_reward(rubric, ctx, s)).sum::<f64>() / g.suggestions.len() as f64
}

/// Mean per-token log-probability under the reference model.
pub fn ppl_reward(m: &ReferenceModel, s: &str) -> Result<f64> {
    m.mean_logprob(s)
}

/// Reward-model outputs averaged over a group: μ and σ.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RmSignal {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardVector {
    pub format: f64,
    pub length: f64,
    pub language: f64,
    pub diversity: f64,
    pub safety: f64,
    pub rubric: f64,
    pub ppl: f64,
    pub rm: f64,
    pub rm_sigma: f64,
    pub fused: f64,
}

impl RewardVector {
    pub fn components(&self) -> [f64; N_COMPONENTS] {
        [
            self.format,
            self.length,
            self.language,
            self.diversity,
            self.safety,
            self.rubric,
            self.ppl,
            self.rm,
            self.rm_sigma,
        ]
    }

    pub fn from_components(c: [f64; N_COMPONENTS], weights: &[f64]) -> Result<Self> {
        let mut v = RewardVector {
            format: c[0],
            length: c[1],
            language: c[2],
            diversity: c[3],
            safety: c[4],
            rubric: c[5],
            ppl: c[6],
            rm: c[7],
            rm_sigma: c[8],
            fused: 0.0,
        };
        v.fused = fuse(weights, &c)?;
        Ok(v)
    }
}

pub fn fuse(weights: &[f64], components: &[f64; N_COMPONENTS]) -> Result<f64> {
    if weights.len() != N_COMPONENTS {
        return Err(Error::config(format!(
            "fusion weights have {} entries, expected {N_COMPONENTS}",
            weights.len()
        )));
    }
    Ok(weights.iter().zip(components).map(|(w, c)| w * c).sum())
}

/// Everything the composite reward needs besides the group itself.
pub struct RewardContext<'a> {
    pub rubric: &'a dyn Rubric,
    pub reference: &'a ReferenceModel,
}

/// Score every component of `g` and fuse them. `rm` carries the reward
/// model's mean μ and σ over the group's suggestions. Refusals score only
/// on safety; every other component reads 0.
pub fn composite_reward(
    weights: &[f64],
    rc: &RewardContext<'_>,
    ctx: &Context,
    g: &SuggestionGroup,
    rm: RmSignal,
) -> Result<RewardVector> {
    let mut c = [0.0; N_COMPONENTS];
    c[4] = safety_reward(ctx, g);
    if !g.is_refusal && !g.suggestions.is_empty() {
        c[0] = format_reward(g);
        c[1] = length_reward(g)?;
        c[2] = language_consistency_reward(ctx, g);
        c[3] = if g.suggestions.len() == 3 { diversity_reward(g)? } else { 0.0 };
        c[5] = rubric_group_reward(rc.rubric, ctx, g);
        let mut ppl = 0.0;
        for s in &g.suggestions {
            ppl += ppl_reward(rc.reference, s)?;
        }
        c[6] = ppl / g.suggestions.len() as f64;
        c[7] = rm.mu;
        c[8] = rm.sigma;
    }
    RewardVector::from_components(c, weights)
}

/// One CSV row per rollout: identifiers, each component, and the fused value.
pub fn write_reward_trace<W: Write>(rows: &[(u64, u64, RewardVector)], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["step".to_string(), "context_id".to_string()];
    header.extend(COMPONENT_NAMES.iter().map(|s| s.to_string()));
    header.push("fused".into());
    wr.write_record(&header)?;
    for (step, ctx_id, v) in rows {
        let mut rec = vec![step.to_string(), ctx_id.to_string()];
        rec.extend(v.components().iter().map(|x| crate::report::fmt_sig(*x)));
        rec.push(crate::report::fmt_sig(v.fused));
        wr.write_record(&rec)?;
    }
    wr.flush().map_err(|e| Error::io("<reward trace>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests;

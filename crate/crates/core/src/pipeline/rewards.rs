//! Per-item reward precomputation so rollouts can be scored without
//! re-tokenising suggestions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clicksim::ContextSet;
use crate::error::Result;
use crate::grpo::Action;
use crate::math::{mean, pop_std};
use crate::rmodels::{RewardModel, RmOutput};
use crate::text::jaccard;
use crate::textrewards::{
    composite_reward, language_consistency_reward, length_reward, ppl_reward, rubric_reward, safety_reward,
    RewardContext, RewardVector, RmSignal, SuggestionGroup, N_COMPONENTS,
};

/// Everything the composite reward reads about one context's pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextRewards {
    pub length: Vec<f64>,
    pub language: Vec<f64>,
    pub rubric: Vec<f64>,
    pub ppl: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Pairwise unigram Jaccard, row-major.
    pub jaccard: Vec<f64>,
    pub safety_refuse: f64,
    pub safety_serve: f64,
}

/// Standardisation of reward-model means: the raw μ of a reward model has
/// an arbitrary offset and scale, which would otherwise decide how served
/// groups compare with refusals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmScale {
    pub mu_mean: f64,
    pub mu_sd: f64,
}

impl RmScale {
    /// Mean and standard deviation of μ over every pool item of a set.
    pub fn fit(set: &ContextSet, rm: &RewardModel) -> Result<Self> {
        let mut mus = Vec::new();
        for (c, pool) in set.contexts.iter().zip(&set.pools) {
            for s in pool {
                mus.push(rm.score(c, s)?.mu);
            }
        }
        let sd = pop_std(&mus);
        Ok(Self { mu_mean: mean(&mus), mu_sd: if sd > 0.0 { sd } else { 1.0 } })
    }

    pub fn signal(&self, o: RmOutput) -> RmSignal {
        RmSignal { mu: (o.mu - self.mu_mean) / self.mu_sd, sigma: o.sigma }
    }
}

/// Component values for every pool item of every context.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    pub contexts: Vec<ContextRewards>,
    pub scale: RmScale,
}

impl RewardTable {
    pub fn build(set: &ContextSet, rm: &RewardModel, scale: RmScale, rc: &RewardContext<'_>) -> Result<Self> {
        let contexts = set
            .contexts
            .par_iter()
            .zip(&set.pools)
            .map(|(ctx, pool)| {
                let n = pool.len();
                let mut c = ContextRewards {
                    length: Vec::with_capacity(n),
                    language: Vec::with_capacity(n),
                    rubric: Vec::with_capacity(n),
                    ppl: Vec::with_capacity(n),
                    mu: Vec::with_capacity(n),
                    sigma: Vec::with_capacity(n),
                    jaccard: vec![0.0; n * n],
                    safety_refuse: safety_reward(ctx, &SuggestionGroup::refusal()),
                    safety_serve: safety_reward(ctx, &SuggestionGroup::new(["x"])),
                };
                for s in pool {
                    let g = SuggestionGroup::new([s.text.as_str()]);
                    c.length.push(length_reward(&g)?);
                    c.language.push(language_consistency_reward(ctx, &g));
                    c.rubric.push(rubric_reward(rc.rubric, ctx, &s.text));
                    c.ppl.push(ppl_reward(rc.reference, &s.text)?);
                    let o = scale.signal(rm.score(ctx, s)?);
                    c.mu.push(o.mu);
                    c.sigma.push(o.sigma);
                }
                for i in 0..n {
                    for j in 0..n {
                        c.jaccard[i * n + j] = jaccard(&pool[i].text, &pool[j].text);
                    }
                }
                Ok(c)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { contexts, scale })
    }

    /// Component vector of an action; matches [`composite_reward`] on the
    /// corresponding suggestion group.
    pub fn components(&self, ci: usize, a: &Action) -> [f64; N_COMPONENTS] {
        let c = &self.contexts[ci];
        let mut v = [0.0; N_COMPONENTS];
        match a {
            Action::Refuse => v[4] = c.safety_refuse,
            Action::Triple(t) => {
                let n = c.length.len();
                let m = |x: &[f64]| (x[t[0]] + x[t[1]] + x[t[2]]) / 3.0;
                let sim = c.jaccard[t[0] * n + t[1]] + c.jaccard[t[0] * n + t[2]] + c.jaccard[t[1] * n + t[2]];
                v = [
                    1.0,
                    m(&c.length),
                    m(&c.language),
                    1.0 - sim / 3.0,
                    c.safety_serve,
                    m(&c.rubric),
                    m(&c.ppl),
                    m(&c.mu),
                    m(&c.sigma),
                ];
            }
        }
        v
    }

    pub fn reward(&self, ci: usize, a: &Action, weights: &[f64]) -> Result<RewardVector> {
        RewardVector::from_components(self.components(ci, a), weights)
    }

    /// Mean reference-model log-probability of the items in an action.
    pub fn ppl_of(&self, ci: usize, a: &Action) -> Option<f64> {
        match a {
            Action::Refuse => None,
            Action::Triple(t) => Some(t.iter().map(|&i| self.contexts[ci].ppl[i]).sum::<f64>() / 3.0),
        }
    }
}

/// The composite reward of an action computed from text, for cross-checks.
pub fn reward_from_text(
    set: &ContextSet,
    ci: usize,
    a: &Action,
    rm: &RewardModel,
    scale: RmScale,
    rc: &RewardContext<'_>,
    weights: &[f64],
) -> Result<RewardVector> {
    let ctx = &set.contexts[ci];
    let pool = &set.pools[ci];
    match a {
        Action::Refuse => composite_reward(weights, rc, ctx, &SuggestionGroup::refusal(), RmSignal::default()),
        Action::Triple(t) => {
            let g = SuggestionGroup::new(t.iter().map(|&i| pool[i].text.as_str()));
            let mut sig = RmSignal::default();
            for &i in t {
                let o = scale.signal(rm.score(ctx, &pool[i])?);
                sig.mu += o.mu / 3.0;
                sig.sigma += o.sigma / 3.0;
            }
            composite_reward(weights, rc, ctx, &g, sig)
        }
    }
}

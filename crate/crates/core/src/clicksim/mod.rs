//! Synthetic conversational world with a position-biased click model.
//!
//! A world is a set of contexts (a dialogue state summarised as a feature
//! block, a language and a safety flag) each with a pool of candidate
//! suggestions. Ground-truth utility is linear in a small set of joint
//! (context, suggestion) features; users scan the three served suggestions
//! top-down, examine position `k` with probability `position_bias[k]` and
//! click an examined suggestion with probability `sigmoid(u + noise)`.

pub mod click;
pub mod curate;
pub mod lexicon;
pub mod sftdata;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use click::{
    base_serve, click_probabilities, expected_click_prob, serve_and_click, simulate_logs, ClickLogRecord,
    ServingPolicy,
};
pub use curate::{comparison_triplets, curate_triplets, read_jsonl, write_jsonl, CurationMode, CurationStats, PreferenceTriplet};
pub use lexicon::{Lexicon, WordClass};
pub use sftdata::{assemble_sft_data, DedupeConfig, SftAssembly};

use crate::error::{Error, Result};
use crate::rng;
use crate::text::{LangTag, Language};

pub const WORLD_VERSION: u32 = 1;

/// Names of the ground-truth utility features, in weight order.
pub const UTILITY_FEATURES: [&str; 9] = [
    "relevance",
    "lead",
    "spam",
    "excess_words",
    "lang_mismatch",
    "junk_fraction",
    "stub",
    "repeat",
    "bias",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourcePolicy {
    Base,
    RftShifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRegime {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    /// Member of a paraphrase cluster (all on-topic).
    Paraphrase,
    OnTopic,
    OffTopic,
    /// Repeats the context's prior query verbatim.
    Repeat,
    Long,
    /// Other language, or mixed languages.
    Mismatched,
    Stub,
    /// Keyword-stuffed text that pattern-matching scorers over-rate.
    Hack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub text: String,
    pub lang: LangTag,
    pub kind: CandidateKind,
    pub cluster: Option<u32>,
    /// Mean embedding of the topic words in the text.
    pub embedding: Vec<f64>,
    /// Log-propensity of the base generator for this candidate.
    pub naturalness: f64,
    pub lead_count: u32,
    pub first_is_lead: bool,
    pub junk_count: u32,
    pub n_words: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub id: u64,
    pub features: Vec<f64>,
    pub language: Language,
    pub is_unsafe: bool,
    pub week: u32,
    pub topic: usize,
    pub noise_regime: NoiseRegime,
    pub prior_query: String,
}

/// Contexts with their candidate pools, index-aligned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSet {
    pub label: String,
    pub week: u32,
    pub id_base: u64,
    pub contexts: Vec<Context>,
    pub pools: Vec<Vec<Suggestion>>,
}

impl ContextSet {
    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn index_of(&self, context_id: u64) -> Option<usize> {
        let i = context_id.checked_sub(self.id_base)? as usize;
        (i < self.contexts.len() && self.contexts[i].id == context_id).then_some(i)
    }

    pub fn subset(&self, label: &str, range: std::ops::Range<usize>) -> ContextSet {
        // Subsets keep the parent's ids, so they are re-based on the first one.
        ContextSet {
            label: label.to_string(),
            week: self.week,
            id_base: self.id_base + range.start as u64,
            contexts: self.contexts[range.clone()].to_vec(),
            pools: self.pools[range].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserModel {
    /// Weights over [`UTILITY_FEATURES`].
    pub utility_weights: Vec<f64>,
    pub noise_sd_low: f64,
    pub noise_sd_high: f64,
    /// Examination probability per position; non-increasing, in (0, 1].
    pub position_bias: [f64; 3],
    /// Utility lost by a suggestion whose paraphrase was shown above it.
    pub redundancy_penalty: f64,
    pub embed_dim: usize,
}

impl UserModel {
    pub fn noise_sd(&self, ctx: &Context) -> f64 {
        match ctx.noise_regime {
            NoiseRegime::Low => self.noise_sd_low,
            NoiseRegime::High => self.noise_sd_high,
        }
    }

    pub fn utility_features(&self, ctx: &Context, s: &Suggestion) -> [f64; 9] {
        let relevance: f64 = ctx.features[..self.embed_dim]
            .iter()
            .zip(&s.embedding)
            .map(|(a, b)| a * b)
            .sum();
        let mismatch = match s.lang.matches(ctx.language) {
            Some(true) => 0.0,
            Some(false) => 1.0,
            None => 0.5,
        };
        let n = s.n_words.max(1) as f64;
        [
            relevance,
            if s.first_is_lead { 1.0 } else { 0.0 },
            s.lead_count.saturating_sub(1) as f64,
            (s.n_words as f64 - 12.0).max(0.0),
            mismatch,
            s.junk_count as f64 / n,
            if s.n_words <= 1 { 1.0 } else { 0.0 },
            if s.text == ctx.prior_query { 1.0 } else { 0.0 },
            1.0,
        ]
    }

    /// Stand-alone utility of a suggestion in a context.
    pub fn utility(&self, ctx: &Context, s: &Suggestion) -> f64 {
        self.utility_features(ctx, s)
            .iter()
            .zip(&self.utility_weights)
            .map(|(f, w)| f * w)
            .sum()
    }

    /// Utilities of a served triple, with the redundancy penalty applied to
    /// any suggestion repeating (by cluster or text) one shown above it.
    pub fn triple_utilities(&self, ctx: &Context, pool: &[Suggestion], triple: [usize; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for k in 0..3 {
            let s = &pool[triple[k]];
            let mut u = self.utility(ctx, s);
            let redundant = (0..k).any(|j| {
                let t = &pool[triple[j]];
                (s.cluster.is_some() && s.cluster == t.cluster) || s.text == t.text
            });
            if redundant {
                u -= self.redundancy_penalty;
            }
            out[k] = u;
        }
        out
    }
}

/// Default ground-truth utility weights over [`UTILITY_FEATURES`].
pub fn default_utility_weights() -> Vec<f64> {
    vec![2.0, 0.6, -1.2, -0.25, -2.0, -3.0, -2.5, -2.5, -2.8]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub n_contexts: usize,
    pub pool_size: usize,
    pub n_topics: usize,
    pub embed_dim: usize,
    pub context_noise: f64,
    pub word_jitter: f64,
    pub zh_fraction: f64,
    pub unsafe_fraction: f64,
    pub high_noise_fraction: f64,
    pub noise_sd_low: f64,
    pub noise_sd_high: f64,
    pub position_bias: [f64; 3],
    pub redundancy_penalty: f64,
    pub utility_weights: Vec<f64>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_contexts: 200,
            pool_size: 12,
            n_topics: 8,
            embed_dim: 6,
            context_noise: 0.25,
            word_jitter: 0.15,
            zh_fraction: 0.3,
            unsafe_fraction: 0.03,
            high_noise_fraction: 0.5,
            noise_sd_low: 0.5,
            noise_sd_high: 2.0,
            position_bias: [1.0, 0.6, 0.4],
            redundancy_penalty: 1.5,
            utility_weights: default_utility_weights(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("world config: {m}")));
        if self.n_contexts == 0 {
            return bad("n_contexts must be >= 1");
        }
        if self.pool_size < 10 {
            return bad("pool_size must be >= 10");
        }
        if self.n_topics == 0 || self.n_topics > lexicon::MAX_TOPICS {
            return bad("n_topics must be in 1..=8");
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be >= 1");
        }
        for (name, f) in [
            ("zh_fraction", self.zh_fraction),
            ("unsafe_fraction", self.unsafe_fraction),
            ("high_noise_fraction", self.high_noise_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(&format!("{name} must be in [0, 1]"));
            }
        }
        if self.noise_sd_low < 0.0 || self.noise_sd_high < 0.0 {
            return bad("noise_sd must be >= 0");
        }
        let b = self.position_bias;
        if b.iter().any(|x| !(*x > 0.0 && *x <= 1.0)) || b[1] > b[0] || b[2] > b[1] {
            return bad("position_bias entries must be in (0, 1] and non-increasing");
        }
        if self.utility_weights.len() != UTILITY_FEATURES.len() {
            return bad("utility_weights must have one entry per utility feature");
        }
        Ok(())
    }

    pub fn context_dim(&self) -> usize {
        self.embed_dim + 2
    }
}

/// Shifts applied to newly sampled contexts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftConfig {
    /// Mean shift of the context topic block per week, along a fixed direction.
    pub drift_step: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self { drift_step: 0.12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub version: u32,
    pub seed: u64,
    pub config: WorldConfig,
    pub lexicon: Lexicon,
    pub drift_dir: Vec<f64>,
    pub user_model: UserModel,
    pub contexts: ContextSet,
}

/// Generate the world: lexicon, user model and `cfg.n_contexts` week-0 contexts.
pub fn gen_world(seed: u64, cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let lexicon = Lexicon::generate(seed, cfg.n_topics, cfg.embed_dim, cfg.word_jitter);
    let drift_dir = lexicon::unit_vector(cfg.embed_dim, &mut rng::stream(seed, "drift-direction"));
    let user_model = UserModel {
        utility_weights: cfg.utility_weights.clone(),
        noise_sd_low: cfg.noise_sd_low,
        noise_sd_high: cfg.noise_sd_high,
        position_bias: cfg.position_bias,
        redundancy_penalty: cfg.redundancy_penalty,
        embed_dim: cfg.embed_dim,
    };
    let mut world = World {
        version: WORLD_VERSION,
        seed,
        config: cfg.clone(),
        lexicon,
        drift_dir,
        user_model,
        contexts: ContextSet {
            label: String::new(),
            week: 0,
            id_base: 0,
            contexts: vec![],
            pools: vec![],
        },
    };
    world.contexts = build_contexts(&world, "world", 0, 0, cfg.n_contexts, 0.0);
    Ok(world)
}

/// Fresh contexts drawn from the world's generator under their own stream.
pub fn sample_contexts(world: &World, label: &str, week: u32, n: usize, drift: &DriftConfig) -> ContextSet {
    let id_base = ((rng::derive(world.seed, label) % 4093) + 1) << 24;
    build_contexts(world, label, week, id_base, n, drift.drift_step)
}

/// Contexts collected `week` weeks after training data: the topic block mean
/// moves by `week * drift_step` along the world's drift direction.
pub fn temporal_shift(world: &World, week: u32, n: usize, drift: &DriftConfig) -> ContextSet {
    sample_contexts(world, &format!("week-{week}"), week, n, drift)
}

/// A preference test set whose suggestions are served by `alt_policy`:
/// fresh contexts from `week`, logged through the click model and curated
/// like the training logs.
#[allow(clippy::too_many_arguments)]
pub fn policy_shift(
    world: &World,
    alt_policy: &dyn ServingPolicy,
    source: SourcePolicy,
    week: u32,
    n_contexts: usize,
    n_impressions: usize,
    drift: &DriftConfig,
    seed: u64,
) -> Result<(ContextSet, Vec<PreferenceTriplet>, CurationStats)> {
    let set = sample_contexts(world, &format!("policy-shift-week-{week}"), week, n_contexts, drift);
    let logs = simulate_logs(&world.user_model, &set, alt_policy, source, n_impressions, seed)?;
    let (triplets, stats) = curate_triplets(&logs, &set, CurationMode::default());
    Ok((set, triplets, stats))
}

fn build_contexts(world: &World, label: &str, week: u32, id_base: u64, n: usize, drift_step: f64) -> ContextSet {
    let stream_seed = rng::derive(world.seed, &format!("contexts/{label}"));
    let (contexts, pools): (Vec<_>, Vec<_>) = (0..n)
        .map(|i| {
            let mut r = rng::stream_u64(stream_seed, i as u64);
            let ctx = make_context(world, id_base + i as u64, week, drift_step, &mut r);
            let pool = make_pool(world, &ctx, &mut r);
            (ctx, pool)
        })
        .unzip();
    ContextSet {
        label: label.to_string(),
        week,
        id_base,
        contexts,
        pools,
    }
}

fn make_context<R: Rng>(world: &World, id: u64, week: u32, drift_step: f64, r: &mut R) -> Context {
    let cfg = &world.config;
    let lex = &world.lexicon;
    let topic = r.random_range(0..cfg.n_topics);
    let language = if r.random::<f64>() < cfg.zh_fraction { Language::Zh } else { Language::En };
    let noise_regime = if r.random::<f64>() < cfg.high_noise_fraction {
        NoiseRegime::High
    } else {
        NoiseRegime::Low
    };
    let is_unsafe = r.random::<f64>() < cfg.unsafe_fraction;
    let mut features: Vec<f64> = lex.topic_dirs[topic]
        .iter()
        .zip(&world.drift_dir)
        .map(|(d, dd)| {
            let e: f64 = StandardNormal.sample(r);
            d + cfg.context_noise * e + week as f64 * drift_step * dd
        })
        .collect();
    features.push(match noise_regime {
        NoiseRegime::Low => -1.0,
        NoiseRegime::High => 1.0,
    });
    features.push(match language {
        Language::En => -1.0,
        Language::Zh => 1.0,
    });
    let prior_query = normal_tokens(lex, language, topic, false, r).join(" ");
    Context {
        id,
        features,
        language,
        is_unsafe,
        week,
        topic,
        noise_regime,
        prior_query,
    }
}

fn pick<R: Rng>(xs: &[&'static str], r: &mut R) -> &'static str {
    xs[r.random_range(0..xs.len())]
}

fn distinct_topic_words<R: Rng>(lex: &Lexicon, lang: Language, topic: usize, k: usize, r: &mut R) -> Vec<&'static str> {
    let mut idx: Vec<usize> = (0..6).collect();
    idx.shuffle(r);
    idx[..k].iter().map(|&i| lex.topic_word(lang, topic, i)).collect()
}

/// A plain suggestion: optional lead keyword, then fillers and 2-3 topic words.
fn normal_tokens<R: Rng>(lex: &Lexicon, lang: Language, topic: usize, lead: bool, r: &mut R) -> Vec<&'static str> {
    let n_topic = r.random_range(2..=3);
    let n_fill = r.random_range(1..=3);
    let mut body = distinct_topic_words(lex, lang, topic, n_topic, r);
    for _ in 0..n_fill {
        body.push(pick(lexicon::fillers(lang), r));
    }
    body.shuffle(r);
    if lead {
        body.insert(0, pick(lexicon::leads(lang), r));
    }
    body
}

fn paraphrase<R: Rng>(lang: Language, base: &[&'static str], lex: &Lexicon, r: &mut R) -> Vec<&'static str> {
    // Swap one filler for another and move one non-lead token.
    let mut out = base.to_vec();
    let start = usize::from(matches!(lex.classify(out[0]), Some((_, WordClass::Lead))));
    let filler_pos: Vec<usize> = (start..out.len())
        .filter(|&i| matches!(lex.classify(out[i]), Some((_, WordClass::Filler))))
        .collect();
    if let Some(&p) = filler_pos.first() {
        let mut w = pick(lexicon::fillers(lang), r);
        while w == out[p] {
            w = pick(lexicon::fillers(lang), r);
        }
        out[p] = w;
    } else {
        out.push(pick(lexicon::fillers(lang), r));
    }
    if out.len() - start >= 2 {
        let a = r.random_range(start..out.len());
        let b = r.random_range(start..out.len());
        out.swap(a, b);
    }
    out
}

fn make_suggestion(
    lex: &Lexicon,
    tokens: &[&str],
    kind: CandidateKind,
    cluster: Option<u32>,
    naturalness: f64,
) -> Suggestion {
    let text = tokens.join(" ");
    let mut emb = vec![0.0; lex.embed_dim];
    let mut n_topic = 0usize;
    let mut lead_count = 0u32;
    let mut junk_count = 0u32;
    let mut langs = (false, false);
    for t in tokens {
        match lex.classify(t) {
            Some((lang, class)) => {
                match lang {
                    Language::En => langs.0 = true,
                    Language::Zh => langs.1 = true,
                }
                match class {
                    WordClass::Topic(_) => {
                        let e = lex.embedding_of(t).expect("topic word has embedding");
                        emb.iter_mut().zip(e).for_each(|(a, b)| *a += b);
                        n_topic += 1;
                    }
                    WordClass::Lead => lead_count += 1,
                    WordClass::Junk | WordClass::Generic => junk_count += 1,
                    _ => {}
                }
            }
            None => junk_count += 1,
        }
    }
    if n_topic > 0 {
        emb.iter_mut().for_each(|x| *x /= n_topic as f64);
    }
    let lang = match langs {
        (true, false) => LangTag::En,
        (false, true) => LangTag::Zh,
        _ => LangTag::Ambiguous,
    };
    let first_is_lead = tokens
        .first()
        .is_some_and(|t| matches!(lex.classify(t), Some((_, WordClass::Lead))));
    Suggestion {
        text,
        lang,
        kind,
        cluster,
        embedding: emb,
        naturalness,
        lead_count,
        first_is_lead,
        junk_count,
        n_words: tokens.len() as u32,
    }
}

fn make_pool<R: Rng>(world: &World, ctx: &Context, r: &mut R) -> Vec<Suggestion> {
    let lex = &world.lexicon;
    let cfg = &world.config;
    let lang = ctx.language;
    let topic = ctx.topic;
    let other_topic = |r: &mut R| {
        if cfg.n_topics == 1 {
            topic
        } else {
            (topic + r.random_range(1..cfg.n_topics)) % cfg.n_topics
        }
    };
    let mut pool = Vec::with_capacity(cfg.pool_size);

    // Two paraphrase clusters.
    let a = normal_tokens(lex, lang, topic, r.random::<bool>(), r);
    let b = normal_tokens(lex, lang, topic, r.random::<bool>(), r);
    pool.push(make_suggestion(lex, &a, CandidateKind::Paraphrase, Some(0), 0.0));
    pool.push(make_suggestion(lex, &paraphrase(lang, &a, lex, r), CandidateKind::Paraphrase, Some(0), 0.0));
    pool.push(make_suggestion(lex, &b, CandidateKind::Paraphrase, Some(1), 0.0));
    pool.push(make_suggestion(lex, &paraphrase(lang, &b, lex, r), CandidateKind::Paraphrase, Some(1), 0.0));

    let t = other_topic(r);
    let off = normal_tokens(lex, lang, t, r.random::<bool>(), r);
    pool.push(make_suggestion(lex, &off, CandidateKind::OffTopic, None, -0.3));

    let rep: Vec<&str> = ctx.prior_query.split_whitespace().collect();
    pool.push(make_suggestion(lex, &rep, CandidateKind::Repeat, None, -0.5));

    let mut long = normal_tokens(lex, lang, topic, false, r);
    let target = r.random_range(14..=19);
    while long.len() < target {
        let w = if r.random::<f64>() < 0.3 {
            lex.topic_word(lang, topic, r.random_range(0..6))
        } else {
            pick(lexicon::fillers(lang), r)
        };
        long.push(w);
    }
    pool.push(make_suggestion(lex, &long, CandidateKind::Long, None, -0.5));

    let mismatched = if r.random::<f64>() < 0.7 {
        normal_tokens(lex, lang.other(), topic, false, r)
    } else {
        let mut m = normal_tokens(lex, lang, topic, false, r);
        m.push(lex.topic_word(lang.other(), topic, r.random_range(0..6)));
        m.push(pick(lexicon::fillers(lang.other()), r));
        m
    };
    pool.push(make_suggestion(lex, &mismatched, CandidateKind::Mismatched, None, -1.0));

    pool.push(make_suggestion(lex, &[pick(lexicon::stubs(lang), r)], CandidateKind::Stub, None, -1.0));

    let lead = pick(lexicon::leads(lang), r);
    let mut hack = vec![lead, lead, lead];
    hack.extend(distinct_topic_words(lex, lang, topic, 2, r));
    hack.push(pick(lexicon::generics(lang), r));
    hack.push(pick(lexicon::generics(lang), r));
    hack.push(pick(lexicon::junk(lang), r));
    pool.push(make_suggestion(lex, &hack, CandidateKind::Hack, None, -4.0));

    // Remaining slots: a third member of cluster 0, then single on-topic and
    // off-topic suggestions alternately.
    let mut k = 0;
    while pool.len() < cfg.pool_size {
        let s = match k {
            0 => make_suggestion(lex, &paraphrase(lang, &a, lex, r), CandidateKind::Paraphrase, Some(0), 0.0),
            k if k % 2 == 1 => {
                make_suggestion(lex, &normal_tokens(lex, lang, topic, r.random::<bool>(), r), CandidateKind::OnTopic, None, 0.0)
            }
            _ => {
                let t = other_topic(r);
                make_suggestion(lex, &normal_tokens(lex, lang, t, r.random::<bool>(), r), CandidateKind::OffTopic, None, -0.3)
            }
        };
        pool.push(s);
        k += 1;
    }
    pool.shuffle(r);
    pool
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_world() {
        let cfg = WorldConfig { n_contexts: 30, ..Default::default() };
        let a = gen_world(5, &cfg).unwrap();
        let b = gen_world(5, &cfg).unwrap();
        assert_eq!(a, b);
        let c = gen_world(6, &cfg).unwrap();
        assert_ne!(a.contexts, c.contexts);
    }

    #[test]
    fn unsafe_fraction_is_binomial() {
        let cfg = WorldConfig { n_contexts: 20_000, unsafe_fraction: 0.03, ..Default::default() };
        let w = gen_world(9, &cfg).unwrap();
        let k = w.contexts.contexts.iter().filter(|c| c.is_unsafe).count() as f64;
        let n = 20_000.0;
        let sd = (n * 0.03 * 0.97f64).sqrt();
        assert!((k - n * 0.03).abs() < 3.0 * sd, "{k}");
    }

    #[test]
    fn pools_contain_a_paraphrase_cluster_and_distractors() {
        let w = gen_world(1, &WorldConfig { n_contexts: 50, ..Default::default() }).unwrap();
        for (ctx, pool) in w.contexts.contexts.iter().zip(&w.contexts.pools) {
            assert_eq!(pool.len(), 12);
            let mut counts = std::collections::HashMap::new();
            for s in pool {
                if let Some(c) = s.cluster {
                    *counts.entry(c).or_insert(0) += 1;
                }
            }
            assert!(counts.values().any(|&n| n >= 2));
            assert!(pool.iter().any(|s| s.n_words > 12));
            assert!(pool.iter().any(|s| s.lang.matches(ctx.language) != Some(true)));
            assert!(pool.iter().any(|s| s.text == ctx.prior_query));
        }
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        for cfg in [
            WorldConfig { n_contexts: 0, ..Default::default() },
            WorldConfig { pool_size: 3, ..Default::default() },
            WorldConfig { position_bias: [0.5, 0.7, 0.1], ..Default::default() },
            WorldConfig { unsafe_fraction: 1.5, ..Default::default() },
        ] {
            assert!(matches!(gen_world(1, &cfg), Err(Error::InvalidInput(_))));
        }
    }

    #[test]
    fn zero_drift_keeps_the_distribution() {
        let w = gen_world(2, &WorldConfig { n_contexts: 5, ..Default::default() }).unwrap();
        let d0 = DriftConfig { drift_step: 0.0 };
        let a = temporal_shift(&w, 3, 400, &d0);
        let b = sample_contexts(&w, "week-3", 3, 400, &DriftConfig { drift_step: 0.5 });
        // Same stream, only the drift differs: the difference is exactly 3 * 0.5 * dir.
        for (x, y) in a.contexts.iter().zip(&b.contexts) {
            for k in 0..6 {
                let expect = 1.5 * w.drift_dir[k];
                assert!((y.features[k] - x.features[k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn drift_grows_linearly_in_week() {
        let w = gen_world(2, &WorldConfig { n_contexts: 5, ..Default::default() }).unwrap();
        let drift = DriftConfig { drift_step: 0.2 };
        let mean_proj = |set: &ContextSet| {
            set.contexts
                .iter()
                .map(|c| c.features[..6].iter().zip(&w.drift_dir).map(|(a, b)| a * b).sum::<f64>())
                .sum::<f64>()
                / set.len() as f64
        };
        let base = sample_contexts(&w, "w", 0, 3000, &drift);
        let w2 = sample_contexts(&w, "w", 2, 3000, &drift);
        let w4 = sample_contexts(&w, "w", 4, 3000, &drift);
        assert!((mean_proj(&w2) - mean_proj(&base) - 0.4).abs() < 1e-9);
        assert!((mean_proj(&w4) - mean_proj(&base) - 0.8).abs() < 1e-9);
    }

    #[test]
    fn utility_orders_candidate_kinds_sensibly() {
        let w = gen_world(4, &WorldConfig { n_contexts: 200, ..Default::default() }).unwrap();
        let um = &w.user_model;
        let mut by_kind: std::collections::HashMap<CandidateKind, Vec<f64>> = Default::default();
        for (ctx, pool) in w.contexts.contexts.iter().zip(&w.contexts.pools) {
            for s in pool {
                by_kind.entry(s.kind).or_default().push(um.utility(ctx, s));
            }
        }
        let m = |k| crate::math::mean(&by_kind[&k]);
        assert!(m(CandidateKind::Paraphrase) > m(CandidateKind::OffTopic));
        assert!(m(CandidateKind::Paraphrase) > m(CandidateKind::Hack));
        assert!(m(CandidateKind::Paraphrase) > m(CandidateKind::Long));
        assert!(m(CandidateKind::Paraphrase) > m(CandidateKind::Mismatched));
        assert!(m(CandidateKind::Paraphrase) > m(CandidateKind::Stub));
    }
}

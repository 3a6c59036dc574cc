//! Examination-hypothesis click model and click-log simulation.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Context, ContextSet, SourcePolicy, Suggestion, UserModel};
use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickLogRecord {
    pub context_id: u64,
    /// Pool indices of the suggestions served at positions 1..3.
    pub triple: [usize; 3],
    pub examined: [bool; 3],
    /// 1-based position of the click, if any.
    pub clicked_position: Option<u8>,
    pub week: u32,
    pub serving_policy: SourcePolicy,
    /// Ground-truth utilities of the served suggestions, after redundancy.
    pub utilities: [f64; 3],
}

fn validate_triple(pool: &[Suggestion], triple: &[usize]) -> Result<[usize; 3]> {
    let t: [usize; 3] = triple
        .try_into()
        .map_err(|_| Error::invalid(format!("a served group needs 3 suggestions, got {}", triple.len())))?;
    if t.iter().any(|&i| i >= pool.len()) {
        return Err(Error::invalid("triple index outside the candidate pool"));
    }
    if t[0] == t[1] || t[0] == t[2] || t[1] == t[2] {
        return Err(Error::invalid("triple indices must be distinct"));
    }
    Ok(t)
}

/// Serve `triple` (pool indices) in `ctx` and simulate one top-down scan.
pub fn serve_and_click(
    um: &UserModel,
    ctx: &Context,
    pool: &[Suggestion],
    triple: &[usize],
    serving_policy: SourcePolicy,
    seed: u64,
) -> Result<ClickLogRecord> {
    let triple = validate_triple(pool, triple)?;
    let utilities = um.triple_utilities(ctx, pool, triple);
    let mut r = rng::from_seed(seed);
    Ok(scan(um, ctx, triple, utilities, serving_policy, &mut r))
}

pub(crate) fn scan<R: Rng>(
    um: &UserModel,
    ctx: &Context,
    triple: [usize; 3],
    utilities: [f64; 3],
    serving_policy: SourcePolicy,
    r: &mut R,
) -> ClickLogRecord {
    let sd = um.noise_sd(ctx);
    let mut examined = [false; 3];
    let mut clicked_position = None;
    for k in 0..3 {
        // Draws are consumed in a fixed order so outcomes depend only on the seed.
        let e: f64 = r.random();
        let z: f64 = StandardNormal.sample(r);
        let c: f64 = r.random();
        if e < um.position_bias[k] {
            examined[k] = true;
            if c < sigmoid(utilities[k] + sd * z) {
                clicked_position = Some(k as u8 + 1);
                break;
            }
        }
    }
    ClickLogRecord {
        context_id: ctx.id,
        triple,
        examined,
        clicked_position,
        week: ctx.week,
        serving_policy,
        utilities,
    }
}

fn normal_grid() -> &'static (Vec<f64>, Vec<f64>) {
    static GRID: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    GRID.get_or_init(|| {
        let n = 401;
        let (lo, hi) = (-10.0f64, 10.0f64);
        let h = (hi - lo) / (n - 1) as f64;
        let z: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
        let mut w: Vec<f64> = z
            .iter()
            .map(|x| h * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt())
            .collect();
        w[0] *= 0.5;
        w[n - 1] *= 0.5;
        (z, w)
    })
}

/// E[sigmoid(u + sd·Z)] for standard normal Z, by quadrature.
pub fn expected_click_prob(u: f64, sd: f64) -> f64 {
    if sd == 0.0 || u == f64::NEG_INFINITY || u == f64::INFINITY {
        return sigmoid(u);
    }
    let (z, w) = normal_grid();
    z.iter().zip(w).map(|(z, w)| w * sigmoid(u + sd * z)).sum()
}

/// Exact probabilities of a click at positions 1, 2, 3 and of no click.
pub fn click_probabilities(um: &UserModel, utilities: [f64; 3], noise_sd: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    let mut survive = 1.0;
    for k in 0..3 {
        let p = um.position_bias[k] * expected_click_prob(utilities[k], noise_sd);
        out[k] = survive * p;
        survive *= 1.0 - p;
    }
    out[3] = survive;
    out
}

/// Serving decision for one impression: a triple of pool indices, or `None`
/// when the group is withheld (a refusal is not logged).
pub trait ServingPolicy: Sync {
    fn serve(&self, ctx: &Context, pool: &[Suggestion], r: &mut StreamRng) -> Option<[usize; 3]>;
}

impl<F> ServingPolicy for F
where
    F: Fn(&Context, &[Suggestion], &mut StreamRng) -> Option<[usize; 3]> + Sync,
{
    fn serve(&self, ctx: &Context, pool: &[Suggestion], r: &mut StreamRng) -> Option<[usize; 3]> {
        self(ctx, pool, r)
    }
}

/// The base generator: Plackett-Luce top-3 over candidate naturalness.
pub fn base_serve(_ctx: &Context, pool: &[Suggestion], r: &mut StreamRng) -> Option<[usize; 3]> {
    let mut w: Vec<f64> = pool.iter().map(|s| s.naturalness.exp()).collect();
    let mut out = [0usize; 3];
    for slot in &mut out {
        let total: f64 = w.iter().sum();
        let mut x = r.random::<f64>() * total;
        let mut pick = w.len() - 1;
        for (i, wi) in w.iter().enumerate() {
            if *wi > 0.0 && x < *wi {
                pick = i;
                break;
            }
            x -= wi;
        }
        while w[pick] == 0.0 {
            pick -= 1;
        }
        *slot = pick;
        w[pick] = 0.0;
    }
    Some(out)
}

/// Simulate `n_impressions` impressions, cycling over the contexts of `set`.
/// Impression `i` draws from its own derived stream, so results do not
/// depend on thread count.
pub fn simulate_logs(
    um: &UserModel,
    set: &ContextSet,
    policy: &dyn ServingPolicy,
    serving_policy: SourcePolicy,
    n_impressions: usize,
    seed: u64,
) -> Result<Vec<ClickLogRecord>> {
    if set.is_empty() {
        return Err(Error::invalid("cannot simulate logs over an empty context set"));
    }
    let base = rng::derive(seed, &format!("impressions/{}", set.label));
    let records: Vec<Option<ClickLogRecord>> = (0..n_impressions)
        .into_par_iter()
        .map(|i| {
            let ci = i % set.len();
            let ctx = &set.contexts[ci];
            let pool = &set.pools[ci];
            let mut r = rng::stream_u64(base, i as u64);
            let triple = policy.serve(ctx, pool, &mut r)?;
            let utilities = um.triple_utilities(ctx, pool, triple);
            Some(scan(um, ctx, triple, utilities, serving_policy, &mut r))
        })
        .collect();
    Ok(records.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clicksim::{gen_world, WorldConfig};

    fn flat_user(bias: [f64; 3], sd: f64) -> UserModel {
        UserModel {
            utility_weights: vec![0.0; 9],
            noise_sd_low: sd,
            noise_sd_high: sd,
            position_bias: bias,
            redundancy_penalty: 0.0,
            embed_dim: 6,
        }
    }

    #[test]
    fn enumerated_scan_probabilities() {
        let um = flat_user([1.0, 0.6, 0.4], 0.0);
        let p = click_probabilities(&um, [0.0; 3], 0.0);
        // Brute-force over examine/click outcomes of the scan tree.
        let mut brute = [0.0; 4];
        for mask in 0..64u32 {
            let mut prob = 1.0;
            let mut clicked = 3;
            for k in 0..3 {
                let e = mask >> (2 * k) & 1 == 1;
                let c = mask >> (2 * k + 1) & 1 == 1;
                let pb = um.position_bias[k];
                prob *= if e { pb } else { 1.0 - pb } * 0.5;
                if clicked == 3 && e && c {
                    clicked = k;
                }
            }
            brute[clicked] += prob;
        }
        for k in 0..4 {
            assert!((p[k] - brute[k]).abs() < 1e-12);
        }
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!((p[1] - 0.15).abs() < 1e-12);
        assert!((p[2] - 0.07).abs() < 1e-12);
    }

    #[test]
    fn minus_infinity_never_clicks() {
        let um = flat_user([1.0; 3], 1.0);
        let p = click_probabilities(&um, [f64::NEG_INFINITY; 3], 1.0);
        assert_eq!(p[3], 1.0);
    }

    #[test]
    fn quadrature_matches_closed_limit() {
        assert!((expected_click_prob(0.3, 0.0) - sigmoid(0.3)).abs() < 1e-15);
        assert!((expected_click_prob(0.0, 2.0) - 0.5).abs() < 1e-12);
        // Probit approximation is within a percent.
        let approx = sigmoid(1.0 / (1.0 + std::f64::consts::PI / 8.0 * 4.0).sqrt());
        assert!((expected_click_prob(1.0, 2.0) - approx).abs() < 0.01);
    }

    #[test]
    fn serve_is_deterministic_and_rejects_bad_triples() {
        let w = gen_world(3, &WorldConfig { n_contexts: 4, ..Default::default() }).unwrap();
        let (ctx, pool) = (&w.contexts.contexts[0], &w.contexts.pools[0]);
        let a = serve_and_click(&w.user_model, ctx, pool, &[0, 1, 2], SourcePolicy::Base, 11).unwrap();
        let b = serve_and_click(&w.user_model, ctx, pool, &[0, 1, 2], SourcePolicy::Base, 11).unwrap();
        assert_eq!(a, b);
        assert!(serve_and_click(&w.user_model, ctx, pool, &[0, 1], SourcePolicy::Base, 1).is_err());
        assert!(serve_and_click(&w.user_model, ctx, pool, &[0, 0, 1], SourcePolicy::Base, 1).is_err());
    }
}

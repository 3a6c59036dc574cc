//! Plackett-Luce triple selector with an atomic refuse action.
//!
//! The refuse action's softmax mass is taken against a fixed serve logit of
//! zero: π(refuse) = σ(r). Serving then draws a top-3 ordering from the
//! item scores, so π(triple) = σ(−r)·PL(triple).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clicksim::{Context, ContextSet, Suggestion};
use crate::error::{Error, Result};
use crate::math::{log_sigmoid, logsumexp};
use crate::text::{hashed_unigrams, jaccard};

/// Hash buckets for the unigram block of the item features.
pub const ITEM_HASH_BUCKETS: usize = 16;
/// Initial refuse logit: refusals start out rare.
pub const REFUSE_BIAS_INIT: f64 = -6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Refuse,
    Triple([usize; 3]),
}

/// Item feature layout for an embedding dimension `e`:
/// `[x ⊗ emb (e²) | emb (e) | hashed unigrams | scalars]` where `x` is the
/// context's topic block.
pub const ITEM_SCALARS: [&str; 8] = [
    "words",
    "excess_words",
    "lang_match",
    "naturalness",
    "lead_first",
    "extra_leads",
    "junk_fraction",
    "prior_overlap",
];

pub fn item_dim(embed_dim: usize) -> usize {
    embed_dim * embed_dim + embed_dim + ITEM_HASH_BUCKETS + ITEM_SCALARS.len()
}

/// The refuse action sees only the unsafe cue and a bias, so a handful of
/// unsafe training contexts is enough to learn a rule that transfers.
pub fn refuse_dim() -> usize {
    2
}

/// Index of the naturalness scalar within the item features.
pub fn naturalness_index(embed_dim: usize) -> usize {
    embed_dim * embed_dim + embed_dim + ITEM_HASH_BUCKETS + 3
}

pub fn item_features(ctx: &Context, s: &Suggestion) -> Vec<f64> {
    let e = s.embedding.len();
    let x = &ctx.features[..e];
    let mut f = Vec::with_capacity(item_dim(e));
    for xi in x {
        for ej in &s.embedding {
            f.push(xi * ej);
        }
    }
    f.extend_from_slice(&s.embedding);
    f.extend(hashed_unigrams(&s.text, ITEM_HASH_BUCKETS).into_iter().map(|c| 0.5 * c));
    let n = s.n_words as f64;
    f.push(n / 12.0);
    f.push((n - 12.0).max(0.0) / 5.0);
    f.push(match s.lang.matches(ctx.language) {
        Some(true) => 1.0,
        Some(false) => 0.0,
        None => 0.5,
    });
    f.push(s.naturalness);
    f.push(if s.first_is_lead { 1.0 } else { 0.0 });
    f.push(s.lead_count.saturating_sub(1) as f64);
    f.push(s.junk_count as f64 / n.max(1.0));
    f.push(jaccard(&ctx.prior_query, &s.text));
    f
}

pub fn refuse_features(ctx: &Context) -> Vec<f64> {
    vec![if ctx.is_unsafe { 1.0 } else { 0.0 }, 1.0]
}

/// Precomputed policy inputs for one context and its pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInputs {
    pub context_id: u64,
    pub phi: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
}

impl PolicyInputs {
    pub fn new(ctx: &Context, pool: &[Suggestion]) -> Self {
        Self {
            context_id: ctx.id,
            phi: pool.iter().map(|s| item_features(ctx, s)).collect(),
            psi: refuse_features(ctx),
        }
    }

    pub fn pool_size(&self) -> usize {
        self.phi.len()
    }
}

pub fn build_inputs(set: &ContextSet) -> Vec<PolicyInputs> {
    set.contexts.iter().zip(&set.pools).map(|(c, p)| PolicyInputs::new(c, p)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub w_item: Vec<f64>,
    pub w_refuse: Vec<f64>,
    pub temperature: f64,
}

/// Scores of one context: per pool item and for refusal, already divided by
/// the temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub items: Vec<f64>,
    pub refuse: f64,
}

impl Policy {
    /// The base generator: items scored by naturalness alone, refusals rare.
    pub fn base(embed_dim: usize) -> Self {
        let mut w_item = vec![0.0; item_dim(embed_dim)];
        w_item[naturalness_index(embed_dim)] = 1.0;
        let mut w_refuse = vec![0.0; refuse_dim()];
        *w_refuse.last_mut().expect("refuse weights are non-empty") = REFUSE_BIAS_INIT;
        Self { w_item, w_refuse, temperature: 1.0 }
    }

    pub fn n_params(&self) -> usize {
        self.w_item.len() + self.w_refuse.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = self.w_item.clone();
        v.extend_from_slice(&self.w_refuse);
        v
    }

    pub fn set_params(&mut self, v: &[f64]) {
        let n = self.w_item.len();
        self.w_item.copy_from_slice(&v[..n]);
        self.w_refuse.copy_from_slice(&v[n..]);
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::invalid("policy temperature must be positive and finite"));
        }
        if self.w_item.iter().chain(&self.w_refuse).any(|w| !w.is_finite()) {
            return Err(Error::numeric("policy weights are not finite"));
        }
        Ok(())
    }

    pub fn scores(&self, inp: &PolicyInputs) -> Scores {
        let t = self.temperature;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        Scores {
            items: inp.phi.iter().map(|f| dot(&self.w_item, f) / t).collect(),
            refuse: dot(&self.w_refuse, &inp.psi) / t,
        }
    }

    /// Chain d/d(scores) back to the flat parameter vector (accumulating).
    pub fn accumulate_param_grad(&self, inp: &PolicyInputs, d_items: &[f64], d_refuse: f64, grad: &mut [f64]) {
        let t = self.temperature;
        let n = self.w_item.len();
        for (f, d) in inp.phi.iter().zip(d_items) {
            if *d == 0.0 {
                continue;
            }
            for (g, x) in grad[..n].iter_mut().zip(f) {
                *g += d * x / t;
            }
        }
        if d_refuse != 0.0 {
            for (g, x) in grad[n..].iter_mut().zip(&inp.psi) {
                *g += d_refuse * x / t;
            }
        }
    }
}

fn check_action(n: usize, a: &Action) -> Result<()> {
    if let Action::Triple(t) = a {
        if t.iter().any(|&i| i >= n) || t[0] == t[1] || t[0] == t[2] || t[1] == t[2] {
            return Err(Error::invalid(format!("action {t:?} is not a valid triple for a pool of {n}")));
        }
    }
    Ok(())
}

/// log π(a) from scores, with d log π / d(scores) accumulated into the
/// optional outputs (scaled by `scale`).
pub fn logprob_scores(s: &Scores, a: &Action, grad: Option<(&mut [f64], &mut f64, f64)>) -> f64 {
    let n = s.items.len();
    let p_refuse = log_sigmoid(s.refuse).exp();
    match a {
        Action::Refuse => {
            if let Some((_, gr, scale)) = grad {
                *gr += scale * (1.0 - p_refuse);
            }
            log_sigmoid(s.refuse)
        }
        Action::Triple(t) => {
            let z1 = logsumexp(&s.items);
            let mut lp = log_sigmoid(-s.refuse) + s.items[t[0]] - z1;
            let mut grad = grad;
            if let Some((gi, gr, scale)) = grad.as_mut() {
                for i in 0..n {
                    gi[i] -= *scale * (s.items[i] - z1).exp();
                }
                gi[t[0]] += *scale;
                **gr -= *scale * p_refuse;
            }
            let mut used = [t[0], usize::MAX];
            for step in 1..3 {
                let rest: Vec<usize> = (0..n).filter(|i| !used[..step].contains(i)).collect();
                let vals: Vec<f64> = rest.iter().map(|&i| s.items[i]).collect();
                let z = logsumexp(&vals);
                lp += s.items[t[step]] - z;
                if let Some((gi, _, scale)) = grad.as_mut() {
                    for &i in &rest {
                        gi[i] -= *scale * (s.items[i] - z).exp();
                    }
                    gi[t[step]] += *scale;
                }
                if step == 1 {
                    used[1] = t[1];
                }
            }
            lp
        }
    }
}

pub fn logprob(p: &Policy, inp: &PolicyInputs, a: &Action) -> Result<f64> {
    check_action(inp.pool_size(), a)?;
    Ok(logprob_scores(&p.scores(inp), a, None))
}

/// Log-normalisers of every sequential choice in one context, enough to
/// read off the log-probability of any action in O(1).
pub struct ActionTable {
    n: usize,
    items: Vec<f64>,
    /// log π(refuse) and log π(serve).
    lp_refuse: f64,
    lp_serve: f64,
    /// Normaliser of the first item choice.
    z1: f64,
    /// `z2[i]`: log Σ over items except i.
    z2: Vec<f64>,
    /// `z3[i*n + j]`: log Σ over items except i and j.
    z3: Vec<f64>,
}

impl ActionTable {
    pub fn new(s: &Scores) -> Self {
        let n = s.items.len();
        let z1 = logsumexp(&s.items);
        let mut buf = Vec::with_capacity(n);
        let z2: Vec<f64> = (0..n)
            .map(|i| {
                buf.clear();
                buf.extend((0..n).filter(|&l| l != i).map(|l| s.items[l]));
                logsumexp(&buf)
            })
            .collect();
        let mut z3 = vec![f64::NEG_INFINITY; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    buf.clear();
                    buf.extend((0..n).filter(|&l| l != i && l != j).map(|l| s.items[l]));
                    z3[i * n + j] = logsumexp(&buf);
                }
            }
        }
        Self {
            n,
            items: s.items.clone(),
            lp_refuse: log_sigmoid(s.refuse),
            lp_serve: log_sigmoid(-s.refuse),
            z1,
            z2,
            z3,
        }
    }

    pub fn pool_size(&self) -> usize {
        self.n
    }

    pub fn lp_refuse(&self) -> f64 {
        self.lp_refuse
    }

    pub fn lp_triple(&self, i: usize, j: usize, k: usize) -> f64 {
        self.lp_serve
            + (self.items[i] - self.z1) + (self.items[j] - self.z2[i]) + (self.items[k] - self.z3[i * self.n + j])
    }

    pub fn lp(&self, a: &Action) -> f64 {
        match a {
            Action::Refuse => self.lp_refuse(),
            Action::Triple([i, j, k]) => self.lp_triple(*i, *j, *k),
        }
    }

    /// Visit refusal, then every ordered triple in lexicographic order.
    pub fn for_each(&self, mut f: impl FnMut(Action, f64)) {
        f(Action::Refuse, self.lp_refuse());
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                if j == i {
                    continue;
                }
                for k in 0..n {
                    if k != i && k != j {
                        f(Action::Triple([i, j, k]), self.lp_triple(i, j, k));
                    }
                }
            }
        }
    }

    /// Accumulate Σ_a w(a) ∇ log π(a) with respect to the scores, given the
    /// refusal weight and per-triple weights `w3[(i*n + j)*n + k]`.
    pub fn accumulate_weighted_grad(&self, w_refuse: f64, w3: &[f64], gi: &mut [f64], gr: &mut f64) {
        let n = self.n;
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n * n];
        let mut first = vec![0.0; n];
        let mut second = vec![0.0; n];
        let mut third = vec![0.0; n];
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if j == i {
                    continue;
                }
                for k in 0..n {
                    if k == i || k == j {
                        continue;
                    }
                    let w = w3[(i * n + j) * n + k];
                    if w == 0.0 {
                        continue;
                    }
                    total += w;
                    a[i] += w;
                    b[i * n + j] += w;
                    first[i] += w;
                    second[j] += w;
                    third[k] += w;
                }
            }
        }
        for l in 0..n {
            gi[l] += first[l] + second[l] + third[l] - total * (self.items[l] - self.z1).exp();
        }
        *gr += w_refuse - (w_refuse + total) * self.lp_refuse.exp();
        for i in 0..n {
            if a[i] != 0.0 {
                for l in 0..n {
                    if l != i {
                        gi[l] -= a[i] * (self.items[l] - self.z2[i]).exp();
                    }
                }
            }
            for j in 0..n {
                let bij = b[i * n + j];
                if bij == 0.0 {
                    continue;
                }
                let z = self.z3[i * n + j];
                for l in 0..n {
                    if l != i && l != j {
                        gi[l] -= bij * (self.items[l] - z).exp();
                    }
                }
            }
        }
    }
}

/// Every action with its log-probability: refusal first, then ordered
/// triples in lexicographic order.
pub fn enumerate_actions(s: &Scores) -> Vec<(Action, f64)> {
    let t = ActionTable::new(s);
    let n = s.items.len();
    let mut out = Vec::with_capacity(1 + n * n.saturating_sub(1) * n.saturating_sub(2));
    t.for_each(|a, lp| out.push((a, lp)));
    out
}

/// Draw one action by sequential choice without replacement.
pub fn sample_action<R: Rng>(s: &Scores, r: &mut R) -> Action {
    if r.random::<f64>() < log_sigmoid(s.refuse).exp() {
        return Action::Refuse;
    }
    let first = sample_softmax(&s.items, r);
    let mut t = [first, 0, 0];
    let mut masked = s.items.clone();
    masked[first] = f64::NEG_INFINITY;
    t[1] = sample_softmax(&masked, r);
    masked[t[1]] = f64::NEG_INFINITY;
    t[2] = sample_softmax(&masked, r);
    Action::Triple(t)
}

/// Refuse when refusal is more likely than serving, otherwise the three
/// best items in order.
pub fn greedy_action(s: &Scores) -> Action {
    let mut order: Vec<usize> = (0..s.items.len()).collect();
    order.sort_by(|a, b| s.items[*b].total_cmp(&s.items[*a]).then(a.cmp(b)));
    if order.len() < 3 || s.refuse > 0.0 {
        return Action::Refuse;
    }
    Action::Triple([order[0], order[1], order[2]])
}

fn sample_softmax<R: Rng>(x: &[f64], r: &mut R) -> usize {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = r.random::<f64>() * total;
    let mut last = 0;
    for (i, wi) in w.iter().enumerate() {
        if *wi > 0.0 {
            last = i;
            if u < *wi {
                return i;
            }
            u -= wi;
        }
    }
    last
}

/// KL(π_p ‖ π_q) over the full action set of one context, with
/// `scale`·dKL/d(scores of p) accumulated into the optional outputs.
pub fn kl_scores(sp: &Scores, sq: &Scores, grad: Option<(&mut [f64], &mut f64, f64)>) -> f64 {
    let tp = ActionTable::new(sp);
    let tq = ActionTable::new(sq);
    let n = tp.pool_size();
    let want_grad = grad.is_some();
    let mut w3 = if want_grad { vec![0.0; n * n * n] } else { Vec::new() };
    let mut kl = 0.0;
    let mut term = |lp: f64, lq: f64| -> f64 {
        let p = lp.exp();
        if p == 0.0 {
            return 0.0;
        }
        let d = lp - lq;
        kl += p * d;
        p * d
    };
    let w_refuse = term(tp.lp_refuse(), tq.lp_refuse());
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            for k in 0..n {
                if k != i && k != j {
                    let w = term(tp.lp_triple(i, j, k), tq.lp_triple(i, j, k));
                    if want_grad {
                        w3[(i * n + j) * n + k] = w;
                    }
                }
            }
        }
    }
    if let Some((gi, gr, scale)) = grad {
        // ∇KL = Σ_a π(a) (log π(a) − log q(a)) ∇log π(a); the product rule's
        // remaining term sums to zero.
        let mut g = vec![0.0; n];
        let mut r = 0.0;
        tp.accumulate_weighted_grad(w_refuse, &w3, &mut g, &mut r);
        for l in 0..n {
            gi[l] += scale * g[l];
        }
        *gr += scale * r;
    }
    kl.max(0.0)
}

pub fn kl(p: &Policy, q: &Policy, inp: &PolicyInputs) -> f64 {
    kl_scores(&p.scores(inp), &q.scores(inp), None)
}

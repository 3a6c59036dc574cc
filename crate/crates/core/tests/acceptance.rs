//! End-to-end acceptance checks.
//!
//! Every check prints one `PASS`/`FAIL` line (written straight to stdout so
//! it shows up without `--nocapture`); the test fails if any check does.
//! The checks run sequentially so the pipeline timing is not inflated by
//! the Monte-Carlo grids running alongside it.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use qsalign::clicksim::{comparison_triplets, gen_world, WorldConfig};
use qsalign::evalkit::calibration_bins;
use qsalign::fusion::toy::LinearTrendProbe;
use qsalign::fusion::{fit_fusion_weights, pareto_tune, FusionWeights, ParetoConfig, Provenance};
use qsalign::grpo::{
    build_inputs, collect_groups, naturalness_index, surrogate, Action, ContextGroup, GrpoConfig, Policy, PolicyInputs,
};
use qsalign::math::{l2_norm, mean, sample_std, sigmoid, spearman};
use qsalign::pipeline::artifacts::{write_seed_run, RunDir};
use qsalign::pipeline::{
    accuracy_of, base_test_triplets, ctr_of, featurizer, iid_contexts, run_seed, train_reward_model, RunConfig,
    RunOptions, SeedRun,
};
use qsalign::probcore::{bhattacharyya_dist, pref_prob_closed, pref_prob_mc, ulb, GaussianScore};
use qsalign::rmodels::{featurize_triplets, loss_grad, LossKind, RewardModel, RmKind, ScorerParams, TripletFeatures};
use qsalign::rng;
use qsalign::textrewards::{RewardVector, N_COMPONENTS};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(c: &Check) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    let _ = out.flush();
}

fn g(mu: f64, sigma: f64) -> GaussianScore {
    GaussianScore::new(mu, sigma).unwrap()
}

/// Every (mu_w - mu_l, sigma_w, sigma_l) of the comparison grid.
fn grid() -> Vec<(f64, f64, f64)> {
    let sigmas = [0.25, 0.5, 1.0, 2.0];
    let mut out = Vec::new();
    for i in 0..=12 {
        let d = -3.0 + 0.5 * i as f64;
        for &sw in &sigmas {
            for &sl in &sigmas {
                out.push((d, sw, sl));
            }
        }
    }
    out
}

fn closed_form_vs_monte_carlo() -> Check {
    let start = Instant::now();
    let worst = grid()
        .par_iter()
        .map(|&(d, sw, sl)| {
            let (w, l) = (g(d, sw), g(0.0, sl));
            (pref_prob_closed(&w, &l).value - pref_prob_mc(&w, &l, 1_000_000, 2024).unwrap().value).abs()
        })
        .reduce(|| 0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    Check {
        name: "closed form vs Monte Carlo on the grid",
        pass: worst <= 0.01 && secs < 60.0,
        detail: format!("max |closed - mc(1e6)| = {worst:.5} over {} points in {secs:.1} s", grid().len()),
    }
}

fn monte_carlo_instability() -> Check {
    let ratios: Vec<f64> = grid()
        .par_iter()
        .map(|&(d, sw, sl)| {
            let (w, l) = (g(d, sw), g(0.0, sl));
            let spread = |n: u64| {
                let v: Vec<f64> = (0..100).map(|s| pref_prob_mc(&w, &l, n, s).unwrap().value).collect();
                sample_std(&v)
            };
            spread(1_000) / spread(100_000)
        })
        .collect();
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    Check {
        name: "Monte Carlo spread at 1e3 vs 1e5 samples",
        pass: min >= 5.0,
        detail: format!("min std ratio {min:.2} over {} points (100 seeds each)", ratios.len()),
    }
}

fn ulb_bounds_bhattacharyya() -> Check {
    let mut r = rng::from_seed(77);
    let mut violations = 0;
    let mut worst_identity: f64 = 0.0;
    for _ in 0..10_000 {
        let a = g(r.random_range(-5.0..5.0), r.random_range(0.1..5.0));
        let b = g(r.random_range(-5.0..5.0), r.random_range(0.1..5.0));
        if ulb(&a, &b) > bhattacharyya_dist(&a, &b) {
            violations += 1;
        }
        worst_identity = worst_identity.max((ulb(&a, &a) - bhattacharyya_dist(&a, &a)).abs());
    }
    Check {
        name: "ULB lower-bounds the Bhattacharyya distance",
        pass: violations == 0 && worst_identity <= 1e-12,
        detail: format!("{violations} violations in 1e4 pairs; max identical-pair gap {worst_identity:.1e}"),
    }
}

fn random_batch(r: &mut impl Rng, n: usize, dim: usize, ctx_dim: usize) -> Vec<TripletFeatures> {
    (0..n)
        .map(|_| {
            let ctx: Vec<f64> = (0..ctx_dim).map(|_| r.random_range(-1.0..1.0)).collect();
            let mut side = || -> Vec<f64> {
                let mut f: Vec<f64> = (0..dim - ctx_dim).map(|_| r.random_range(-1.0..1.0)).collect();
                f.extend_from_slice(&ctx);
                f
            };
            let chosen = side();
            let rejected = side();
            TripletFeatures { ctx, chosen, rejected }
        })
        .collect()
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    l2_norm(&diff) / l2_norm(a).max(l2_norm(b)).max(1e-12)
}

fn central_differences(theta: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            t[i] = theta[i] + h;
            let up = f(&t);
            t[i] = theta[i] - h;
            let down = f(&t);
            t[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn loss_rel_error(kind: LossKind, in_dim: usize, dim: usize, ctx_dim: usize, draw: u64) -> f64 {
    let mut r = rng::from_seed(9000 + draw);
    let batch = random_batch(&mut r, 8, dim, ctx_dim);
    let refs: Vec<&TripletFeatures> = batch.iter().collect();
    let p = ScorerParams::init(kind.head(), in_dim, [12, 10], 500 + draw);
    let (_, grad) = loss_grad(&p, &refs, kind).unwrap();
    let fd = central_differences(&p.weights, 1e-5, |w| {
        let mut q = p.clone();
        q.weights.copy_from_slice(w);
        loss_grad(&q, &refs, kind).unwrap().0
    });
    rel_error(&grad, &fd)
}

fn rv(fused: f64) -> RewardVector {
    let mut c = [0.0; N_COMPONENTS];
    c[0] = fused;
    let mut w = vec![0.0; N_COMPONENTS];
    w[0] = 1.0;
    RewardVector::from_components(c, &w).unwrap()
}

fn perturbed(p: &Policy, scale: f64, seed: u64) -> Policy {
    let mut r = rng::from_seed(seed);
    let v: Vec<f64> = p.params().iter().map(|x| x + scale * (r.random::<f64>() - 0.5)).collect();
    let mut q = p.clone();
    q.set_params(&v);
    q
}

fn surrogate_rel_error(draw: u64) -> f64 {
    let world = gen_world(300 + draw, &WorldConfig { n_contexts: 4, ..Default::default() }).unwrap();
    let inp: Vec<PolicyInputs> = build_inputs(&world.contexts);
    let nat = naturalness_index(world.config.embed_dim);
    let p_old = perturbed(&Policy::base(world.config.embed_dim), 0.6, draw);
    let anchor = perturbed(&p_old, 0.3, 100 + draw);
    let reward = |ci: usize, a: &Action| {
        Ok(rv(match a {
            Action::Refuse => -1.0,
            Action::Triple(t) => inp[ci].phi[t[0]][nat] + 0.1 * t[1] as f64,
        }))
    };
    let idx: Vec<usize> = (0..inp.len()).collect();
    let groups: Vec<ContextGroup> = collect_groups(&p_old, &inp, &idx, &reward, 8, draw).unwrap();
    let p = perturbed(&p_old, 0.02, 200 + draw);
    // An unbounded clip band keeps the objective smooth for differencing.
    let cfg = GrpoConfig { clip_ratio: f64::INFINITY, beta_kl: 0.3, ..Default::default() };
    let (_, grad) = surrogate(&p, &anchor, &groups, &inp, &cfg).unwrap();
    let fd = central_differences(&p.params(), 1e-5, |theta| {
        let mut q = p.clone();
        q.set_params(theta);
        surrogate(&q, &anchor, &groups, &inp, &cfg).unwrap().0.objective
    });
    rel_error(&grad, &fd)
}

fn gradients_match_finite_differences() -> Check {
    let (dim, ctx_dim) = (12, 4);
    let mut worst = Vec::new();
    for (label, kind, in_dim) in [
        ("btrm", LossKind::Bt, dim),
        ("paired", LossKind::Paired, ctx_dim + 2 * dim),
        ("garm", LossKind::Garm { lambda: 0.05 }, dim),
    ] {
        let e = (0..20).map(|d| loss_rel_error(kind, in_dim, dim, ctx_dim, d)).fold(0.0, f64::max);
        worst.push((label, e));
    }
    worst.push(("grpo surrogate", (0..20).map(surrogate_rel_error).fold(0.0, f64::max)));
    let pass = worst.iter().all(|(_, e)| *e <= 1e-4);
    let detail = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    Check { name: "analytic gradients vs central differences", pass, detail: format!("max rel error over 20 draws: {detail}") }
}

fn mean_sigma(m: &RewardModel, feats: &[TripletFeatures]) -> f64 {
    let s: Vec<f64> = feats
        .iter()
        .flat_map(|t| {
            let (w, l) = m.gaussian_pair(t).unwrap();
            [w.sigma(), l.sigma()]
        })
        .collect();
    mean(&s)
}

fn sigma_regularisation(standard: &SeedRun, cfg: &RunConfig) -> Check {
    let fz = featurizer(cfg).unwrap();
    let (_, garm, _) = &standard.reward_models[0];
    let standard_sigma = mean_sigma(garm, &featurize_triplets(&fz, &standard.triplets).unwrap());

    let world = &standard.simulation.world;
    let labels = comparison_triplets(&world.user_model, &world.contexts, 20_000, 3.0, cfg.seed);
    let feats = featurize_triplets(&fz, &labels).unwrap();
    let with_lambda = |lambda: f64| {
        let mut c = cfg.clone();
        c.rm.train.lambda_reg = lambda;
        let (m, _) = train_reward_model(RmKind::Garm, &labels, &c).unwrap();
        mean_sigma(&m, &feats)
    };
    let (reg, free) = (with_lambda(0.05), with_lambda(0.0));
    Check {
        name: "sigma regularisation",
        pass: (0.5..=2.0).contains(&standard_sigma) && free > reg,
        detail: format!(
            "standard world mean sigma {standard_sigma:.3} (lambda 0.05); comparison labels: lambda 0 {free:.3} vs lambda 0.05 {reg:.3}"
        ),
    }
}

fn calibration_trend(runs: &[(RunConfig, SeedRun)]) -> Check {
    let mut good = 0;
    let mut notes = Vec::new();
    for (cfg, run) in runs {
        let world = &run.simulation.world;
        let test = base_test_triplets(world, &iid_contexts(world, cfg), cfg).unwrap();
        let feats = featurize_triplets(&featurizer(cfg).unwrap(), &test).unwrap();
        let bins = calibration_bins(&run.reward_models[0].1, &feats, cfg.eval.calibration_bins, 100).unwrap();
        let mids: Vec<f64> = bins.iter().map(|b| b.midpoint()).collect();
        let acc: Vec<f64> = bins.iter().map(|b| b.accuracy).collect();
        let rho = spearman(&mids, &acc);
        if bins.len() >= 5 && bins.iter().all(|b| b.count >= 100) && rho > 0.0 {
            good += 1;
        }
        notes.push(format!("seed {} rho {rho:.2} ({} bins)", cfg.seed, bins.len()));
    }
    Check { name: "ULB calibration trend", pass: good == runs.len(), detail: format!("{good}/{}: {}", runs.len(), notes.join(", ")) }
}

fn ood_direction(runs: &[(RunConfig, SeedRun)]) -> Check {
    let (mut lower, mut bigger_drop) = (0, 0);
    let (mut ulb_iid, mut ulb_shift) = (Vec::new(), Vec::new());
    for (cfg, run) in runs {
        let rows = accuracy_of(&run.report, "garm");
        let find = |name: &str| rows.iter().find(|r| r.dataset == name).copied().unwrap();
        let iid = find("iid");
        let week = find(&format!("week{}", cfg.eval.policy_shift_week));
        let shift = find(&format!("week{}_rft", cfg.eval.policy_shift_week));
        if shift.accuracy < iid.accuracy {
            lower += 1;
        }
        if iid.accuracy - shift.accuracy > iid.accuracy - week.accuracy {
            bigger_drop += 1;
        }
        ulb_iid.push(iid.mean_ulb.unwrap());
        ulb_shift.push(shift.mean_ulb.unwrap());
    }
    let (ui, us) = (mean(&ulb_iid), mean(&ulb_shift));
    Check {
        name: "accuracy drop under policy shift",
        pass: lower >= 4 && bigger_drop >= 4 && us < ui,
        detail: format!(
            "shifted < iid on {lower}/5, shift drop > temporal drop on {bigger_drop}/5, mean ULB iid {ui:.4} vs shifted {us:.4}"
        ),
    }
}

fn bisect(lambda: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0 / (2.0 * lambda));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sigmoid(-mid) > 2.0 * lambda * mid {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn fusion_correctness() -> Check {
    let mut worst: f64 = 0.0;
    for lambda in [0.05, 0.1, 0.5] {
        let w = fit_fusion_weights(&vec![vec![1.0]; 40], lambda, 1.0, 200, 5).unwrap();
        worst = worst.max((w.w[0] - bisect(lambda)).abs());
    }
    let cfg = ParetoConfig::default();
    let start = FusionWeights { w: vec![1.0, 0.2], lambda_l2: 0.0, provenance: Provenance::InitialLr };
    let out = pareto_tune(&start, &mut LinearTrendProbe::two_component(0.05, 4), &cfg).unwrap();
    let last = out.rounds.last().unwrap();
    let min_slope = last.slopes.iter().copied().fold(f64::INFINITY, f64::min);
    Check {
        name: "fusion fit and Pareto tuning",
        pass: worst <= 1e-3 && out.converged && out.rounds.len() <= cfg.max_rounds && min_slope >= -cfg.trend_epsilon,
        detail: format!(
            "1-D fit vs bisection max gap {worst:.1e}; toy tuning converged={} in {} rounds, min final slope {min_slope:.4}",
            out.converged,
            out.rounds.len()
        ),
    }
}

fn ctr(run: &SeedRun, policy: &str) -> f64 {
    ctr_of(&run.report, policy).unwrap().ctr_exact
}

fn rl_gain(runs: &[(RunConfig, SeedRun)], elapsed: Duration) -> Check {
    let gains: Vec<f64> = runs.iter().map(|(_, r)| ctr(r, "grpo") / ctr(r, "sft") - 1.0).collect();
    let m = mean(&gains);
    let secs = elapsed.as_secs_f64();
    let per_seed = gains.iter().map(|x| format!("{:+.1}%", 100.0 * x)).collect::<Vec<_>>().join(" ");
    Check {
        name: "GRPO CTR gain over SFT",
        pass: m >= 0.05 && secs < 600.0,
        detail: format!("mean relative gain {:+.2}% ({per_seed}); 5 full seeds in {secs:.0} s", 100.0 * m),
    }
}

fn ablation_directions(runs: &[(RunConfig, SeedRun)]) -> Check {
    let mut ppl = 0;
    let mut garm = 0;
    for (_, r) in runs {
        let lp = |p: &str| ctr_of(&r.report, p).unwrap().mean_ref_logprob;
        if lp("no_ppl") < lp("grpo") {
            ppl += 1;
        }
        if ctr(r, "no_garm") < ctr(r, "grpo") {
            garm += 1;
        }
    }
    Check {
        name: "ablation directions",
        pass: ppl >= 4 && garm >= 4,
        detail: format!("no_ppl less natural on {ppl}/5, no_garm lower CTR on {garm}/5"),
    }
}

fn safety(runs: &[(RunConfig, SeedRun)]) -> Check {
    let rows: Vec<(f64, f64)> = runs
        .iter()
        .map(|(_, r)| {
            let row = ctr_of(&r.report, "grpo").unwrap();
            (row.refusal_accuracy, row.false_refusal_rate)
        })
        .collect();
    let pass = rows.iter().all(|(a, f)| *a >= 0.95 && *f <= 0.05);
    let detail = rows.iter().map(|(a, f)| format!("{a:.3}/{f:.3}")).collect::<Vec<_>>().join(" ");
    Check { name: "GRPO refusal behaviour", pass, detail: format!("refusal accuracy / false refusals per seed: {detail}") }
}

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = walkdir::WalkDir::new(root)
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            let rel = e.path().strip_prefix(root).unwrap().display().to_string();
            (rel, std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn determinism(first: &(RunConfig, SeedRun)) -> Check {
    let (cfg, run) = first;
    let again = run_seed(cfg, RunOptions::full()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    write_seed_run(&RunDir::new(&a), cfg, run).unwrap();
    write_seed_run(&RunDir::new(&b), cfg, &again).unwrap();
    let (fa, fb) = (files(&a), files(&b));
    let differing: Vec<&str> =
        fa.iter().zip(&fb).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    Check {
        name: "byte-identical rerun",
        pass: fa.len() == fb.len() && differing.is_empty() && !fa.is_empty(),
        detail: format!("{} files compared, {} differ {differing:?}", fa.len(), differing.len()),
    }
}

#[test]
fn acceptance() {
    let mut checks = Vec::new();
    let mut run = |c: Check| {
        report(&c);
        checks.push(c);
    };
    run(closed_form_vs_monte_carlo());
    run(monte_carlo_instability());
    run(ulb_bounds_bhattacharyya());
    run(gradients_match_finite_differences());

    let start = Instant::now();
    let runs: Vec<(RunConfig, SeedRun)> = SEEDS
        .iter()
        .map(|&s| {
            let cfg = RunConfig::with_seed(s);
            let r = run_seed(&cfg, RunOptions::full()).unwrap();
            (cfg, r)
        })
        .collect();
    let elapsed = start.elapsed();

    run(sigma_regularisation(&runs[0].1, &runs[0].0));
    run(calibration_trend(&runs));
    run(ood_direction(&runs));
    run(fusion_correctness());
    run(rl_gain(&runs, elapsed));
    run(ablation_directions(&runs));
    run(safety(&runs));
    run(determinism(&runs[0]));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    assert!(failed.is_empty(), "failed checks: {failed:?}");
}

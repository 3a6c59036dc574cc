use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::clicksim::{gen_world, World, WorldConfig};
use crate::grpo::enumerate_actions;
use crate::rng::StreamRng;

fn world(n: usize, seed: u64) -> World {
    gen_world(seed, &WorldConfig { n_contexts: n, ..Default::default() }).unwrap()
}

fn perturbed(seed: u64, scale: f64, embed_dim: usize) -> Policy {
    let mut p = Policy::base(embed_dim);
    let mut r = rng::from_seed(seed);
    let v: Vec<f64> = p.params().iter().map(|x| x + scale * (r.random::<f64>() - 0.5)).collect();
    p.set_params(&v);
    p
}

fn truncated(set: &ContextSet, n: usize) -> ContextSet {
    let mut s = set.clone();
    for p in &mut s.pools {
        p.truncate(n);
    }
    s
}

/// CTR by summing every enumerated action's exact triple click probability.
fn ctr_by_enumeration(p: &Policy, um: &UserModel, set: &ContextSet) -> f64 {
    let mut total = 0.0;
    for (c, pool) in set.contexts.iter().zip(&set.pools) {
        for (a, lp) in enumerate_actions(&p.scores(&PolicyInputs::new(c, pool))) {
            if let Action::Triple(t) = a {
                total += lp.exp() * triple_click_prob(um, c, pool, t);
            }
        }
    }
    total / set.len() as f64
}

#[test]
fn minus_infinite_utilities_never_click() {
    let w = world(10, 1);
    let mut um = w.user_model.clone();
    *um.utility_weights.last_mut().unwrap() = f64::NEG_INFINITY;
    let p = Policy::base(w.config.embed_dim);
    let e = ctr_estimate(&p, &um, &w.contexts, 2000, 3).unwrap();
    assert_eq!(e.ctr, 0.0);
    assert_eq!(ctr_exact(&p, &um, &w.contexts).unwrap(), 0.0);
}

#[test]
fn exact_ctr_matches_enumeration_and_monte_carlo() {
    let w = world(40, 2);
    let set = truncated(&w.contexts, 3);
    let p = perturbed(5, 1.0, w.config.embed_dim);
    let exact = ctr_exact(&p, &w.user_model, &set).unwrap();
    assert!((exact - ctr_by_enumeration(&p, &w.user_model, &set)).abs() < 1e-12);
    let mc = ctr_estimate(&p, &w.user_model, &set, 100_000, 7).unwrap();
    assert!((mc.ctr - exact).abs() <= 3.0 * mc.stderr, "mc {} ± {} vs {exact}", mc.ctr, mc.stderr);

    let full = ctr_exact(&p, &w.user_model, &w.contexts).unwrap();
    assert!((full - ctr_by_enumeration(&p, &w.user_model, &w.contexts)).abs() < 1e-12);
}

#[test]
fn ctr_rises_with_a_uniform_utility_shift() {
    let w = world(30, 3);
    let p = Policy::base(w.config.embed_dim);
    let mut prev = -1.0;
    for shift in [-1.0, 0.0, 1.0] {
        let mut um = w.user_model.clone();
        *um.utility_weights.last_mut().unwrap() += shift;
        let mc = ctr_estimate(&p, &um, &w.contexts, 20_000, 11).unwrap().ctr;
        assert!(mc > prev, "shift {shift}: {mc} <= {prev}");
        prev = mc;
    }
}

#[test]
fn refusals_count_as_impressions_without_clicks() {
    let w = world(10, 4);
    let refuse = |_: &Context, _: &[Suggestion], _: &mut StreamRng| -> Option<[usize; 3]> { None };
    let e = ctr_estimate(&refuse, &w.user_model, &w.contexts, 500, 1).unwrap();
    assert_eq!((e.ctr, e.impressions), (0.0, 500));
}

#[test]
fn stderr_shrinks_as_inverse_root_n() {
    let w = world(20, 5);
    let p = Policy::base(w.config.embed_dim);
    let se: Vec<f64> = [1_000, 10_000, 100_000]
        .iter()
        .map(|&n| ctr_estimate(&p, &w.user_model, &w.contexts, n, 9).unwrap().stderr)
        .collect();
    for k in 0..2 {
        let ratio = se[k] / se[k + 1];
        assert!((ratio - 10f64.sqrt()).abs() < 0.35, "ratio {ratio}");
    }
}

#[test]
fn ctr_estimate_rejects_zero_impressions() {
    let w = world(5, 6);
    assert!(ctr_estimate(&Policy::base(w.config.embed_dim), &w.user_model, &w.contexts, 0, 1).is_err());
}

#[test]
fn bins_partition_outcomes_and_merge_small_ones() {
    let mut r = rng::from_seed(8);
    let outcomes: Vec<(f64, f64)> =
        (0..1000).map(|_| (r.random::<f64>().powi(3), if r.random::<f64>() < 0.7 { 1.0 } else { 0.0 })).collect();
    let bins = bin_outcomes(&outcomes, 10, 50).unwrap();
    assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), outcomes.len());
    assert!(bins.iter().all(|b| b.count >= 50));
    for pair in bins.windows(2) {
        assert_eq!(pair[0].upper, pair[1].lower);
    }
    assert!(bins.iter().all(|b| (0.0..=1.0).contains(&b.accuracy)));
}

#[test]
fn separable_outcomes_give_a_more_accurate_top_bin() {
    // Confident samples are always right; unconfident ones are coin flips.
    let mut r = rng::from_seed(9);
    let outcomes: Vec<(f64, f64)> = (0..2000)
        .map(|_| {
            let u = r.random::<f64>();
            let hit = if u > 0.5 || r.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
            (u, hit)
        })
        .collect();
    let bins = bin_outcomes(&outcomes, 5, 50).unwrap();
    assert_eq!(bins.last().unwrap().accuracy, 1.0);
    assert!(bins.last().unwrap().accuracy >= bins[0].accuracy);
}

#[test]
fn last_small_bin_merges_left() {
    let outcomes = vec![(0.0, 1.0), (0.1, 1.0), (0.3, 0.0), (0.35, 1.0), (1.0, 0.0)];
    let bins = bin_outcomes(&outcomes, 4, 2).unwrap();
    assert_eq!(bins.iter().map(|b| b.count).collect::<Vec<_>>(), vec![2, 3]);
    assert_eq!(bins[1].upper, 1.0);
}

#[test]
fn calibration_rejects_empty_sets_and_non_garm_models() {
    let fz = crate::rmodels::Featurizer::new(20, 8).unwrap();
    let garm = RewardModel::init(RmKind::Garm, fz, 1);
    assert!(calibration_bins(&garm, &[], 5, 1).is_err());
    let t = TripletFeatures { ctx: vec![0.0; 8], chosen: vec![0.1; 20], rejected: vec![0.0; 20] };
    assert!(calibration_bins(&garm, std::slice::from_ref(&t), 2, 1).is_err());
    assert_eq!(calibration_bins(&garm, std::slice::from_ref(&t), 3, 1).unwrap().len(), 1);
    let bt = RewardModel::init(RmKind::Bt, fz, 1);
    assert!(calibration_bins(&bt, &[t], 3, 1).is_err());
}

fn groups_by_utility(w: &World, best: bool) -> Vec<Option<[usize; 3]>> {
    w.contexts
        .contexts
        .iter()
        .zip(&w.contexts.pools)
        .map(|(c, pool)| {
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            idx.sort_by(|a, b| w.user_model.utility(c, &pool[*b]).total_cmp(&w.user_model.utility(c, &pool[*a])));
            if !best {
                idx.reverse();
            }
            Some([idx[0], idx[1], idx[2]])
        })
        .collect()
}

#[test]
fn gsb_extremes_and_identity() {
    let w = world(25, 10);
    let n = w.contexts.len() as i64;
    let g = groups_by_utility(&w, true);
    assert_eq!(gsb_proxy(&g, &g, &w.contexts, &w.user_model, 0.0).unwrap(), 0);
    let none = vec![None; w.contexts.len()];
    assert_eq!(gsb_proxy(&g, &none, &w.contexts, &w.user_model, f64::NEG_INFINITY).unwrap(), 3 * n);
    assert_eq!(gsb_proxy(&none, &g, &w.contexts, &w.user_model, f64::NEG_INFINITY).unwrap(), -3 * n);
}

#[test]
fn gsb_prefers_high_utility_groups_and_rejects_misalignment() {
    let w = world(25, 11);
    let thr = useful_threshold(&w.user_model, &w.contexts, 0.6).unwrap();
    let good = groups_by_utility(&w, true);
    let bad = groups_by_utility(&w, false);
    assert!(gsb_proxy(&good, &bad, &w.contexts, &w.user_model, thr).unwrap() > 0);
    assert!(gsb_proxy(&good[1..], &bad, &w.contexts, &w.user_model, thr).is_err());
    let mut oob = good.clone();
    oob[0] = Some([0, 1, 99]);
    assert!(gsb_proxy(&oob, &bad, &w.contexts, &w.user_model, thr).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gsb_is_antisymmetric(seed in 0u64..1000, thr in -3.0f64..3.0) {
        let w = world(8, 12);
        let mut r = rng::from_seed(seed);
        let mut draw = || -> Vec<Option<[usize; 3]>> {
            w.contexts.pools.iter().map(|p| {
                if r.random::<f64>() < 0.2 {
                    return None;
                }
                let mut idx: Vec<usize> = (0..p.len()).collect();
                for i in 0..3 {
                    let j = r.random_range(i..idx.len());
                    idx.swap(i, j);
                }
                Some([idx[0], idx[1], idx[2]])
            }).collect()
        };
        let (a, b) = (draw(), draw());
        let ab = gsb_proxy(&a, &b, &w.contexts, &w.user_model, thr).unwrap();
        let ba = gsb_proxy(&b, &a, &w.contexts, &w.user_model, thr).unwrap();
        prop_assert_eq!(ab, -ba);
        prop_assert!(ab.abs() <= 3 * w.contexts.len() as i64);
    }

    #[test]
    fn every_outcome_lands_in_exactly_one_bin(
        us in prop::collection::vec(-2.0f64..2.0, 1..300),
        n_bins in 3usize..12,
        min_count in 0usize..40,
    ) {
        let outcomes: Vec<(f64, f64)> = us.iter().map(|u| (*u, if *u > 0.0 { 1.0 } else { 0.0 })).collect();
        let bins = bin_outcomes(&outcomes, n_bins, min_count).unwrap();
        prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), outcomes.len());
        for (u, _) in &outcomes {
            let hits = bins.iter().enumerate().filter(|(i, b)| {
                *u >= b.lower && (*u < b.upper || (*i == bins.len() - 1 && *u <= b.upper))
            }).count();
            prop_assert_eq!(hits, 1);
        }
    }
}

#[test]
fn identical_datasets_give_identical_accuracies_in_order() {
    let fz = crate::rmodels::Featurizer::new(20, 8).unwrap();
    let rm = RewardModel::init(RmKind::Garm, fz, 2);
    let mut r = rng::from_seed(13);
    let data: Vec<TripletFeatures> = (0..50)
        .map(|_| TripletFeatures {
            ctx: vec![0.0; 8],
            chosen: (0..20).map(|_| r.random::<f64>()).collect(),
            rejected: (0..20).map(|_| r.random::<f64>()).collect(),
        })
        .collect();
    let names = ["iid", "week1", "shifted"];
    let sets: Vec<(String, Vec<TripletFeatures>)> = names.iter().map(|n| (n.to_string(), data.clone())).collect();
    let rows = ood_eval(&rm, &sets).unwrap();
    assert_eq!(rows.iter().map(|r| r.dataset.as_str()).collect::<Vec<_>>(), names);
    assert!(rows.windows(2).all(|w| w[0].accuracy == w[1].accuracy && w[0].mean_ulb == w[1].mean_ulb));
}

fn sample_report() -> EvalReport {
    EvalReport {
        seeds: vec![1, 2],
        config_hash: "abc".into(),
        ctr: vec![CtrRow {
            seed: 1,
            policy: "grpo".into(),
            ctr_exact: 0.123456789,
            ctr_mc: 0.12,
            stderr: 0.001,
            impressions: 1000,
            refusal_accuracy: 1.0,
            false_refusal_rate: 0.0,
            mean_ref_logprob: -3.25,
        }],
        accuracy: vec![RmRow {
            seed: 1,
            model: "garm".into(),
            row: AccuracyRow { dataset: "iid".into(), n: 10, accuracy: 0.6, mean_ulb: Some(0.2) },
        }],
        calibration: vec![BinRow {
            seed: 2,
            bin: 0,
            bin_data: CalibrationBin { lower: 0.0, upper: 0.5, count: 7, accuracy: 0.75 },
        }],
        gsb: vec![GsbRow { seed: 1, candidate: "grpo".into(), baseline: "sft".into(), contexts: 200, gsb: -4 }],
        notes: vec!["note".into()],
    }
}

const FILES: [&str; 5] = ["ctr.csv", "rm_accuracy.csv", "calibration.csv", "gsb.csv", "summary.txt"];

#[test]
fn empty_report_writes_header_only_csvs() {
    let dir = tempfile::tempdir().unwrap();
    report(&EvalReport::default(), dir.path()).unwrap();
    for f in &FILES[..4] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(text.lines().count(), 1, "{f}");
    }
}

#[test]
fn reports_are_byte_identical_on_rerun() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    report(&sample_report(), a.path()).unwrap();
    report(&sample_report(), b.path()).unwrap();
    for f in FILES {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn csvs_round_trip_through_a_generic_parser() {
    let dir = tempfile::tempdir().unwrap();
    report(&sample_report(), dir.path()).unwrap();
    let mut rd = csv::Reader::from_path(dir.path().join("ctr.csv")).unwrap();
    assert_eq!(rd.headers().unwrap().get(2), Some("ctr_exact"));
    let row = rd.records().next().unwrap().unwrap();
    assert_eq!(&row[1], "grpo");
    let v: f64 = row[2].parse().unwrap();
    assert!((v - 0.123456789).abs() < 1e-6);
    assert_eq!(&row[2], "0.123457");
    let mut rd = csv::Reader::from_path(dir.path().join("rm_accuracy.csv")).unwrap();
    let row = rd.records().next().unwrap().unwrap();
    assert_eq!((&row[2], row[5].parse::<f64>().unwrap()), ("iid", 0.2));
    let mut rd = csv::Reader::from_path(dir.path().join("gsb.csv")).unwrap();
    assert_eq!(rd.records().next().unwrap().unwrap()[4].parse::<i64>().unwrap(), -4);
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("gsb proxy"));
    assert!(summary.contains("note"));
}

#[test]
fn merged_reports_keep_every_row_seed() {
    let mut a = sample_report();
    let mut b = sample_report();
    b.seeds = vec![3];
    b.ctr[0].seed = 3;
    a.merge(b);
    assert_eq!(a.seeds, vec![1, 2, 3]);
    assert_eq!(a.ctr.iter().map(|c| c.seed).collect::<Vec<_>>(), vec![1, 3]);
}

use rand::Rng;

use super::*;
use crate::clicksim::{gen_world, WorldConfig};
use crate::math::l2_norm;

fn random_batch(r: &mut impl Rng, n: usize, dim: usize, ctx_dim: usize) -> Vec<TripletFeatures> {
    (0..n)
        .map(|_| {
            let ctx: Vec<f64> = (0..ctx_dim).map(|_| r.random_range(-1.0..1.0)).collect();
            let mut mk = || -> Vec<f64> {
                let mut f: Vec<f64> = (0..dim - ctx_dim).map(|_| r.random_range(-1.0..1.0)).collect();
                f.extend_from_slice(&ctx);
                f
            };
            let chosen = mk();
            let rejected = mk();
            TripletFeatures { ctx, chosen, rejected }
        })
        .collect()
}

fn fd_rel_error(p: &ScorerParams, batch: &[TripletFeatures], kind: LossKind) -> f64 {
    let refs: Vec<&TripletFeatures> = batch.iter().collect();
    let (_, g) = loss_grad(p, &refs, kind).unwrap();
    let h = 1e-5;
    let mut num = vec![0.0; g.len()];
    let mut q = p.clone();
    for i in 0..g.len() {
        let w = q.weights[i];
        q.weights[i] = w + h;
        let lp = loss_grad(&q, &refs, kind).unwrap().0;
        q.weights[i] = w - h;
        let lm = loss_grad(&q, &refs, kind).unwrap().0;
        q.weights[i] = w;
        num[i] = (lp - lm) / (2.0 * h);
    }
    let diff: Vec<f64> = g.iter().zip(&num).map(|(a, b)| a - b).collect();
    l2_norm(&diff) / l2_norm(&g).max(l2_norm(&num)).max(1e-12)
}

#[test]
fn gradients_match_finite_differences() {
    let mut r = rng::from_seed(41);
    let (dim, ctx_dim) = (10, 3);
    for draw in 0..5 {
        let batch = random_batch(&mut r, 6, dim, ctx_dim);
        for (kind, in_dim) in [
            (LossKind::Bt, dim),
            (LossKind::Paired, ctx_dim + 2 * dim),
            (LossKind::Garm { lambda: 0.05 }, dim),
        ] {
            let p = ScorerParams::init(kind.head(), in_dim, [8, 6], 100 + draw);
            let e = fd_rel_error(&p, &batch, kind);
            assert!(e <= 1e-4, "{kind:?} draw {draw}: {e}");
        }
    }
}

#[test]
fn equal_scores_give_ln2() {
    let mut r = rng::from_seed(1);
    let batch = random_batch(&mut r, 5, 10, 3);
    let refs: Vec<&TripletFeatures> = batch.iter().collect();
    for (kind, in_dim) in [(LossKind::Bt, 10), (LossKind::Paired, 23)] {
        let p = ScorerParams::zeros(kind.head(), in_dim, [4, 4]);
        let (l, _) = loss_grad(&p, &refs, kind).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }
    // Identical features on both sides: paired loss is ln 2 for any weights.
    let same: Vec<TripletFeatures> = batch
        .iter()
        .map(|t| TripletFeatures { ctx: t.ctx.clone(), chosen: t.chosen.clone(), rejected: t.chosen.clone() })
        .collect();
    let refs: Vec<&TripletFeatures> = same.iter().collect();
    let p = ScorerParams::init(Head::PairLogit, 23, [4, 4], 3);
    assert!((pairedrm_loss_grad(&p, &refs).unwrap().0 - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn garm_loss_at_unit_sigma() {
    // Zero body weights, μ = 0 and σ exactly 1 via the output bias.
    let mut p = ScorerParams::zeros(Head::Gaussian, 10, [4, 4]);
    let n = p.weights.len();
    p.weights[n - 1] = SIGMA_RAW_INIT;
    let mut r = rng::from_seed(2);
    let batch = random_batch(&mut r, 3, 10, 3);
    let refs: Vec<&TripletFeatures> = batch.iter().collect();
    let (l, _) = garm_loss_grad(&p, &refs, 0.01).unwrap();
    assert!((sigma_from_raw(SIGMA_RAW_INIT) - 1.0).abs() < 1e-12);
    assert!((l - (std::f64::consts::LN_2 + 0.02)).abs() < 1e-10, "{l}");
}

#[test]
fn zero_weights_give_analytic_outputs() {
    let p = ScorerParams::zeros(Head::Scalar, 10, [4, 4]);
    assert_eq!(btrm_score(&p, &[0.3; 10]).unwrap(), 0.0);
    let g = ScorerParams::zeros(Head::Gaussian, 10, [4, 4]);
    let s = garm_score(&g, &[0.3; 10]).unwrap();
    assert_eq!(s.mu(), 0.0);
    assert!((s.sigma() - (2f64.ln() + 1e-3)).abs() < 1e-12);
    assert!(matches!(btrm_score(&g, &[0.0; 10]), Err(Error::Config(_))));
}

#[test]
fn degenerate_sigma_matches_bt_loss() {
    let mut r = rng::from_seed(5);
    let batch = random_batch(&mut r, 20, 10, 3);
    let refs: Vec<&TripletFeatures> = batch.iter().collect();
    let g = ScorerParams::init(Head::Gaussian, 10, [8, 8], 9);
    let mut g = g;
    // Kill the σ row and push its bias far negative: σ sits at the offset.
    let [h1, h2] = g.hidden;
    let w3 = h1 * 10 + h1 + h2 * h1 + h2;
    for j in 0..h2 {
        g.weights[w3 + h2 + j] = 0.0;
    }
    let n = g.weights.len();
    g.weights[n - 1] = -60.0;
    // The scalar net shares the μ row.
    let mut b = ScorerParams::zeros(Head::Scalar, 10, [8, 8]);
    b.weights[..w3].copy_from_slice(&g.weights[..w3]);
    b.weights[w3..w3 + h2].copy_from_slice(&g.weights[w3..w3 + h2]);
    let nb = b.weights.len();
    b.weights[nb - 1] = g.weights[n - 2];
    let lg = garm_loss_grad(&g, &refs, 0.0).unwrap().0;
    let lb = btrm_loss_grad(&b, &refs).unwrap().0;
    assert!((lg - lb).abs() < 1e-6, "{lg} vs {lb}");
}

#[test]
fn paired_probability_is_antisymmetric() {
    let mut r = rng::from_seed(6);
    let p = ScorerParams::init(Head::PairLogit, 23, [8, 8], 1);
    for t in random_batch(&mut r, 50, 10, 3) {
        let a = pairedrm_prob(&p, &t.ctx, &t.chosen, &t.rejected).unwrap();
        let b = pairedrm_prob(&p, &t.ctx, &t.rejected, &t.chosen).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
        assert_eq!(pairedrm_prob(&p, &t.ctx, &t.chosen, &t.chosen).unwrap(), 0.5);
    }
}

#[test]
fn loss_is_invariant_to_batch_order() {
    let mut r = rng::from_seed(7);
    let batch = random_batch(&mut r, 300, 10, 3);
    let p = ScorerParams::init(Head::Gaussian, 10, [8, 8], 1);
    let fwd: Vec<&TripletFeatures> = batch.iter().collect();
    let rev: Vec<&TripletFeatures> = batch.iter().rev().collect();
    let a = garm_loss_grad(&p, &fwd, 0.05).unwrap().0;
    let b = garm_loss_grad(&p, &rev, 0.05).unwrap().0;
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn zero_epochs_and_clipping_contracts() {
    let mut r = rng::from_seed(8);
    let batch = random_batch(&mut r, 100, 10, 3);
    let p = ScorerParams::init(Head::Scalar, 10, [8, 8], 1);
    let cfg = TrainConfig { epochs: 0, ..Default::default() };
    assert_eq!(train(&p, &batch, &cfg, LossKind::Bt).unwrap().params, p);
    let cfg = TrainConfig { epochs: 3, batch_size: 16, learning_rate: 0.05, ..Default::default() };
    let out = train(&p, &batch, &cfg, LossKind::Bt).unwrap();
    assert!(out.step_grad_norm.iter().all(|n| *n <= 1.0 + 1e-12));
    let again = train(&p, &batch, &cfg, LossKind::Bt).unwrap();
    assert_eq!(out.params.weights, again.params.weights);
    assert!(train(&p, &[], &cfg, LossKind::Bt).is_err());
}

#[test]
fn featurize_contracts() {
    let w = gen_world(3, &WorldConfig { n_contexts: 3, ..Default::default() }).unwrap();
    let fz = Featurizer::new(64, 8).unwrap();
    let ctx = &w.contexts.contexts[0];
    let a = fz.featurize_text(ctx, "how to bake pasta").unwrap();
    assert_eq!(a, fz.featurize_text(ctx, "how to bake pasta").unwrap());
    let b = fz.featurize_text(ctx, "how to bake pizza").unwrap();
    assert_ne!(a[..fz.hash_dims()], b[..fz.hash_dims()]);
    let other = match ctx.language {
        crate::text::Language::En => "如何 烘焙 面条",
        crate::text::Language::Zh => "how to bake pasta",
    };
    assert_eq!(fz.featurize_text(ctx, other).unwrap()[fz.lang_match_index()], 0.0);
    assert!(fz.featurize_text(ctx, "  ").is_err());
}

#[test]
fn checkpoint_round_trip_preserves_scores() {
    let fz = Featurizer::new(16, 8).unwrap();
    let m = RewardModel::init(RmKind::Garm, fz, 4);
    let ck = RmCheckpoint::new(&m, &TrainConfig::default(), "0".into(), vec![]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rm.json");
    ck.save(&path).unwrap();
    let back = RmCheckpoint::load(&path).unwrap().model().unwrap();
    assert_eq!(back, m);
    assert_eq!(ck.lambda_reg, Some(0.05));
}

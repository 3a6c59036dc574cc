use proptest::prelude::*;

use super::*;
use crate::clicksim::NoiseRegime;
use crate::text::Language;

fn ctx(lang: Language, is_unsafe: bool) -> Context {
    Context {
        id: 0,
        features: vec![0.0; 8],
        language: lang,
        is_unsafe,
        week: 0,
        topic: 0,
        noise_regime: NoiseRegime::Low,
        prior_query: "how to bake bread".into(),
    }
}

fn words_n(n: usize) -> String {
    vec!["w"; n].join(" ")
}

#[test]
fn format_rule() {
    assert_eq!(format_reward(&SuggestionGroup::new(["a b", "c d", "e f"])), 1.0);
    assert_eq!(format_reward(&SuggestionGroup::new(["a b", "c d"])), 0.0);
    assert_eq!(format_reward(&SuggestionGroup::new(["a", "b", "c", "d"])), 0.0);
    assert_eq!(format_reward(&SuggestionGroup::new(["a", " ", "c"])), 0.0);
    assert_eq!(format_reward(&SuggestionGroup::refusal()), 0.0);
}

#[test]
fn length_rule() {
    let g = SuggestionGroup::new([words_n(3), words_n(12), words_n(1)]);
    assert_eq!(length_reward(&g).unwrap(), 1.0);
    assert!((length_reward(&SuggestionGroup::new([words_n(14)])).unwrap() - 0.6).abs() < 1e-12);
    assert_eq!(length_reward(&SuggestionGroup::new([words_n(17)])).unwrap(), 0.0);
    assert!(length_reward(&SuggestionGroup::refusal()).is_err());
}

#[test]
fn language_rule() {
    let c = ctx(Language::En, false);
    assert_eq!(language_consistency_reward(&c, &SuggestionGroup::new(["how to", "best pasta", "tips"])), 1.0);
    let g = SuggestionGroup::new(["how to", "best pasta", "如何 烘焙"]);
    assert!((language_consistency_reward(&c, &g) - 2.0 / 3.0).abs() < 1e-12);
    let g = SuggestionGroup::new(["how to", "best pasta", "bake 面包"]);
    assert!((language_consistency_reward(&c, &g) - 2.5 / 3.0).abs() < 1e-12);
}

#[test]
fn diversity_rule() {
    assert_eq!(diversity_reward(&SuggestionGroup::new(["a b", "a b", "a b"])).unwrap(), 0.0);
    assert_eq!(diversity_reward(&SuggestionGroup::new(["a b", "c d", "e f"])).unwrap(), 1.0);
    let v = diversity_reward(&SuggestionGroup::new(["a b", "a b", "c d"])).unwrap();
    assert!((v - 2.0 / 3.0).abs() < 1e-12);
    assert!(diversity_reward(&SuggestionGroup::new(["a", "b"])).is_err());
}

#[test]
fn safety_rule() {
    assert_eq!(safety_reward(&ctx(Language::En, true), &SuggestionGroup::refusal()), 1.0);
    assert_eq!(safety_reward(&ctx(Language::En, true), &SuggestionGroup::new(["a", "b", "c"])), -5.0);
    assert_eq!(safety_reward(&ctx(Language::En, false), &SuggestionGroup::refusal()), -5.0);
    assert_eq!(safety_reward(&ctx(Language::En, false), &SuggestionGroup::new(["a", "b", "c"])), 0.0);
}

#[test]
fn rubric_rule() {
    let r = DeterministicRubric::default();
    let c = ctx(Language::En, false);
    assert_eq!(rubric_reward(&r, &c, "Hello"), 0.0);
    let long = "x".repeat(50) + " " + &"y".repeat(45);
    assert_eq!(long.chars().count(), 96);
    assert_eq!(rubric_reward(&r, &c, &long), 0.0);
    assert_eq!(rubric_reward(&r, &c, &long[..95]), 1.0);
    assert_eq!(rubric_reward(&r, &c, "how to bake bread"), 0.0);
    assert_eq!(rubric_reward(&r, &c, "best sourdough starter tips"), 1.0);
}

#[test]
fn reference_model_counting() {
    let k = 0.1;
    let m = ReferenceModel::fit(["a b a b"], k).unwrap();
    let v = m.vocab_size() as f64;
    assert!((m.cond_prob(Some("a"), "b") - (2.0 + k) / (2.0 + k * v)).abs() < 1e-15);
    for prev in [None, Some("a"), Some("b"), Some("zzz")] {
        assert!((m.row_sum(prev) - 1.0).abs() < 1e-10);
    }
    assert!(ReferenceModel::fit(Vec::<&str>::new(), k).is_err());
}

#[test]
fn certain_tokens_score_zero() {
    let m = ReferenceModel::fit(["a a a"], 0.0).unwrap();
    assert_eq!(ppl_reward(&m, "a a").unwrap(), 0.0);
    assert!(ppl_reward(&m, "").is_err());
}

#[test]
fn held_in_beats_shuffled_and_random() {
    let corpus = ["how to bake bread", "best bread recipe ideas", "how to make pasta sauce", "pasta recipe tips"];
    let m = ReferenceModel::fit(corpus, 0.1).unwrap();
    for s in corpus {
        let mut t: Vec<&str> = s.split_whitespace().collect();
        t.reverse();
        let shuffled = t.join(" ");
        assert!(ppl_reward(&m, s).unwrap() > ppl_reward(&m, &shuffled).unwrap());
        let random = vec!["zorp"; t.len()].join(" ");
        assert!(ppl_reward(&m, s).unwrap() > ppl_reward(&m, &random).unwrap());
    }
}

#[test]
fn reference_model_file_round_trip() {
    let m = ReferenceModel::fit(["a b c", "b c d"], 0.5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ref.json");
    m.save(&p).unwrap();
    assert_eq!(ReferenceModel::load(&p).unwrap(), m);
}

#[test]
fn composite_fuses_by_dot_product() {
    let reference = ReferenceModel::fit(["how to bake bread"], 0.1).unwrap();
    let rubric = DeterministicRubric::default();
    let rc = RewardContext { rubric: &rubric, reference: &reference };
    let c = ctx(Language::En, false);
    let g = SuggestionGroup::new(["best bread tips", "bake bread", "pasta ideas for dinner"]);
    let rm = RmSignal { mu: 0.7, sigma: 1.2 };
    let zero = composite_reward(&[0.0; N_COMPONENTS], &rc, &c, &g, rm).unwrap();
    assert_eq!(zero.fused, 0.0);
    let mut onehot = [0.0; N_COMPONENTS];
    onehot[0] = 1.0;
    assert_eq!(composite_reward(&onehot, &rc, &c, &g, rm).unwrap().fused, 1.0);
    let w = [0.3, -0.2, 1.1, 0.4, 2.0, 0.9, 0.5, 1.3, -0.7];
    let v = composite_reward(&w, &rc, &c, &g, rm).unwrap();
    let manual: f64 = w.iter().zip(v.components()).map(|(a, b)| a * b).sum();
    assert!((v.fused - manual).abs() < 1e-12);
    assert!(matches!(composite_reward(&w[..3], &rc, &c, &g, rm), Err(Error::Config(_))));
    let r = composite_reward(&w, &rc, &c, &SuggestionGroup::refusal(), rm).unwrap();
    assert_eq!(r.fused, 2.0 * -5.0);
}

fn group_strategy() -> impl Strategy<Value = SuggestionGroup> {
    let word = prop::sample::select(vec!["how", "to", "bake", "面包", "如何", "pasta", "zorp", "tips"]);
    let sugg = prop::collection::vec(word, 1..25).prop_map(|w| w.join(" "));
    prop::collection::vec(sugg, 3..=3).prop_map(SuggestionGroup::new)
}

proptest! {
    #[test]
    fn bounded_components_stay_in_range(g in group_strategy()) {
        let c = ctx(Language::En, false);
        let l = length_reward(&g).unwrap();
        let d = diversity_reward(&g).unwrap();
        let la = language_consistency_reward(&c, &g);
        prop_assert!((0.0..=1.0).contains(&l));
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((0.0..=1.0).contains(&la));
    }

    #[test]
    fn diversity_is_order_invariant(g in group_strategy()) {
        let mut r = g.clone();
        r.suggestions.reverse();
        prop_assert!((diversity_reward(&g).unwrap() - diversity_reward(&r).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn length_is_non_increasing_in_words(n in 1usize..30, extra in 1usize..5) {
        let a = length_reward(&SuggestionGroup::new([words_n(n)])).unwrap();
        let b = length_reward(&SuggestionGroup::new([words_n(n + extra)])).unwrap();
        prop_assert!(b <= a);
    }

    #[test]
    fn in_vocabulary_ppl_is_finite(idx in prop::collection::vec(0usize..4, 1..10)) {
        let vocab = ["a", "b", "c", "d"];
        let m = ReferenceModel::fit(["a b", "c d a"], 0.1).unwrap();
        let s: Vec<&str> = idx.iter().map(|&i| vocab[i]).collect();
        let v = ppl_reward(&m, &s.join(" ")).unwrap();
        prop_assert!(v.is_finite() && v <= 0.0);
    }
}

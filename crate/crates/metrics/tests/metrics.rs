mod oracle;

use mabn_metrics::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

fn fixture(seed: u64) -> Vec<EvalPair> {
    oracle::random_fixture(&mut ChaCha8Rng::seed_from_u64(seed), 50)
}

#[test]
fn bleu_matches_brute_force() {
    for seed in 0..5 {
        let pairs = fixture(seed);
        for n in 1..=4 {
            let (a, b) = (bleu(&pairs, n).unwrap(), oracle::bleu(&pairs, n));
            assert!((a - b).abs() < TOL, "seed {seed} n {n}: {a} vs {b}");
        }
    }
}

#[test]
fn rouge_matches_brute_force() {
    for seed in 0..5 {
        let pairs = fixture(seed);
        let (a, b) = (rouge_l(&pairs).unwrap(), oracle::rouge_l(&pairs));
        assert!((a - b).abs() < TOL, "{a} vs {b}");
    }
}

#[test]
fn meteor_matches_exhaustive_alignment() {
    for seed in 0..5 {
        let pairs = fixture(seed);
        for p in &pairs {
            for r in &p.references {
                let a = align(&p.candidate, r);
                assert_eq!((a.matches, a.chunks), oracle::exhaustive_alignment(&p.candidate, r));
            }
        }
        let (a, b) = (meteor_lite(&pairs).unwrap(), oracle::meteor(&pairs));
        assert!((a - b).abs() < TOL, "{a} vs {b}");
    }
}

#[test]
fn cider_matches_dense_tfidf() {
    for seed in 0..3 {
        let pairs = fixture(seed);
        let idf = CorpusIdf::from_references(&pairs);
        let (a, b) = (cider(&pairs, &idf).unwrap(), oracle::cider(&pairs));
        assert!((a - b).abs() < TOL, "{a} vs {b}");
    }
}

#[test]
fn perfect_corpus_report() {
    let sents = [
        "bring me the red ball from the upper part of the shelf",
        "give me a small blue cup on the table",
        "go get me the yellow doll from the sofa",
    ];
    let pairs: Vec<EvalPair> = sents.iter().map(|s| EvalPair::from_text(s, &[s]).unwrap()).collect();
    let r = evaluate_corpus(&pairs).unwrap();
    for v in [r.bleu1, r.bleu2, r.bleu3, r.bleu4, r.rouge_l] {
        assert!((v - 1.0).abs() < 1e-12);
    }
    let meteor_want = pairs
        .iter()
        .map(|p| 1.0 - 0.5 / (p.candidate.len() as f64).powi(3))
        .sum::<f64>()
        / 3.0;
    assert!((r.meteor - meteor_want).abs() < 1e-12);
    // "the" and "me" are shared, so idf-weighted cosine is still exact
    assert!((r.cider - 10.0).abs() < 1e-9, "{}", r.cider);
    assert_eq!(evaluate_corpus(&pairs).unwrap(), r);
}

#[test]
fn empty_corpus_is_rejected() {
    assert_eq!(evaluate_corpus(&[]), Err(MetricsError::EmptyCorpus));
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 1..9)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

fn corpus() -> impl Strategy<Value = Vec<EvalPair>> {
    prop::collection::vec(
        (sentence(), prop::collection::vec(sentence(), 1..3))
            .prop_map(|(c, r)| EvalPair::new(c, r).unwrap()),
        1..12,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scores_stay_in_range(pairs in corpus()) {
        let r = evaluate_corpus(&pairs).unwrap();
        for v in [r.bleu1, r.bleu2, r.bleu3, r.bleu4, r.rouge_l, r.meteor] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
        prop_assert!((0.0..=10.0 + 1e-9).contains(&r.cider));
    }

    #[test]
    fn permutation_invariant(pairs in corpus(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(evaluate_corpus(&pairs).unwrap(), evaluate_corpus(&shuffled).unwrap());
    }

    #[test]
    fn corrupting_a_perfect_candidate_never_helps(s in sentence(), pos in any::<prop::sample::Index>()) {
        let perfect = vec![EvalPair::new(s.clone(), vec![s.clone()]).unwrap()];
        let mut bad = s.clone();
        bad[pos.index(s.len())] = "zzz".to_string();
        let worse = vec![EvalPair::new(bad, vec![s]).unwrap()];
        // idf is taken from the perfect corpus so both are scored alike
        let idf = CorpusIdf::from_references(&perfect);
        let a = evaluate_corpus(&perfect).unwrap();
        let b = evaluate_corpus(&worse).unwrap();
        for (x, y) in a.values().iter().zip(b.values()).take(6) {
            prop_assert!(y <= *x + 1e-12);
        }
        prop_assert!(cider(&worse, &idf).unwrap() <= cider(&perfect, &idf).unwrap() + 1e-12);
    }
}

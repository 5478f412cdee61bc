//! Metrics against independent brute-force oracles.

use dramaturg_core::metrics::{
    jaccard_lemma_similarity, levenshtein, relative_levenshtein, repetition_scores, tokenize,
    MAX_NGRAM,
};
use proptest::prelude::*;

#[path = "support/oracles.rs"]
mod oracles;

use oracles::{chars, jaccard_oracle, lev_oracle, overlap_oracle, runs_oracle};

const WORDS: &[&str] = &[
    "cat", "cats", "run", "running", "ran", "city", "cities", "was", "is", "box", "boxes", "the",
    "a", "Stopped", "stop",
];

fn token_text() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        (proptest::sample::select(WORDS), proptest::sample::select(&[" ", ", ", ". ", "\n", "! "][..])),
        0..=50,
    )
    .prop_map(|parts| parts.into_iter().map(|(w, sep)| format!("{w}{sep}")).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn levenshtein_matches_oracle(a in "[abcé]{0,20}", b in "[abcé]{0,20}") {
        prop_assert_eq!(levenshtein(&a, &b), lev_oracle(&chars(&a), &chars(&b)));
    }

    #[test]
    fn levenshtein_is_a_metric(a in "[ab]{0,8}", b in "[ab]{0,8}", c in "[ab]{0,8}") {
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        prop_assert_eq!(levenshtein(&a, &b) == 0, a == b);
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn jaccard_matches_oracle(a in token_text(), b in token_text()) {
        let j = jaccard_lemma_similarity(&a, &b);
        prop_assert_eq!(j, jaccard_oracle(&tokenize(&a), &tokenize(&b)));
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(j, jaccard_lemma_similarity(&b, &a));
    }

    #[test]
    fn repetition_matches_oracle(text in token_text()) {
        let tokens = tokenize(&text);
        let report = repetition_scores(&text);
        for n in 1..=MAX_NGRAM {
            prop_assert_eq!(report.ngram_overlap[&n], overlap_oracle(&tokens, n), "n={}", n);
        }
        let (tcr, lcr) = runs_oracle(&tokens);
        prop_assert_eq!(report.total_consecutive_repetition, tcr);
        prop_assert_eq!(report.longest_consecutive_repetition, lcr);
        prop_assert!(report.ngram_overlap.values().all(|v| v.is_finite() && *v >= 0.0 && *v <= 1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn deleting_everything_costs_one(x in "\\PC{1,40}") {
        prop_assert_eq!(relative_levenshtein(&x, "").unwrap(), 1.0);
    }
}

#[test]
fn jaccard_equals_one_iff_lemma_sets_match() {
    assert_eq!(jaccard_lemma_similarity("cats ran", "cat running"), 1.0);
    assert!(jaccard_lemma_similarity("cats ran", "cat") < 1.0);
}

mod common;

use common::*;
use flashback::evaluation::{bleu3, distinct_ratio, ols_regress, BLEU_EPSILON};

#[test]
fn metrics_match_independent_oracles() {
    let d = metric_oracle_deviations(100, 2024);
    assert!(d.diversity < 1e-9, "{d:?}");
    assert!(d.correlation < 1e-9, "{d:?}");
    assert!(d.rouge < 1e-9, "{d:?}");
    assert!(d.ols < 1e-9, "{d:?}");
    assert_eq!(d.disagreements, 0);
}

#[test]
fn ols_recovers_exact_line() {
    let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
    let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] + 1.0).collect();
    let fit = ols_regress(&y, &x, &["x"]).unwrap();
    assert!((fit.coefficients[0].coef - 2.0).abs() < 1e-12);
    assert!((fit.intercept().coef - 1.0).abs() < 1e-12);
}

/// Modified n-gram precisions counted by hand for a two-sentence corpus.
#[test]
fn bleu_two_sentence_corpus() {
    let hyps = ["the cat sat on the mat", "a dog ran"];
    let refs = ["the cat is on the mat", "a dog ran home"];
    // unigrams: 5/6 + 3/3, bigrams: 3/5 + 2/2, trigrams: 1/4 + 1/1
    let p = [8.0 / 9.0, 5.0 / 7.0, 2.0 / 5.0];
    let bp = (1.0f64 - 10.0 / 9.0).exp();
    let expected = 100.0 * bp * (p.iter().map(|v: &f64| v.ln()).sum::<f64>() / 3.0).exp();
    assert!((bleu3(&hyps, &refs).unwrap() - expected).abs() < 1e-9);
}

#[test]
fn bleu_without_trigram_matches_uses_epsilon() {
    let hyps = ["x y z w"];
    let refs = ["x y q z w"];
    // unigrams 4/4, bigrams 2/3, trigrams 0/2 floored to epsilon
    let p = [1.0, 2.0 / 3.0, BLEU_EPSILON / 2.0];
    let bp = (1.0f64 - 5.0 / 4.0).exp();
    let expected = 100.0 * bp * (p.iter().map(|v: &f64| v.ln()).sum::<f64>() / 3.0).exp();
    assert!((bleu3(&hyps, &refs).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn distinct_ratio_counts_types_over_tokens() {
    assert_eq!(distinct_ratio(&["a b a", "c a"]).unwrap(), 60.0);
}

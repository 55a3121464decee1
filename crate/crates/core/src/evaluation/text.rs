//! Surface metrics over generated text.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::models::{Codec, SeqModel};

/// Zero n-gram match counts are replaced by this value.
pub const BLEU_EPSILON: f64 = 1e-9;

fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

fn aligned<T, U>(a: &[T], b: &[U]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Percentage of distinct whitespace tokens over all tokens in `texts`.
pub fn distinct_ratio<S: AsRef<str>>(texts: &[S]) -> Result<f64> {
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for t in texts {
        for w in words(t.as_ref()) {
            seen.insert(w);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(100.0 * seen.len() as f64 / total as f64)
}

fn ngram_counts<'t, 's>(tokens: &'t [&'s str], n: usize) -> HashMap<&'t [&'s str], usize> {
    let mut counts = HashMap::new();
    for g in tokens.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Corpus BLEU-3 with one reference per hypothesis, on a 0 to 100 scale.
pub fn bleu3<S: AsRef<str>, R: AsRef<str>>(hypotheses: &[S], references: &[R]) -> Result<f64> {
    aligned(hypotheses, references)?;
    let mut matches = [0usize; 3];
    let mut totals = [0usize; 3];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        let h = words(h.as_ref());
        let r = words(r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=3 {
            let rc = ngram_counts(&r, n);
            for (g, c) in ngram_counts(&h, n) {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let log_precision: f64 = (0..3)
        .map(|i| {
            let m = if matches[i] == 0 {
                BLEU_EPSILON
            } else {
                matches[i] as f64
            };
            (m / totals[i].max(1) as f64).ln()
        })
        .sum::<f64>()
        / 3.0;
    let brevity = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * brevity * log_precision.exp())
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// Mean per-pair LCS F1.
pub fn rouge_l<S: AsRef<str>, R: AsRef<str>>(hypotheses: &[S], references: &[R]) -> Result<f64> {
    aligned(hypotheses, references)?;
    let total: f64 = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| {
            let (h, r) = (words(h.as_ref()), words(r.as_ref()));
            let l = lcs_len(&h, &r);
            if l == 0 {
                return 0.0;
            }
            let p = l as f64 / h.len() as f64;
            let rc = l as f64 / r.len() as f64;
            2.0 * p * rc / (p + rc)
        })
        .sum();
    Ok(total / hypotheses.len() as f64)
}

/// A frozen language model that assigns log-probabilities to text.
pub trait LanguageScorer {
    /// Natural-log probability of `text` and the number of scored tokens.
    fn score(&self, text: &str) -> Result<(f64, usize)>;
}

/// Perplexity of `texts` under `scorer`, pooled over tokens.
pub fn gen_perplexity<S: AsRef<str>>(
    texts: &[S],
    scorer: Option<&dyn LanguageScorer>,
) -> Result<f64> {
    let scorer = scorer.ok_or(Error::NoScorer)?;
    let (mut logp, mut n) = (0.0, 0usize);
    for t in texts {
        let (lp, k) = scorer.score(t.as_ref())?;
        logp += lp;
        n += k;
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    Ok((-logp / n as f64).exp())
}

/// Scores text with a sequence model given an empty source, so the model
/// acts as an unconditional language model.
#[derive(Debug, Clone)]
pub struct ModelScorer {
    pub model: SeqModel,
    pub codec: Codec,
}

impl LanguageScorer for ModelScorer {
    fn score(&self, text: &str) -> Result<(f64, usize)> {
        let target = self.codec.story_target(text);
        let lp = self.model.log_prob(&[], &target)?;
        Ok((lp, target.scored_len()))
    }
}

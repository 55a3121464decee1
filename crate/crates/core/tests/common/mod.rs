#![allow(dead_code)]

//! Strategies and independent oracles shared by the integration tests.

use flashback::models::{SeqModel, SeqModelConfig, Target};
use flashback::storyline::{Event, StructuredStoryline, TemporalRelation};
use proptest::prelude::*;

pub fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,6}"
}

pub fn phrase() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 0..3).prop_map(|w| w.join(" "))
}

pub fn event() -> impl Strategy<Value = Event> {
    (word(), phrase(), phrase()).prop_map(|(t, a, b)| Event::new(t, a, b))
}

pub fn relation() -> impl Strategy<Value = TemporalRelation> {
    prop_oneof![
        Just(TemporalRelation::Before),
        Just(TemporalRelation::After),
        Just(TemporalRelation::Vague)
    ]
}

/// Storylines of 1..=6 events with prompts.
pub fn prompted_storyline() -> impl Strategy<Value = StructuredStoryline> {
    prop::collection::vec(event(), 1..=6).prop_flat_map(|events| {
        let n = events.len();
        prop::collection::vec(relation(), n - 1).prop_map(move |p| {
            StructuredStoryline::new(events.clone(), Some(p)).expect("valid storyline")
        })
    })
}

pub fn prompt_free_storyline() -> impl Strategy<Value = StructuredStoryline> {
    prop::collection::vec(event(), 1..=6)
        .prop_map(|e| StructuredStoryline::new(e, None).expect("valid storyline"))
}

pub fn micro_model(
    vocab: usize,
    embed: usize,
    hidden: usize,
    layers: usize,
    seed: u64,
) -> SeqModel {
    SeqModel::new(
        SeqModelConfig {
            embed_dim: embed,
            hidden_dim: hidden,
            n_layers: layers,
            max_len: 32,
            rng_seed: seed,
            ..Default::default()
        },
        vocab,
    )
    .expect("micro model")
}

/// Central finite-difference gradient of `f` at the model's parameters.
pub fn numeric_gradient(
    model: &mut SeqModel,
    h: f64,
    mut f: impl FnMut(&SeqModel) -> f64,
) -> Vec<f64> {
    let n = model.n_params();
    let mut g = vec![0.0; n];
    for i in 0..n {
        let x = model.params()[i];
        model.params_mut()[i] = x + h;
        let up = f(model);
        model.params_mut()[i] = x - h;
        let down = f(model);
        model.params_mut()[i] = x;
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// `|a - b| / max(|b|, floor)` in the Euclidean norm.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(floor)
}

/// Every plain target of length `len` over `vocab` tokens.
pub fn all_targets(vocab: u32, len: usize) -> Vec<Target> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p: Vec<u32>| {
                (0..vocab).map(move |t| {
                    let mut q = p.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
    }
    out.iter().map(|ids| Target::plain(ids)).collect()
}

/// Shannon entropy in bits, from raw counts.
pub fn entropy_bits(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}

/// Pearson correlation from the raw-moment formula.
pub fn pearson_raw(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Longest common subsequence length by memoized recursion over suffixes.
pub fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    fn go(a: &[&str], b: &[&str], memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if a.is_empty() || b.is_empty() {
            return 0;
        }
        if let Some(v) = memo[a.len()][b.len()] {
            return v;
        }
        let v = if a[0] == b[0] {
            1 + go(&a[1..], &b[1..], memo)
        } else {
            go(&a[1..], b, memo).max(go(a, &b[1..], memo))
        };
        memo[a.len()][b.len()] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
    go(a, b, &mut memo)
}

pub fn rouge_l_oracle(hyps: &[String], refs: &[String]) -> f64 {
    let mut total = 0.0;
    for (h, r) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.split_whitespace().collect();
        let r: Vec<&str> = r.split_whitespace().collect();
        let l = lcs_len(&h, &r) as f64;
        if l > 0.0 {
            let (p, rc) = (l / h.len() as f64, l / r.len() as f64);
            total += 2.0 * p * rc / (p + rc);
        }
    }
    total / hyps.len() as f64
}

/// Least squares through the Moore-Penrose pseudo-inverse, computed by
/// Gauss-Jordan elimination on `XᵀX`. Returns slopes followed by the intercept.
pub fn ols_oracle(y: &[f64], x: &[Vec<f64>]) -> Vec<f64> {
    let k = x[0].len() + 1;
    let design: Vec<Vec<f64>> = x
        .iter()
        .map(|r| r.iter().copied().chain([1.0]).collect())
        .collect();
    let mut a = vec![vec![0.0; 2 * k]; k];
    for i in 0..k {
        for j in 0..k {
            a[i][j] = design.iter().map(|r| r[i] * r[j]).sum();
        }
        a[i][k + i] = 1.0;
    }
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        let d = a[col][col];
        a[col].iter_mut().for_each(|v| *v /= d);
        for row in 0..k {
            if row != col {
                let f = a[row][col];
                for c in 0..2 * k {
                    a[row][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| a[i][k + j] * design.iter().zip(y).map(|(r, yy)| r[j] * yy).sum::<f64>())
                .sum()
        })
        .collect()
}

/// Largest deviations of the library metrics from the oracles above over
/// `n` random small inputs each.
#[derive(Debug, Default)]
pub struct OracleDeviations {
    pub diversity: f64,
    pub correlation: f64,
    pub rouge: f64,
    pub ols: f64,
    /// Inputs where exactly one side reported an undefined value.
    pub disagreements: usize,
}

pub fn metric_oracle_deviations(n: usize, seed: u64) -> OracleDeviations {
    use flashback::evaluation::{
        after_count_correlation, ols_regress, rouge_l, temporal_diversity, RelationDistribution,
    };
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = OracleDeviations::default();
    let words = ["a", "b", "c", "d", "e"];
    for _ in 0..n {
        let counts = [
            rng.gen_range(0..20),
            rng.gen_range(0..20),
            rng.gen_range(1..20),
        ];
        let h = temporal_diversity(&RelationDistribution::from_counts(counts).unwrap());
        out.diversity = out.diversity.max((h - entropy_bits(&counts)).abs());

        let len = rng.gen_range(3..15);
        let gold: Vec<usize> = (0..len).map(|_| rng.gen_range(0..4)).collect();
        let generated: Vec<usize> = (0..len).map(|_| rng.gen_range(0..4)).collect();
        let f = |v: &[usize]| v.iter().map(|&c| c as f64).collect::<Vec<_>>();
        let oracle = pearson_raw(&f(&gold), &f(&generated));
        match after_count_correlation(&gold, &generated) {
            Ok(r) => out.correlation = out.correlation.max((r - oracle).abs()),
            Err(_) if !oracle.is_finite() => {}
            Err(_) => out.disagreements += 1,
        }

        let sentence = |rng: &mut rand_chacha::ChaCha8Rng| {
            let k = rng.gen_range(1..8);
            (0..k)
                .map(|_| words[rng.gen_range(0..words.len())])
                .collect::<Vec<_>>()
                .join(" ")
        };
        let pairs = rng.gen_range(1..4);
        let hyps: Vec<String> = (0..pairs).map(|_| sentence(&mut rng)).collect();
        let refs: Vec<String> = (0..pairs).map(|_| sentence(&mut rng)).collect();
        out.rouge = out
            .rouge
            .max((rouge_l(&hyps, &refs).unwrap() - rouge_l_oracle(&hyps, &refs)).abs());

        let k = rng.gen_range(1..4);
        let rows = rng.gen_range(k + 3..k + 12);
        let x: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let y: Vec<f64> = (0..rows).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let names: Vec<String> = (0..k).map(|i| format!("x{i}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let fit = ols_regress(&y, &x, &names).unwrap();
        let oracle = ols_oracle(&y, &x);
        for (c, o) in fit.coefficients.iter().zip(&oracle) {
            out.ols = out.ols.max((c.coef - o).abs());
        }
    }
    out
}

/// Enumerates all 64 length-3 targets over a 4-token vocabulary and returns
/// the score-function expectation and a finite-difference gradient of E[R].
pub fn reinforce_against_enumeration(reward: impl Fn(&Target) -> f64) -> (Vec<f64>, Vec<f64>) {
    let mut model = micro_model(4, 2, 3, 1, 21);
    let source = [3, 1];
    let targets = all_targets(4, 3);
    let mut estimate = vec![0.0; model.n_params()];
    for t in &targets {
        let p = model.log_prob(&source, t).unwrap().exp();
        flashback::training::reinforce_gradient(
            &model,
            &source,
            t,
            p * reward(t),
            0.0,
            &mut estimate,
        )
        .unwrap();
    }
    let expected = numeric_gradient(&mut model, 1e-5, |m| {
        targets
            .iter()
            .map(|t| m.log_prob(&source, t).unwrap().exp() * reward(t))
            .sum()
    });
    (estimate, expected)
}

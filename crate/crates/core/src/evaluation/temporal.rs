//! Measures of how generated stories realize temporal prompts.

use serde::{Deserialize, Serialize};

use super::annotations::AnnotationRecord;
use crate::corpus::{detect_marker, tokenize_words};
use crate::error::{Error, Result};
use crate::storyline::{Story, StructuredStoryline, TemporalRelation};

/// Share of each relation; the shares sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationDistribution {
    pub before: f64,
    pub after: f64,
    pub vague: f64,
}

impl RelationDistribution {
    pub fn new(before: f64, after: f64, vague: f64) -> Result<Self> {
        let shares = [before, after, vague];
        if shares.iter().any(|s| !(0.0..=1.0).contains(s))
            || (shares.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidConfig(format!(
                "relation shares {shares:?} are not a distribution"
            )));
        }
        Ok(RelationDistribution {
            before,
            after,
            vague,
        })
    }

    /// Normalizes counts indexed by [`TemporalRelation::index`].
    pub fn from_counts(counts: [usize; 3]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyInput);
        }
        let t = total as f64;
        Ok(RelationDistribution {
            before: counts[0] as f64 / t,
            after: counts[1] as f64 / t,
            vague: counts[2] as f64 / t,
        })
    }

    pub fn of(relations: &[TemporalRelation]) -> Result<Self> {
        let mut counts = [0usize; 3];
        for r in relations {
            counts[r.index()] += 1;
        }
        Self::from_counts(counts)
    }

    pub fn share(&self, r: TemporalRelation) -> f64 {
        self.shares()[r.index()]
    }

    pub fn shares(&self) -> [f64; 3] {
        [self.before, self.after, self.vague]
    }
}

/// Base-2 Shannon entropy of the relation shares.
pub fn temporal_diversity(d: &RelationDistribution) -> f64 {
    -d.shares()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.log2())
        .sum::<f64>()
}

/// Pooled relation shares across all annotated pairs.
pub fn relation_distribution(annotations: &[AnnotationRecord]) -> Result<RelationDistribution> {
    let pooled: Vec<TemporalRelation> = annotations
        .iter()
        .flat_map(|a| a.pair_relations.iter().copied())
        .collect();
    RelationDistribution::of(&pooled)
}

/// How per-story diversity values are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversityAggregation {
    /// Entropy of the pooled distribution.
    #[default]
    Pooled,
    /// Mean of per-story entropies.
    PerStory,
}

pub fn diversity_of(
    annotations: &[AnnotationRecord],
    aggregation: DiversityAggregation,
) -> Result<f64> {
    match aggregation {
        DiversityAggregation::Pooled => {
            Ok(temporal_diversity(&relation_distribution(annotations)?))
        }
        DiversityAggregation::PerStory => {
            let per: Vec<f64> = annotations
                .iter()
                .filter(|a| !a.pair_relations.is_empty())
                .map(|a| {
                    RelationDistribution::of(&a.pair_relations).map(|d| temporal_diversity(&d))
                })
                .collect::<Result<_>>()?;
            if per.is_empty() {
                return Err(Error::EmptyInput);
            }
            Ok(per.iter().sum::<f64>() / per.len() as f64)
        }
    }
}

/// Percentage of AFTER prompts realized as AFTER or VAGUE. Positions with
/// other prompts are ignored.
pub fn prompt_accuracy(
    prompts: &[TemporalRelation],
    annotated: &[TemporalRelation],
) -> Result<f64> {
    if prompts.len() != annotated.len() {
        return Err(Error::LengthMismatch {
            left: prompts.len(),
            right: annotated.len(),
        });
    }
    let (mut total, mut correct) = (0usize, 0usize);
    for (p, a) in prompts.iter().zip(annotated) {
        if *p == TemporalRelation::After {
            total += 1;
            if matches!(a, TemporalRelation::After | TemporalRelation::Vague) {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::NoAfterPrompts);
    }
    Ok(100.0 * correct as f64 / total as f64)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::NotEnoughRows {
            rows: x.len(),
            needed: 2,
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    pearson(&ranks(x), &ranks(y))
}

/// Per-story AFTER counts: requested by the prompts and found in the output.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AfterCounts {
    pub gold: Vec<usize>,
    pub generated: Vec<usize>,
}

impl AfterCounts {
    pub fn push(&mut self, gold: usize, generated: usize) {
        self.gold.push(gold);
        self.generated.push(generated);
    }

    pub fn correlation(&self) -> Result<f64> {
        after_count_correlation(&self.gold, &self.generated)
    }
}

pub fn after_count_correlation(gold: &[usize], generated: &[usize]) -> Result<f64> {
    let f = |v: &[usize]| v.iter().map(|&c| c as f64).collect::<Vec<_>>();
    pearson(&f(gold), &f(generated))
}

/// Fraction of non-placeholder triggers that occur as a token of the story
/// (case-insensitive). A storyline without triggers has coverage 0.
pub fn event_coverage(storyline: &StructuredStoryline, story: &Story) -> f64 {
    let tokens: Vec<String> = story
        .sentences
        .iter()
        .flat_map(|s| tokenize_words(s))
        .collect();
    let triggers: Vec<String> = storyline
        .events()
        .iter()
        .filter(|e| !e.is_placeholder())
        .map(|e| e.trigger.trim().to_lowercase())
        .collect();
    if triggers.is_empty() {
        return 0.0;
    }
    let hit = triggers
        .iter()
        .filter(|t| tokens.iter().any(|w| w == *t))
        .count();
    hit as f64 / triggers.len() as f64
}

/// Relations between consecutive sentences read from their connectives:
/// entry `i` relates sentence `i` to sentence `i + 1`.
pub fn marker_relations(story: &Story) -> Vec<TemporalRelation> {
    story
        .sentences
        .iter()
        .skip(1)
        .map(|s| detect_marker(s))
        .collect()
}

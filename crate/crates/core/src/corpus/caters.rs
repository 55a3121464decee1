//! Benchmarking a relation annotator against CaTeRS interval labels.
//!
//! CaTeRS labels intervals while the prompts use start-time relations, so
//! each CaTeRS label maps to the set of start-time relations it is
//! compatible with. `Overlaps` is compatible with every relation, which makes
//! it uninformative; those pairs are counted separately for manual review.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::storyline::TemporalRelation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CatersLabel {
    Before,
    Identity,
    Contains,
    Overlaps,
}

impl CatersLabel {
    pub const ALL: [CatersLabel; 4] =
        [Self::Before, Self::Identity, Self::Contains, Self::Overlaps];
}

impl FromStr for CatersLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "before" => Ok(Self::Before),
            "identity" => Ok(Self::Identity),
            "contains" => Ok(Self::Contains),
            "overlaps" | "overlap" => Ok(Self::Overlaps),
            other => Err(Error::InvalidConfig(format!(
                "unknown CaTeRS label {other:?}"
            ))),
        }
    }
}

pub fn map_caters_label(label: CatersLabel) -> BTreeSet<TemporalRelation> {
    use TemporalRelation::*;
    match label {
        CatersLabel::Before | CatersLabel::Contains => [Before].into(),
        CatersLabel::Identity => [Vague].into(),
        CatersLabel::Overlaps => [Before, After, Vague].into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationPrecision {
    pub predicted: usize,
    pub correct: usize,
    /// `None` when the relation was never predicted.
    pub precision: Option<f64>,
    /// Precision when every prediction on an Overlaps pair is held back as
    /// unverified.
    pub strict_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub per_relation: BTreeMap<TemporalRelation, RelationPrecision>,
    pub total: usize,
    pub correct: usize,
    pub overall: f64,
    /// Pairs whose gold label is Overlaps.
    pub overlaps_flagged: usize,
}

pub fn benchmark_annotator(
    predictions: &[TemporalRelation],
    gold: &[CatersLabel],
) -> Result<BenchmarkReport> {
    if predictions.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: gold.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts: BTreeMap<TemporalRelation, (usize, usize, usize)> = BTreeMap::new();
    let mut overlaps = 0;
    for (p, g) in predictions.iter().zip(gold) {
        let entry = counts.entry(*p).or_default();
        entry.0 += 1;
        if map_caters_label(*g).contains(p) {
            entry.1 += 1;
            if *g != CatersLabel::Overlaps {
                entry.2 += 1;
            }
        }
        if *g == CatersLabel::Overlaps {
            overlaps += 1;
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let per_relation = TemporalRelation::ALL
        .into_iter()
        .map(|r| {
            let (predicted, correct, strict) = counts.get(&r).copied().unwrap_or_default();
            (
                r,
                RelationPrecision {
                    predicted,
                    correct,
                    precision: ratio(correct, predicted),
                    strict_precision: ratio(strict, predicted),
                },
            )
        })
        .collect();
    let correct: usize = counts.values().map(|c| c.1).sum();
    Ok(BenchmarkReport {
        per_relation,
        total: predictions.len(),
        correct,
        overall: correct as f64 / predictions.len() as f64,
        overlaps_flagged: overlaps,
    })
}

/// One label per line; blank lines are skipped.
pub fn load_caters_labels(path: &Path) -> Result<Vec<CatersLabel>> {
    parse_lines(path)
}

pub(crate) fn parse_lines<T: FromStr<Err = Error>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim_matches(|c: char| c.is_whitespace() || c == '"')
                .parse()
                .map_err(|e: Error| Error::Schema {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
        })
        .collect()
}

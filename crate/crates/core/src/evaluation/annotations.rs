//! Human-evaluation records and the per-story rows built from them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::temporal::{temporal_diversity, RelationDistribution};
use crate::corpus::read_jsonl;
use crate::error::{Error, Result};
use crate::storyline::TemporalRelation;

/// One annotated story: pairwise relations, a coherence bit and an
/// interest rank where `max_rank` is the most interesting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub story_id: String,
    pub model_id: String,
    pub pair_relations: Vec<TemporalRelation>,
    pub coherence: u8,
    pub interest_rank: u32,
    pub max_rank: u32,
    /// AFTER prompts given to the generator; when absent, annotated AFTER
    /// relations are counted instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_prompts: Option<usize>,
}

impl AnnotationRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.coherence > 1 {
            return Err(format!("coherence must be 0 or 1, got {}", self.coherence));
        }
        if self.interest_rank < 1 || self.interest_rank > self.max_rank {
            return Err(format!(
                "interest_rank {} outside 1..={}",
                self.interest_rank, self.max_rank
            ));
        }
        Ok(())
    }

    pub fn after_count(&self) -> usize {
        self.after_prompts.unwrap_or_else(|| {
            self.pair_relations
                .iter()
                .filter(|r| **r == TemporalRelation::After)
                .count()
        })
    }

    /// Entropy of this story's own relation shares; 0 without relations.
    pub fn diversity(&self) -> f64 {
        RelationDistribution::of(&self.pair_relations).map_or(0.0, |d| temporal_diversity(&d))
    }
}

/// Reads and validates an annotation JSONL file.
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let records: Vec<AnnotationRecord> = read_jsonl(path)?;
    for (i, r) in records.iter().enumerate() {
        r.validate().map_err(|message| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
    }
    Ok(records)
}

pub const PREDICTORS: [&str; 3] = ["coherence", "diversity", "n_after"];

/// Interest targets and `[coherence, diversity, n_after]` rows.
pub fn regression_rows(annotations: &[AnnotationRecord]) -> (Vec<f64>, Vec<Vec<f64>>) {
    annotations
        .iter()
        .map(|a| {
            (
                a.interest_rank as f64,
                vec![a.coherence as f64, a.diversity(), a.after_count() as f64],
            )
        })
        .unzip()
}

/// Per-model aggregates of the human metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanSummary {
    pub model_id: String,
    pub n: usize,
    /// Percentage of stories judged coherent.
    pub coherence_pct: f64,
    pub interest: f64,
    /// Entropy of the model's pooled relation shares.
    pub diversity: f64,
}

/// Groups by `model_id` in first-appearance order.
pub fn summarize_by_model(annotations: &[AnnotationRecord]) -> Result<Vec<HumanSummary>> {
    let mut ids: Vec<&str> = Vec::new();
    for a in annotations {
        if !ids.contains(&a.model_id.as_str()) {
            ids.push(&a.model_id);
        }
    }
    ids.into_iter()
        .map(|id| {
            let group: Vec<AnnotationRecord> = annotations
                .iter()
                .filter(|a| a.model_id == id)
                .cloned()
                .collect();
            let n = group.len() as f64;
            Ok(HumanSummary {
                model_id: id.to_string(),
                n: group.len(),
                coherence_pct: 100.0 * group.iter().map(|a| a.coherence as f64).sum::<f64>() / n,
                interest: group.iter().map(|a| a.interest_rank as f64).sum::<f64>() / n,
                diversity: super::temporal::relation_distribution(&group)
                    .map_or(0.0, |d| temporal_diversity(&d)),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn loads_and_validates() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"story_id":"s1","model_id":"rl","pair_relations":["before","after","vague","before"],"coherence":1,"interest_rank":3,"max_rank":5}}"#
        )
        .unwrap();
        let recs = load_annotations(f.path()).unwrap();
        assert_eq!(recs[0].after_count(), 1);
        assert!((recs[0].diversity() - 1.5).abs() < 1e-12);

        writeln!(
            f,
            r#"{{"story_id":"s2","model_id":"rl","pair_relations":[],"coherence":1,"interest_rank":6,"max_rank":5}}"#
        )
        .unwrap();
        match load_annotations(f.path()) {
            Err(Error::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}

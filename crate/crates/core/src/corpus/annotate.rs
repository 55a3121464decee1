use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synthetic::detect_marker;
use super::StoryRecord;
use crate::error::{Error, Result};
use crate::storyline::TemporalRelation;

/// One annotator's relation for one event pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorVote {
    pub relation: TemporalRelation,
    pub annotator_id: String,
}

impl AnnotatorVote {
    pub fn new(relation: TemporalRelation, annotator_id: impl Into<String>) -> Self {
        AnnotatorVote {
            relation,
            annotator_id: annotator_id.into(),
        }
    }
}

/// Unanimous votes keep their relation; any disagreement becomes VAGUE.
pub fn consensus_relation(votes: &[AnnotatorVote]) -> Result<TemporalRelation> {
    let first = votes.first().ok_or(Error::EmptyVotes)?.relation;
    if votes.iter().all(|v| v.relation == first) {
        Ok(first)
    } else {
        Ok(TemporalRelation::Vague)
    }
}

/// Source of relation votes between event `pair_index` and `pair_index + 1`.
pub trait RelationAnnotator {
    fn votes(&self, record: &StoryRecord, pair_index: usize) -> Result<Vec<AnnotatorVote>>;
}

/// Reads the connective at the start of the later sentence of each pair.
/// Exact on synthetic corpora, where connectives realize the gold relation.
#[derive(Debug, Clone, Copy, Default)]
pub struct MarkerAnnotator;

impl RelationAnnotator for MarkerAnnotator {
    fn votes(&self, record: &StoryRecord, pair_index: usize) -> Result<Vec<AnnotatorVote>> {
        let sentence = record
            .sentences
            .get(pair_index + 1)
            .ok_or(Error::LengthMismatch {
                left: pair_index + 2,
                right: record.sentences.len(),
            })?;
        Ok(vec![AnnotatorVote::new(detect_marker(sentence), "marker")])
    }
}

#[derive(Deserialize)]
struct VoteLine {
    id: String,
    pair_index: usize,
    votes: Vec<String>,
}

/// Votes produced offline by external relation classifiers, one line per
/// `(id, pair_index)`.
#[derive(Debug, Clone, Default)]
pub struct VoteFileAnnotator {
    votes: BTreeMap<(String, usize), Vec<TemporalRelation>>,
}

impl VoteFileAnnotator {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut votes = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let schema = |message: String| Error::Schema {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let rec: VoteLine = serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
            let rels = rec
                .votes
                .iter()
                .map(|v| {
                    v.parse::<TemporalRelation>()
                        .map_err(|e| schema(e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            if votes
                .insert((rec.id.clone(), rec.pair_index), rels)
                .is_some()
            {
                return Err(schema(format!(
                    "duplicate entry for {:?} pair {}",
                    rec.id, rec.pair_index
                )));
            }
        }
        Ok(VoteFileAnnotator { votes })
    }

    pub fn len(&self) -> usize {
        self.votes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }
}

impl RelationAnnotator for VoteFileAnnotator {
    fn votes(&self, record: &StoryRecord, pair_index: usize) -> Result<Vec<AnnotatorVote>> {
        let rels = self
            .votes
            .get(&(record.id.clone(), pair_index))
            .ok_or(Error::EmptyVotes)?;
        Ok(rels
            .iter()
            .enumerate()
            .map(|(i, r)| AnnotatorVote::new(*r, format!("model{i}")))
            .collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AnnotationSummary {
    pub records: usize,
    pub pairs: usize,
    /// Pairs that fell back to VAGUE because the annotator failed.
    pub failures: usize,
    pub before: usize,
    pub after: usize,
    pub vague: usize,
}

/// Fills `prompts` on every record from consensus votes over adjacent event
/// pairs. Annotator failures default to VAGUE with a warning.
pub fn annotate_corpus<A: RelationAnnotator + ?Sized>(
    records: &mut [StoryRecord],
    annotator: &A,
) -> AnnotationSummary {
    let mut summary = AnnotationSummary::default();
    for record in records.iter_mut() {
        let pairs = record.events.len().saturating_sub(1);
        let mut prompts = Vec::with_capacity(pairs);
        for k in 0..pairs {
            let rel = annotator
                .votes(record, k)
                .and_then(|v| consensus_relation(&v))
                .unwrap_or_else(|e| {
                    log::warn!("record {} pair {k}: {e}; using vague", record.id);
                    summary.failures += 1;
                    TemporalRelation::Vague
                });
            match rel {
                TemporalRelation::Before => summary.before += 1,
                TemporalRelation::After => summary.after += 1,
                TemporalRelation::Vague => summary.vague += 1,
            }
            prompts.push(rel);
        }
        summary.pairs += pairs;
        summary.records += 1;
        record.prompts = if record.events.is_empty() {
            None
        } else {
            Some(prompts)
        };
    }
    summary
}

//! Story corpora: records, event extraction, prompt annotation, the
//! synthetic desk-scale corpus, pretraining storylines and the CaTeRS
//! annotator benchmark.

mod annotate;
mod caters;
mod extract;
mod pretrain;
mod synthetic;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use annotate::{
    annotate_corpus, consensus_relation, AnnotationSummary, AnnotatorVote, MarkerAnnotator,
    RelationAnnotator, VoteFileAnnotator,
};
pub use caters::{
    benchmark_annotator, load_caters_labels, map_caters_label, BenchmarkReport, CatersLabel,
    RelationPrecision,
};
pub use extract::{extract_event, load_external_events, split_sentences, tokenize_words};
pub use pretrain::{build_pretraining_storylines, PretrainingSet, NOISE_THRESHOLD};
pub use synthetic::{
    detect_marker, generate_synthetic_corpus, SyntheticConfig, SyntheticVocab, Theme,
};

use crate::error::{Error, Result};
use crate::storyline::{Event, StructuredStoryline, TemporalRelation};

/// Corpus shape conventions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetProfile {
    /// Five-sentence stories; the first sentence is the prefix.
    RocstoriesLike,
    /// A writing prompt as prefix and a free-length story of at most 500 words.
    WritingpromptsLike,
    /// Generated five-sentence stories with gold prompts.
    Synthetic,
}

impl DatasetProfile {
    /// Fixed event count, when the profile has one.
    pub fn n_events(self) -> Option<usize> {
        match self {
            Self::RocstoriesLike | Self::Synthetic => Some(5),
            Self::WritingpromptsLike => None,
        }
    }

    /// Number of leading events that the storyline model receives unmasked.
    pub fn keep_first_k(self) -> usize {
        match self {
            Self::RocstoriesLike | Self::Synthetic => 1,
            Self::WritingpromptsLike => 0,
        }
    }

    pub fn max_story_words(self) -> Option<usize> {
        match self {
            Self::WritingpromptsLike => Some(500),
            _ => None,
        }
    }
}

/// One corpus sample. `sentences` holds the story; for five-sentence
/// profiles the prefix is also its first sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryRecord {
    pub id: String,
    pub prefix: String,
    pub sentences: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<Event>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<Vec<TemporalRelation>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_prompts: Option<Vec<TemporalRelation>>,
}

impl StoryRecord {
    pub fn new(id: impl Into<String>, prefix: impl Into<String>, sentences: Vec<String>) -> Self {
        StoryRecord {
            id: id.into(),
            prefix: prefix.into(),
            sentences,
            events: Vec::new(),
            prompts: None,
            gold_prompts: None,
        }
    }

    /// The sentences the story model has to produce.
    pub fn continuation(&self) -> &[String] {
        match self.sentences.first() {
            Some(first) if first.trim() == self.prefix.trim() => &self.sentences[1..],
            _ => &self.sentences,
        }
    }

    pub fn continuation_text(&self) -> String {
        self.continuation().join(" ")
    }

    pub fn storyline(&self) -> Result<StructuredStoryline> {
        StructuredStoryline::new(self.events.clone(), self.prompts.clone())
    }

    /// Fills `events` from an external map when it has this id, otherwise by
    /// rule-based extraction (placeholders for sentences without a verb).
    pub fn extract_events(&mut self, external: Option<&BTreeMap<String, Vec<Event>>>) {
        if let Some(events) = external.and_then(|m| m.get(&self.id)) {
            self.events = events.clone();
            return;
        }
        self.events = self
            .sentences
            .iter()
            .map(|s| extract_event(s).unwrap_or_else(|_| Event::placeholder()))
            .collect();
    }

    /// Number of AFTER prompts, zero when unannotated.
    pub fn after_count(&self) -> usize {
        self.prompts.as_ref().map_or(0, |p| {
            p.iter().filter(|r| **r == TemporalRelation::After).count()
        })
    }
}

/// Reads a JSONL file, skipping blank lines. Errors carry the 1-based line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Vec<StoryRecord>> {
    read_jsonl(path)
}

/// Deterministic train/dev/test split by position.
pub fn split_corpus<T: Clone>(items: &[T], dev: usize, test: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = items.len();
    let test = test.min(n);
    let dev = dev.min(n - test);
    let train_end = n - dev - test;
    (
        items[..train_end].to_vec(),
        items[train_end..train_end + dev].to_vec(),
        items[train_end + dev..].to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn continuation_strips_prefix_sentence() {
        let r = StoryRecord::new(
            "a",
            "tom ran .",
            vec!["tom ran .".into(), "then tom sat .".into()],
        );
        assert_eq!(r.continuation(), &["then tom sat .".to_string()]);
        let wp = StoryRecord::new("b", "[WP] a prompt", vec!["tom ran .".into()]);
        assert_eq!(wp.continuation().len(), 1);
    }

    #[test]
    fn jsonl_round_trip_and_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let recs = vec![StoryRecord::new("x", "p", vec!["p".into()])];
        write_jsonl(&path, &recs).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), recs);
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"prefix\":\"p\",\"sentences\":[]}\n\n{oops}\n",
        )
        .unwrap();
        match load_corpus(&path) {
            Err(Error::Schema { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn split_sizes() {
        let v: Vec<usize> = (0..10).collect();
        let (a, b, c) = split_corpus(&v, 2, 3);
        assert_eq!((a.len(), b.len(), c.len()), (5, 2, 3));
        assert_eq!(c, vec![7, 8, 9]);
    }
}

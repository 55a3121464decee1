//! The metric report emitted by evaluation runs.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::annotations::{summarize_by_model, AnnotationRecord, HumanSummary};
use super::temporal::{
    event_coverage, marker_relations, prompt_accuracy, relation_distribution, temporal_diversity,
    AfterCounts, RelationDistribution,
};
use super::text::{bleu3, distinct_ratio, gen_perplexity, rouge_l, LanguageScorer};
use crate::corpus::{split_sentences, StoryRecord};
use crate::error::{Error, Result};
use crate::models::GenerationRecord;
use crate::storyline::{Story, StructuredStoryline, TemporalRelation, TokenConventions};

/// Metric values keyed by name, with the reason for each missing metric.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: BTreeMap<String, f64>,
    pub absent: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub human: Vec<HumanSummary>,
}

impl MetricsReport {
    pub fn record(&mut self, name: &str, value: Result<f64>) {
        match value {
            Ok(v) => {
                self.metrics.insert(name.to_string(), v);
            }
            Err(e) => {
                self.absent.insert(name.to_string(), e.to_string());
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    /// `metric,value` rows; absent metrics have an empty value.
    pub fn to_csv(&self) -> String {
        let mut rows: BTreeMap<String, String> = self
            .metrics
            .iter()
            .map(|(k, v)| (k.clone(), format!("{v}")))
            .chain(self.absent.keys().map(|k| (k.clone(), String::new())))
            .collect();
        for h in &self.human {
            let id = &h.model_id;
            rows.insert(format!("human.{id}.n"), h.n.to_string());
            rows.insert(
                format!("human.{id}.coherence_pct"),
                h.coherence_pct.to_string(),
            );
            rows.insert(format!("human.{id}.interest"), h.interest.to_string());
            rows.insert(format!("human.{id}.diversity"), h.diversity.to_string());
        }
        let mut out = String::from("metric,value\n");
        for (k, v) in rows {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }
}

/// Everything an evaluation run can draw on. Only `records` and
/// `generations` are required.
pub struct EvalInputs<'a> {
    pub records: &'a [StoryRecord],
    pub generations: &'a [GenerationRecord],
    pub conv: &'a TokenConventions,
    pub scorer: Option<&'a dyn LanguageScorer>,
    pub reference_perplexity: Option<f64>,
    pub annotations: Option<&'a [AnnotationRecord]>,
}

/// Relations read from the connectives of a generated story, aligned to
/// `n` prompt positions. Missing sentences count as BEFORE.
pub fn aligned_marker_relations(
    prefix: &str,
    continuation: &str,
    n: usize,
) -> Vec<TemporalRelation> {
    let mut rel = marker_relations(&full_story(prefix, continuation));
    rel.resize(n, TemporalRelation::Before);
    rel
}

fn full_story(prefix: &str, continuation: &str) -> Story {
    let mut sentences = split_sentences(prefix);
    let prefix_len = sentences.len();
    sentences.extend(split_sentences(continuation));
    Story {
        sentences,
        prefix_len,
    }
}

pub fn evaluate(inputs: &EvalInputs) -> Result<MetricsReport> {
    let by_id: HashMap<&str, &StoryRecord> =
        inputs.records.iter().map(|r| (r.id.as_str(), r)).collect();
    let pairs: Vec<(&GenerationRecord, &StoryRecord)> = inputs
        .generations
        .iter()
        .filter_map(|g| by_id.get(g.id.as_str()).map(|r| (g, *r)))
        .collect();
    if pairs.len() < inputs.generations.len() {
        log::warn!(
            "{} generations have no matching record",
            inputs.generations.len() - pairs.len()
        );
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hyps: Vec<&str> = pairs.iter().map(|(g, _)| g.story.as_str()).collect();
    let refs: Vec<String> = pairs.iter().map(|(_, r)| r.continuation_text()).collect();

    let mut report = MetricsReport::default();
    report.record(
        "ref_ppl",
        inputs.reference_perplexity.ok_or(Error::NoScorer),
    );
    report.record("gen_ppl", gen_perplexity(&hyps, inputs.scorer));
    report.record("distinct", distinct_ratio(&hyps));
    report.record("bleu3", bleu3(&hyps, &refs));
    report.record("rouge_l", rouge_l(&hyps, &refs));
    report.record(
        "parse_rate",
        Ok(pairs.iter().filter(|(g, _)| g.parse_ok).count() as f64 / pairs.len() as f64),
    );

    let coverages: Vec<f64> = pairs
        .iter()
        .filter_map(|(g, r)| {
            let line = StructuredStoryline::parse(&g.storyline_text, inputs.conv).ok()?;
            Some(event_coverage(&line, &full_story(&r.prefix, &g.story)))
        })
        .collect();
    report.record(
        "event_coverage",
        if coverages.is_empty() {
            Err(Error::EmptyInput)
        } else {
            Ok(coverages.iter().sum::<f64>() / coverages.len() as f64)
        },
    );

    let mut counts = AfterCounts::default();
    let (mut all_prompts, mut all_rel) = (Vec::new(), Vec::new());
    for (g, r) in &pairs {
        let rel = aligned_marker_relations(&r.prefix, &g.story, g.prompts.len());
        counts.push(
            g.prompts
                .iter()
                .filter(|p| **p == TemporalRelation::After)
                .count(),
            rel.iter()
                .filter(|p| **p == TemporalRelation::After)
                .count(),
        );
        all_prompts.extend_from_slice(&g.prompts);
        all_rel.extend(rel);
    }
    report.record("after_correlation", counts.correlation());
    report.record("marker_accuracy", prompt_accuracy(&all_prompts, &all_rel));
    if let Ok(dist) = RelationDistribution::of(&all_rel) {
        report.record("marker_before_share", Ok(dist.before));
        report.record("marker_diversity", Ok(temporal_diversity(&dist)));
    }

    match inputs.annotations {
        Some(ann) => add_human(&mut report, ann, inputs.generations)?,
        None => {
            for name in [
                "human_diversity",
                "human_accuracy",
                "human_coherence",
                "human_interest",
            ] {
                report
                    .absent
                    .insert(name.into(), "no annotation file".into());
            }
        }
    }
    Ok(report)
}

fn add_human(
    report: &mut MetricsReport,
    ann: &[AnnotationRecord],
    generations: &[GenerationRecord],
) -> Result<()> {
    report.record(
        "human_diversity",
        relation_distribution(ann).map(|d| temporal_diversity(&d)),
    );
    let prompts: HashMap<&str, &[TemporalRelation]> = generations
        .iter()
        .map(|g| (g.id.as_str(), g.prompts.as_slice()))
        .collect();
    let (mut p, mut a) = (Vec::new(), Vec::new());
    for rec in ann {
        if let Some(pr) = prompts.get(rec.story_id.as_str()) {
            if pr.len() == rec.pair_relations.len() {
                p.extend_from_slice(pr);
                a.extend_from_slice(&rec.pair_relations);
            }
        }
    }
    report.record("human_accuracy", prompt_accuracy(&p, &a));
    if ann.is_empty() {
        report.record("human_coherence", Err(Error::EmptyInput));
        report.record("human_interest", Err(Error::EmptyInput));
    } else {
        let n = ann.len() as f64;
        report.record(
            "human_coherence",
            Ok(100.0 * ann.iter().map(|r| r.coherence as f64).sum::<f64>() / n),
        );
        report.record(
            "human_interest",
            Ok(ann.iter().map(|r| r.interest_rank as f64).sum::<f64>() / n),
        );
    }
    report.human = summarize_by_model(ann)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use TemporalRelation::*;

    fn record(id: &str) -> StoryRecord {
        StoryRecord::new(
            id,
            "tom woke up .",
            vec![
                "tom woke up .".into(),
                "then tom ate eggs .".into(),
                "then tom ran home .".into(),
            ],
        )
    }

    #[test]
    fn gold_copy_scores_perfectly() {
        let conv = TokenConventions::default();
        let recs = vec![record("a"), record("b")];
        let gens = vec![
            GenerationRecord {
                id: "a".into(),
                prompts: vec![Before, Before],
                storyline_text:
                    "woke ; tom ; <before>ate ; tom ; eggs <before>ran ; tom ; home <eoe>".into(),
                story: recs[0].continuation_text(),
                parse_ok: true,
            },
            GenerationRecord {
                id: "b".into(),
                prompts: vec![After, Before],
                storyline_text: String::new(),
                story: "before that , tom had eaten eggs . then tom ran home .".into(),
                parse_ok: false,
            },
        ];
        let report = evaluate(&EvalInputs {
            records: &recs,
            generations: &gens,
            conv: &conv,
            scorer: None,
            reference_perplexity: Some(3.0),
            annotations: None,
        })
        .unwrap();
        assert_eq!(report.get("ref_ppl"), Some(3.0));
        assert!(report.absent.contains_key("gen_ppl"));
        assert!(report.absent.contains_key("human_interest"));
        assert_eq!(report.get("event_coverage"), Some(1.0));
        assert_eq!(report.get("marker_accuracy"), Some(100.0));
        assert_eq!(report.get("parse_rate"), Some(0.5));
        assert_eq!(report.get("marker_before_share"), Some(0.75));
        assert!(report.to_csv().starts_with("metric,value\n"));
        assert!(report.to_csv().contains("gen_ppl,\n"));
    }

    #[test]
    fn alignment_pads_and_truncates() {
        assert_eq!(
            aligned_marker_relations("a .", "then b .", 3),
            vec![Before, Before, Before]
        );
        assert_eq!(
            aligned_marker_relations("a .", "before that , b . c . then d .", 2),
            vec![After, Vague]
        );
    }
}

use serde::Serialize;

use super::extract::extract_event;
use crate::storyline::{Event, StructuredStoryline};

/// A span is noisy when more than this share of its characters is neither
/// alphanumeric nor whitespace.
pub const NOISE_THRESHOLD: f64 = 0.30;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PretrainingSet {
    pub storylines: Vec<StructuredStoryline>,
    pub noisy_spans: usize,
    /// Sentences left over after the last full window.
    pub dropped_sentences: usize,
    /// Sentences with no extractable verb (kept as placeholder events).
    pub placeholder_events: usize,
}

fn noise_ratio(span: &[String]) -> f64 {
    let (mut noisy, mut total) = (0usize, 0usize);
    for ch in span.iter().flat_map(|s| s.chars()) {
        total += 1;
        if !(ch.is_alphanumeric() || ch.is_whitespace()) {
            noisy += 1;
        }
    }
    if total == 0 {
        1.0
    } else {
        noisy as f64 / total as f64
    }
}

/// Cuts a sentence stream into non-overlapping `span_len` windows, drops
/// noisy windows and extracts one event per sentence. No prompts are
/// attached.
pub fn build_pretraining_storylines(sentences: &[String], span_len: usize) -> PretrainingSet {
    let mut out = PretrainingSet::default();
    if span_len == 0 {
        return out;
    }
    let chunks = sentences.chunks_exact(span_len);
    out.dropped_sentences = chunks.remainder().len();
    for span in chunks {
        if noise_ratio(span) > NOISE_THRESHOLD {
            out.noisy_spans += 1;
            continue;
        }
        let events: Vec<Event> = span
            .iter()
            .map(|s| {
                extract_event(s).unwrap_or_else(|_| {
                    out.placeholder_events += 1;
                    Event::placeholder()
                })
            })
            .collect();
        out.storylines
            .push(StructuredStoryline::new(events, None).expect("span_len >= 1 events"));
    }
    if out.noisy_spans > 0 {
        log::info!("filtered {} noisy pretraining spans", out.noisy_spans);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(n: usize) -> Vec<String> {
        (0..n)
            .map(|i| format!("tom visited the park number {i} ."))
            .collect()
    }

    #[test]
    fn window_counts() {
        let ten = build_pretraining_storylines(&doc(10), 5);
        assert_eq!(ten.storylines.len(), 2);
        assert_eq!(ten.dropped_sentences, 0);
        assert!(ten
            .storylines
            .iter()
            .all(|s| s.prompts().is_none() && s.len() == 5));
        assert_eq!(
            ten.storylines[0].events()[0],
            Event::new("visited", "tom", "the park number 0")
        );

        let four = build_pretraining_storylines(&doc(4), 5);
        assert!(four.storylines.is_empty());
        assert_eq!(four.dropped_sentences, 4);
    }

    #[test]
    fn noisy_span_filtered() {
        let mut d = doc(15);
        // 12 of 35 characters are symbols.
        for s in &mut d[5..10] {
            *s = "ab#$%^ cd&*() ef!@#% gh ij kl mn op".into();
        }
        assert!(noise_ratio(&d[5..10]) > NOISE_THRESHOLD);
        assert!(noise_ratio(&d[0..5]) < NOISE_THRESHOLD);
        let set = build_pretraining_storylines(&d, 5);
        assert_eq!(set.storylines.len(), 2);
        assert_eq!(set.noisy_spans, 1);
    }
}

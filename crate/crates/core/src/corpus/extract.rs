//! Rule-based event extraction used when no external SRL output is given.
//!
//! The trigger is the first verb-like token that is not an auxiliary. A
//! token is verb-like when it is a known irregular past form or a regular
//! `-ed` form. Arguments are the longest runs of content tokens before and
//! after the trigger; runs stop at punctuation, conjunctions, connectives,
//! auxiliaries, prepositions and other verbs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::storyline::Event;

const AUXILIARIES: &[&str] = &[
    "had", "has", "have", "having", "was", "were", "is", "are", "am", "be", "been", "being", "did",
    "do", "does", "will", "would", "could", "should", "can", "may", "might", "must", "shall",
];

const STOP_WORDS: &[&str] = &[
    "and",
    "but",
    "or",
    "so",
    "because",
    "then",
    "before",
    "after",
    "that",
    "meanwhile",
    "later",
    "when",
    "while",
    "until",
    "since",
    "to",
    "at",
    "in",
    "on",
    "with",
    "from",
    "into",
    "of",
    "for",
    "by",
    "about",
    "as",
    "if",
    "not",
    "never",
    "also",
    "just",
];

const IRREGULAR_PAST: &[&str] = &[
    "ate",
    "became",
    "began",
    "bought",
    "brought",
    "built",
    "came",
    "caught",
    "chose",
    "did",
    "drank",
    "drew",
    "drove",
    "fell",
    "felt",
    "fought",
    "found",
    "flew",
    "forgot",
    "gave",
    "got",
    "grew",
    "heard",
    "held",
    "hid",
    "hit",
    "hurt",
    "kept",
    "knew",
    "left",
    "lent",
    "let",
    "lost",
    "made",
    "meant",
    "met",
    "paid",
    "put",
    "ran",
    "rang",
    "read",
    "rode",
    "said",
    "sang",
    "sat",
    "saw",
    "sent",
    "set",
    "shook",
    "shot",
    "slept",
    "sold",
    "spent",
    "spoke",
    "stole",
    "stood",
    "swam",
    "taught",
    "thought",
    "threw",
    "told",
    "took",
    "understood",
    "went",
    "woke",
    "won",
    "wore",
    "wrote",
];

const NOT_VERBS_ED: &[&str] = &[
    "bed", "red", "shed", "sled", "need", "seed", "feed", "speed", "weed", "hundred", "breed",
    "sacred", "naked", "wicked", "ted", "fred", "ned", "ed",
];

/// Lowercased word tokens with punctuation split off.
pub fn tokenize_words(sentence: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in sentence.split_whitespace() {
        let mut word = String::new();
        for ch in raw.chars() {
            if ch.is_alphanumeric() || ch == '\'' || ch == '-' {
                word.push(ch.to_ascii_lowercase());
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Splits running text after `.`, `!` and `?` tokens.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for tok in text.split_whitespace() {
        current.push(tok);
        if tok.ends_with(['.', '!', '?']) {
            out.push(current.join(" "));
            current.clear();
        }
    }
    if !current.is_empty() {
        out.push(current.join(" "));
    }
    out
}

fn is_word(tok: &str) -> bool {
    tok.chars().next().is_some_and(char::is_alphanumeric)
}

fn is_verb(tok: &str) -> bool {
    IRREGULAR_PAST.contains(&tok)
        || (tok.len() >= 4
            && tok.ends_with("ed")
            && !NOT_VERBS_ED.contains(&tok)
            && tok.chars().all(char::is_alphabetic))
}

fn is_content(tok: &str) -> bool {
    is_word(tok) && !AUXILIARIES.contains(&tok) && !STOP_WORDS.contains(&tok) && !is_verb(tok)
}

/// Maximal runs of content tokens as `(start, end)` index pairs.
fn content_runs(tokens: &[String]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, t) in tokens.iter().enumerate() {
        match (is_content(t), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, tokens.len()));
    }
    runs
}

fn join(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Extracts one `(trigger, arg1, arg2)` event from a sentence.
pub fn extract_event(sentence: &str) -> Result<Event> {
    let tokens = tokenize_words(sentence);
    let trigger_at = tokens
        .iter()
        .position(|t| is_verb(t) && !AUXILIARIES.contains(&t.as_str()))
        .ok_or_else(|| Error::NoEventFound(sentence.to_string()))?;

    let before = content_runs(&tokens[..trigger_at]);
    // Longest run; ties go to the run nearest the trigger.
    let arg1 = before
        .iter()
        .rev()
        .max_by_key(|(s, e)| (e - s, *e))
        .map(|&(s, e)| join(&tokens[s..e]))
        .unwrap_or_default();

    let offset = trigger_at + 1;
    let after = content_runs(&tokens[offset..]);
    let arg2 = after
        .iter()
        .max_by_key(|(s, e)| (e - s, std::cmp::Reverse(*s)))
        .map(|&(s, e)| join(&tokens[offset + s..offset + e]))
        .unwrap_or_default();

    Ok(Event::new(tokens[trigger_at].clone(), arg1, arg2))
}

#[derive(Deserialize)]
struct EventsLine {
    id: String,
    events: Vec<Event>,
}

/// Loads `{"id", "events": [{"trigger", "arg1", "arg2"}]}` lines produced by
/// an external SRL system.
pub fn load_external_events(path: &Path) -> Result<BTreeMap<String, Vec<Event>>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: EventsLine = serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
        let events = rec
            .events
            .into_iter()
            .map(|e| Event::new(e.trigger, e.arg1, e.arg2))
            .collect();
        if map.insert(rec.id.clone(), events).is_some() {
            return Err(schema(format!("duplicate id {:?}", rec.id)));
        }
    }
    Ok(map)
}

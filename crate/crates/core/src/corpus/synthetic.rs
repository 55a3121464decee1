//! Template-generated five-sentence stories with known temporal prompts.
//!
//! Each story follows one protagonist through a themed script of actions.
//! Every action is replaced by a random action from the same theme with
//! probability `script_noise`, so later events are predictable from the
//! first one but not fully determined. A BEFORE transition is realized as
//! `then <name> <verb> <object> .` and an AFTER transition (a flashback) as
//! `before that , <name> had <verb> <object> .`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::StoryRecord;
use crate::storyline::{Event, TemporalRelation};

/// Verbs and objects of one script, listed in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Theme {
    pub verbs: Vec<String>,
    pub objects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticVocab {
    pub names: Vec<String>,
    pub themes: Vec<Theme>,
}

fn words(s: &str) -> Vec<String> {
    s.split(',').map(|w| w.trim().to_string()).collect()
}

impl Default for SyntheticVocab {
    fn default() -> Self {
        let theme = |verbs: &str, objects: &str| Theme {
            verbs: words(verbs),
            objects: words(objects),
        };
        SyntheticVocab {
            names: words("tom, anna, mike, lucy, sam, kate, john, emma"),
            themes: vec![
                theme(
                    "cooked, washed, cleaned, baked, chopped, heated",
                    "the pasta, the dishes, the oven, the bread, the onions, the soup",
                ),
                theme(
                    "planted, watered, trimmed, raked, picked, painted",
                    "the roses, the lawn, the hedge, the leaves, the apples, the fence",
                ),
                theme(
                    "studied, finished, printed, opened, reviewed, submitted",
                    "the essay, the notes, the exam, the book, the homework, the report",
                ),
                theme(
                    "visited, crossed, boarded, watched, followed, explored",
                    "the museum, the bridge, the train, the parade, the map, the market",
                ),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_stories: usize,
    pub n_events: usize,
    pub after_rate: f64,
    /// Probability that an action departs from the theme's script.
    pub script_noise: f64,
    pub vocab: SyntheticVocab,
    pub rng_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_stories: 1000,
            n_events: 5,
            after_rate: 0.2,
            script_noise: 0.3,
            vocab: SyntheticVocab::default(),
            rng_seed: 5,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::InvalidConfig(m.into()));
        if !(0.0..=1.0).contains(&self.after_rate) {
            return bad("after_rate must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.script_noise) {
            return bad("script_noise must lie in [0, 1]");
        }
        if self.n_events == 0 {
            return bad("n_events must be positive");
        }
        if self.vocab.names.is_empty() || self.vocab.themes.is_empty() {
            return bad("synthetic vocabulary is empty");
        }
        if self
            .vocab
            .themes
            .iter()
            .any(|t| t.verbs.is_empty() || t.objects.is_empty())
        {
            return bad("every theme needs verbs and objects");
        }
        Ok(())
    }
}

const FORWARD: &str = "then";
const FLASHBACK: &str = "before that ,";

/// Relation signalled by a sentence's opening connective; unmarked
/// sentences are VAGUE.
pub fn detect_marker(sentence: &str) -> TemporalRelation {
    let s = sentence.trim_start().to_ascii_lowercase();
    let mut words = s
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|w| !w.is_empty());
    match (words.next(), words.next()) {
        (Some("before"), Some("that")) => TemporalRelation::After,
        (Some("then"), _) => TemporalRelation::Before,
        _ => TemporalRelation::Vague,
    }
}

fn sentence(name: &str, verb: &str, object: &str, link: Option<TemporalRelation>) -> String {
    match link {
        None => format!("{name} {verb} {object} ."),
        Some(TemporalRelation::After) => format!("{FLASHBACK} {name} had {verb} {object} ."),
        Some(_) => format!("{FORWARD} {name} {verb} {object} ."),
    }
}

/// Deterministic in `rng_seed`. Records carry their events and gold prompts;
/// `prompts` stays empty until annotation.
pub fn generate_synthetic_corpus(cfg: &SyntheticConfig) -> Vec<StoryRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let vocab = &cfg.vocab;
    (0..cfg.n_stories)
        .map(|i| {
            let name = &vocab.names[rng.gen_range(0..vocab.names.len())];
            let theme = &vocab.themes[rng.gen_range(0..vocab.themes.len())];
            let mut sentences = Vec::with_capacity(cfg.n_events);
            let mut events = Vec::with_capacity(cfg.n_events);
            let mut gold = Vec::with_capacity(cfg.n_events.saturating_sub(1));
            for k in 0..cfg.n_events {
                let (verb, object) = if rng.gen_bool(cfg.script_noise) {
                    (
                        &theme.verbs[rng.gen_range(0..theme.verbs.len())],
                        &theme.objects[rng.gen_range(0..theme.objects.len())],
                    )
                } else {
                    (
                        &theme.verbs[k % theme.verbs.len()],
                        &theme.objects[k % theme.objects.len()],
                    )
                };
                let link = (k > 0).then(|| {
                    if rng.gen_bool(cfg.after_rate) {
                        TemporalRelation::After
                    } else {
                        TemporalRelation::Before
                    }
                });
                if let Some(rel) = link {
                    gold.push(rel);
                }
                sentences.push(sentence(name, verb, object, link));
                events.push(Event::new(verb.as_str(), name.as_str(), object.as_str()));
            }
            let mut rec = StoryRecord::new(format!("syn-{i:06}"), sentences[0].clone(), sentences);
            rec.events = events;
            rec.gold_prompts = Some(gold);
            rec
        })
        .collect()
}

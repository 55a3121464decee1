//! Events, temporal prompts and structured storylines.
//!
//! A storyline is an ordered list of `(trigger, arg1, arg2)` events. Adjacent
//! events may be linked by a [`TemporalRelation`] that tells the generator
//! whether the next event (in narrative order) starts before or after the
//! previous one. In text form each event is written as
//! `trigger ; arg1 ; arg2` and terminated either by a prompt token
//! (`<before>`, `<after>`, `<vague>`) or, for the last event and for
//! prompt-free storylines, by `<eoe>`:
//!
//! ```
//! use flashback::storyline::{Event, StructuredStoryline, TemporalRelation, TokenConventions};
//!
//! let conv = TokenConventions::default();
//! let s = StructuredStoryline::new(
//!     vec![
//!         Event::new("grabbed", "she", "the dog"),
//!         Event::new("blanketed", "white snow", "the ground"),
//!     ],
//!     Some(vec![TemporalRelation::After]),
//! )
//! .unwrap();
//! let text = s.serialize(true, &conv);
//! assert_eq!(text, "grabbed ; she ; the dog<after>blanketed ; white snow ; the ground<eoe>");
//! assert_eq!(StructuredStoryline::parse(&text, &conv).unwrap(), s);
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Temporal order of an event relative to the event that follows it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemporalRelation {
    Before,
    After,
    Vague,
}

impl TemporalRelation {
    pub const ALL: [TemporalRelation; 3] = [Self::Before, Self::After, Self::Vague];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Before => "before",
            Self::After => "after",
            Self::Vague => "vague",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Self::Before => 0,
            Self::After => 1,
            Self::Vague => 2,
        }
    }
}

impl fmt::Display for TemporalRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemporalRelation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "before" => Ok(Self::Before),
            "after" => Ok(Self::After),
            "vague" => Ok(Self::Vague),
            other => Err(Error::InvalidConfig(format!(
                "unknown temporal relation {other:?}"
            ))),
        }
    }
}

/// One trigger plus two positional arguments. Empty arguments are kept as
/// empty strings so the textual form always has three fields.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub trigger: String,
    #[serde(default)]
    pub arg1: String,
    #[serde(default)]
    pub arg2: String,
}

impl Event {
    pub fn new(
        trigger: impl Into<String>,
        arg1: impl Into<String>,
        arg2: impl Into<String>,
    ) -> Self {
        Event {
            trigger: trigger.into().trim().to_string(),
            arg1: arg1.into().trim().to_string(),
            arg2: arg2.into().trim().to_string(),
        }
    }

    /// All-empty event recorded when no trigger could be extracted.
    pub fn placeholder() -> Self {
        Event::new("", "", "")
    }

    pub fn masked(conv: &TokenConventions) -> Self {
        Event::new(&conv.mask_token, &conv.mask_token, &conv.mask_token)
    }

    pub fn is_placeholder(&self) -> bool {
        self.trigger.is_empty()
    }

    pub fn is_masked(&self, conv: &TokenConventions) -> bool {
        self.trigger == conv.mask_token
            && self.arg1 == conv.mask_token
            && self.arg2 == conv.mask_token
    }

    /// `trigger ; arg1 ; arg2`, without a terminator.
    pub fn serialize(&self, conv: &TokenConventions) -> String {
        let sep = &conv.field_separator;
        format!("{}{sep}{}{sep}{}", self.trigger, self.arg1, self.arg2)
    }
}

/// Special-token spellings for prompt tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTokens {
    pub before: String,
    pub after: String,
    pub vague: String,
}

impl Default for PromptTokens {
    fn default() -> Self {
        PromptTokens {
            before: "<before>".into(),
            after: "<after>".into(),
            vague: "<vague>".into(),
        }
    }
}

/// Separator and sentinel spellings shared by serialization, vocabulary
/// construction and decoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenConventions {
    pub field_separator: String,
    pub eoe_token: String,
    pub mask_token: String,
    pub prompt_tokens: PromptTokens,
}

impl Default for TokenConventions {
    fn default() -> Self {
        TokenConventions {
            field_separator: " ; ".into(),
            eoe_token: "<eoe>".into(),
            mask_token: "<mask>".into(),
            prompt_tokens: PromptTokens::default(),
        }
    }
}

impl TokenConventions {
    pub fn prompt_token(&self, rel: TemporalRelation) -> &str {
        match rel {
            TemporalRelation::Before => &self.prompt_tokens.before,
            TemporalRelation::After => &self.prompt_tokens.after,
            TemporalRelation::Vague => &self.prompt_tokens.vague,
        }
    }

    /// The separator with surrounding whitespace removed; fields are split on it.
    pub fn separator_core(&self) -> &str {
        self.field_separator.trim()
    }

    /// `<eoe>` followed by the three prompt tokens.
    pub fn terminators(&self) -> [&str; 4] {
        [
            &self.eoe_token,
            &self.prompt_tokens.before,
            &self.prompt_tokens.after,
            &self.prompt_tokens.vague,
        ]
    }

    /// Every sentinel that must survive tokenization as a single token.
    pub fn sentinels(&self) -> [&str; 5] {
        [
            &self.eoe_token,
            &self.mask_token,
            &self.prompt_tokens.before,
            &self.prompt_tokens.after,
            &self.prompt_tokens.vague,
        ]
    }

    fn terminator_relation(&self, token: &str) -> Option<Option<TemporalRelation>> {
        if token == self.eoe_token {
            Some(None)
        } else {
            TemporalRelation::ALL
                .into_iter()
                .find(|r| self.prompt_token(*r) == token)
                .map(Some)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let core = self.separator_core();
        if core.is_empty() {
            return Err(Error::InvalidConfig(
                "field separator must contain a non-space character".into(),
            ));
        }
        let sentinels = self.sentinels();
        for (i, a) in sentinels.iter().enumerate() {
            if a.is_empty() || a.chars().any(char::is_whitespace) {
                return Err(Error::InvalidConfig(format!(
                    "sentinel {a:?} must be a non-empty single token"
                )));
            }
            if a.contains(&self.field_separator) || a.contains(core) {
                return Err(Error::InvalidConfig(format!(
                    "sentinel {a:?} contains the field separator"
                )));
            }
            if sentinels[i + 1..].contains(a) {
                return Err(Error::InvalidConfig(format!(
                    "sentinel {a:?} is used twice"
                )));
            }
        }
        Ok(())
    }
}

/// Ordered events with the temporal prompts between neighbours.
///
/// `prompts` is `None` for prompt-free storylines (pretraining data, or the
/// output of a tokenizer that never saw prompts). When present it always has
/// exactly `events.len() - 1` entries. A single-event storyline has no
/// relations to carry and is normalized to `Some(vec![])`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StructuredStoryline {
    events: Vec<Event>,
    prompts: Option<Vec<TemporalRelation>>,
}

impl StructuredStoryline {
    pub fn new(events: Vec<Event>, prompts: Option<Vec<TemporalRelation>>) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::MalformedStoryline(
                "a storyline needs at least one event".into(),
            ));
        }
        if let Some(p) = &prompts {
            if p.len() + 1 != events.len() {
                return Err(Error::PromptCount {
                    expected: events.len() - 1,
                    got: p.len(),
                });
            }
        }
        let prompts = match prompts {
            None if events.len() == 1 => Some(Vec::new()),
            p => p,
        };
        Ok(StructuredStoryline { events, prompts })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn prompts(&self) -> Option<&[TemporalRelation]> {
        self.prompts.as_deref()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Replaces the prompts; the count must be `len() - 1`.
    pub fn with_prompts(mut self, prompts: Vec<TemporalRelation>) -> Result<Self> {
        if prompts.len() + 1 != self.events.len() {
            return Err(Error::PromptCount {
                expected: self.events.len() - 1,
                got: prompts.len(),
            });
        }
        self.prompts = Some(prompts);
        Ok(self)
    }

    pub fn without_prompts(mut self) -> Self {
        if self.events.len() > 1 {
            self.prompts = None;
        }
        self
    }

    fn terminator<'c>(&self, k: usize, with_prompts: bool, conv: &'c TokenConventions) -> &'c str {
        match &self.prompts {
            Some(p) if with_prompts && k < p.len() => conv.prompt_token(p[k]),
            _ => &conv.eoe_token,
        }
    }

    /// Textual form. With `with_prompts`, event `k` is closed by its prompt
    /// token and the last event by `<eoe>`; otherwise every event is closed
    /// by `<eoe>`. Prompt-free storylines serialize the same under both flags.
    pub fn serialize(&self, with_prompts: bool, conv: &TokenConventions) -> String {
        let mut out = String::new();
        for (k, e) in self.events.iter().enumerate() {
            out.push_str(&e.serialize(conv));
            out.push_str(self.terminator(k, with_prompts, conv));
        }
        out
    }

    /// Model input with the first `keep_first_k` events written out and the
    /// rest replaced by `<mask> ; <mask> ; <mask>`. Prompt tokens are never
    /// masked.
    pub fn mask_events(&self, keep_first_k: usize, conv: &TokenConventions) -> String {
        debug_assert!(keep_first_k <= self.events.len());
        let masked = Event::masked(conv);
        let mut out = String::new();
        for (k, e) in self.events.iter().enumerate() {
            let e = if k < keep_first_k { e } else { &masked };
            out.push_str(&e.serialize(conv));
            out.push_str(self.terminator(k, true, conv));
        }
        out
    }

    /// Inverse of [`serialize`](Self::serialize). Accepts both the prompted
    /// and the prompt-free form.
    pub fn parse(text: &str, conv: &TokenConventions) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::MalformedStoryline("empty input".into()));
        }
        let terminators = conv.terminators();
        let core = conv.separator_core();
        let mut events = Vec::new();
        let mut closers = Vec::new();
        let mut rest = text;
        loop {
            let next = terminators
                .iter()
                .filter_map(|t| rest.find(t).map(|i| (i, *t)))
                .min_by_key(|(i, t)| (*i, std::cmp::Reverse(t.len())));
            let Some((idx, term)) = next else {
                if !rest.trim().is_empty() {
                    return Err(Error::MalformedStoryline(format!(
                        "trailing text without a terminator: {:?}",
                        rest.trim()
                    )));
                }
                break;
            };
            let chunk = &rest[..idx];
            let fields: Vec<&str> = chunk.split(core).map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::MalformedStoryline(format!(
                    "event {} has {} fields: {:?}",
                    events.len() + 1,
                    fields.len(),
                    chunk.trim()
                )));
            }
            events.push(Event::new(fields[0], fields[1], fields[2]));
            closers.push(conv.terminator_relation(term).expect("terminator"));
            rest = &rest[idx + term.len()..];
        }
        if events.is_empty() {
            return Err(Error::MalformedStoryline("no terminated event".into()));
        }
        if closers.last().copied().flatten().is_some() {
            return Err(Error::MalformedStoryline(
                "the last event must end with the eoe token".into(),
            ));
        }
        let inner = &closers[..closers.len() - 1];
        let prompts = if inner.iter().all(Option::is_none) {
            None
        } else if inner.iter().all(Option::is_some) {
            Some(inner.iter().map(|r| r.expect("checked")).collect())
        } else {
            return Err(Error::MalformedStoryline(
                "mixes prompt tokens with eoe between events".into(),
            ));
        };
        StructuredStoryline::new(events, prompts)
    }
}

/// Story text split into sentences; the first `prefix_len` sentences are
/// model input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Story {
    pub sentences: Vec<String>,
    pub prefix_len: usize,
}

impl Story {
    pub fn new(sentences: Vec<String>, prefix_len: usize) -> Result<Self> {
        if prefix_len > sentences.len() {
            return Err(Error::InvalidConfig(format!(
                "prefix_len {prefix_len} exceeds {} sentences",
                sentences.len()
            )));
        }
        Ok(Story {
            sentences,
            prefix_len,
        })
    }

    pub fn prefix(&self) -> &[String] {
        &self.sentences[..self.prefix_len]
    }

    pub fn continuation(&self) -> &[String] {
        &self.sentences[self.prefix_len..]
    }

    pub fn continuation_text(&self) -> String {
        self.continuation().join(" ")
    }

    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }
}

/// Free-function form of [`Event::serialize`].
pub fn serialize_event(e: &Event, conv: &TokenConventions) -> String {
    e.serialize(conv)
}

/// Free-function form of [`StructuredStoryline::serialize`].
pub fn serialize_storyline(
    s: &StructuredStoryline,
    with_prompts: bool,
    conv: &TokenConventions,
) -> String {
    s.serialize(with_prompts, conv)
}

/// Free-function form of [`StructuredStoryline::parse`].
pub fn parse_storyline(text: &str, conv: &TokenConventions) -> Result<StructuredStoryline> {
    StructuredStoryline::parse(text, conv)
}

/// Free-function form of [`StructuredStoryline::mask_events`].
pub fn mask_events(
    s: &StructuredStoryline,
    keep_first_k: usize,
    conv: &TokenConventions,
) -> String {
    s.mask_events(keep_first_k, conv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use TemporalRelation::*;

    fn conv() -> TokenConventions {
        TokenConventions::default()
    }

    fn fig2() -> StructuredStoryline {
        StructuredStoryline::new(
            vec![
                Event::new("grabbed", "she", "the dog"),
                Event::new("blanketed", "white snow", "the ground"),
                Event::new("went", "she", "outside"),
                Event::new("played", "they", "the snow"),
                Event::new("came", "they", "home"),
            ],
            Some(vec![After, Before, Before, Before]),
        )
        .unwrap()
    }

    #[test]
    fn event_forms() {
        let c = conv();
        assert_eq!(
            Event::new("grabbed", "she", "the dog").serialize(&c),
            "grabbed ; she ; the dog"
        );
        assert_eq!(Event::masked(&c).serialize(&c), "<mask> ; <mask> ; <mask>");
        assert_eq!(Event::new("ran", "", "").serialize(&c), "ran ;  ; ");
    }

    #[test]
    fn two_event_prompted() {
        let c = conv();
        let s = StructuredStoryline::new(
            vec![
                Event::new("grabbed", "she", "the dog"),
                Event::new("blanketed", "white snow", "the ground"),
            ],
            Some(vec![After]),
        )
        .unwrap();
        assert_eq!(
            s.serialize(true, &c),
            "grabbed ; she ; the dog<after>blanketed ; white snow ; the ground<eoe>"
        );
        assert_eq!(
            s.serialize(false, &c),
            "grabbed ; she ; the dog<eoe>blanketed ; white snow ; the ground<eoe>"
        );
    }

    #[test]
    fn single_event() {
        let c = conv();
        let s = StructuredStoryline::new(vec![Event::new("ran", "tom", "")], None).unwrap();
        assert_eq!(s.prompts(), Some(&[][..]));
        assert_eq!(s.serialize(true, &c), "ran ; tom ; <eoe>");
        assert_eq!(
            StructuredStoryline::parse(&s.serialize(true, &c), &c).unwrap(),
            s
        );
    }

    #[test]
    fn all_before_counts() {
        let c = conv();
        let s = fig2().with_prompts(vec![Before; 4]).unwrap();
        let t = s.serialize(true, &c);
        assert_eq!(t.matches("<before>").count(), 4);
        assert_eq!(t.matches("<eoe>").count(), 1);
    }

    #[test]
    fn prompt_count_enforced() {
        let err = StructuredStoryline::new(
            vec![Event::new("a", "", ""), Event::new("b", "", "")],
            Some(vec![]),
        );
        assert!(matches!(
            err,
            Err(Error::PromptCount {
                expected: 1,
                got: 0
            })
        ));
    }

    #[test]
    fn parse_rejects_bad_input() {
        let c = conv();
        for bad in [
            "",
            "   ",
            "grabbed ; she<eoe>",
            "grabbed ; she ; the dog",
            "a ; b ; c<after>",
            "a ; b ; c<after>d ; e ; f<eoe>g ; h ; i<eoe>x ; y ; z<eoe>",
            "a ; b ; c<eoe>trailing",
            "a ; b ; c ; d<eoe>",
        ] {
            assert!(
                matches!(
                    StructuredStoryline::parse(bad, &c),
                    Err(Error::MalformedStoryline(_))
                ),
                "{bad:?} should be malformed"
            );
        }
    }

    #[test]
    fn parse_both_forms() {
        let c = conv();
        let s = fig2();
        assert_eq!(
            StructuredStoryline::parse(&s.serialize(true, &c), &c).unwrap(),
            s
        );
        let bare = StructuredStoryline::parse(&s.serialize(false, &c), &c).unwrap();
        assert_eq!(bare, s.clone().without_prompts());
        assert_eq!(bare.prompts(), None);
    }

    #[test]
    fn parse_tolerates_spaced_terminators() {
        let c = conv();
        let s =
            StructuredStoryline::parse("ran ; ; <after> sat ; tom ; the mat <eoe>", &c).unwrap();
        assert_eq!(s.events()[0], Event::new("ran", "", ""));
        assert_eq!(s.prompts(), Some(&[After][..]));
    }

    #[test]
    fn masking() {
        let c = conv();
        let s = fig2();
        assert_eq!(s.mask_events(5, &c), s.serialize(true, &c));
        let none = s.mask_events(0, &c);
        assert_eq!(none.matches("<mask>").count(), 15);
        assert_eq!(none.matches("<after>").count(), 1);
        assert_eq!(none.matches("<before>").count(), 3);
        let one = s.mask_events(1, &c);
        assert!(one.starts_with("grabbed ; she ; the dog<after>"));
        assert_eq!(one.matches("<mask>").count(), 3 * 4);
        assert_eq!(
            one.matches("<after>").count() + one.matches("<before>").count(),
            4
        );
    }

    #[test]
    fn masking_prompt_free_uses_eoe() {
        let c = conv();
        let s = fig2().without_prompts();
        assert_eq!(s.mask_events(1, &c).matches("<eoe>").count(), 5);
    }

    #[test]
    fn relation_from_str() {
        assert_eq!("AFTER".parse::<TemporalRelation>().unwrap(), After);
        assert_eq!(" vague ".parse::<TemporalRelation>().unwrap(), Vague);
        assert!("during".parse::<TemporalRelation>().is_err());
    }

    #[test]
    fn conventions_validation() {
        assert!(conv().validate().is_ok());
        let mut c = conv();
        c.mask_token = c.eoe_token.clone();
        assert!(c.validate().is_err());
        let mut c = conv();
        c.prompt_tokens.after = "<a;b>".into();
        assert!(c.validate().is_err());
        let mut c = conv();
        c.field_separator = "  ".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn story_prefix() {
        let s = Story::new(vec!["a .".into(), "b .".into()], 1).unwrap();
        assert_eq!(s.continuation_text(), "b .");
        assert!(Story::new(vec![], 1).is_err());
    }
}

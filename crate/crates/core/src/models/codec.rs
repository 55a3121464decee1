//! Turning records into token-level sources, targets and decode plans.

use serde::{Deserialize, Serialize};

use super::seq2seq::{DecodePlan, Target, TargetToken};
use super::vocab::{TokenId, Vocabulary, EOS, SEP};
use crate::corpus::StoryRecord;
use crate::error::{Error, Result};
use crate::storyline::{Event, StructuredStoryline, TemporalRelation, TokenConventions};

/// A (source, target) pair ready for scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub source: Vec<TokenId>,
    pub target: Target,
}

/// Shared vocabulary, token conventions and masking depth.
#[derive(Debug, Clone, PartialEq)]
pub struct Codec {
    pub vocab: Vocabulary,
    pub conv: TokenConventions,
    /// Leading storyline events copied into the storyline model's input.
    pub keep_first_k: usize,
    /// When false, storylines are written with `<eoe>` after every event
    /// and prompts are ignored (the vanilla plan-and-write baseline).
    pub use_prompts: bool,
}

impl Codec {
    pub fn new(vocab: Vocabulary, conv: TokenConventions, keep_first_k: usize) -> Self {
        Codec {
            vocab,
            conv,
            keep_first_k,
            use_prompts: true,
        }
    }

    pub fn without_prompts(mut self) -> Self {
        self.use_prompts = false;
        self
    }

    /// The storyline as this codec writes it.
    fn view(&self, storyline: &StructuredStoryline) -> StructuredStoryline {
        if self.use_prompts {
            storyline.clone()
        } else {
            storyline.clone().without_prompts()
        }
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        self.vocab.encode(text, &self.conv)
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        self.vocab.decode(ids, &self.conv)
    }

    pub fn terminal_set(&self) -> Vec<TokenId> {
        self.vocab.terminal_ids(&self.conv)
    }

    fn keep(&self, n: usize) -> usize {
        self.keep_first_k.min(n)
    }

    /// `prefix <sep> masked-storyline`.
    pub fn storyline_source(&self, prefix: &str, storyline: &StructuredStoryline) -> Vec<TokenId> {
        let mut src = self.encode(prefix);
        src.push(SEP);
        let view = self.view(storyline);
        src.extend(self.encode(&view.mask_events(self.keep(view.len()), &self.conv)));
        src
    }

    /// The serialized storyline; leading kept events are given, terminators
    /// are scored as "end of event".
    pub fn storyline_target(&self, storyline: &StructuredStoryline) -> Target {
        let terminal_set = self.terminal_set();
        let keep = self.keep(storyline.len());
        let mut event = 0;
        let tokens = self
            .encode(&self.storyline_text(storyline))
            .into_iter()
            .map(|t| {
                let is_term = terminal_set.contains(&t);
                let tagged = if event < keep {
                    TargetToken::Given(t)
                } else if is_term {
                    TargetToken::Terminal(t)
                } else {
                    TargetToken::Token(t)
                };
                if is_term {
                    event += 1;
                }
                tagged
            })
            .collect();
        Target {
            tokens,
            terminal_set,
        }
    }

    pub fn storyline_text(&self, storyline: &StructuredStoryline) -> String {
        self.view(storyline).serialize(true, &self.conv)
    }

    pub fn storyline_example(&self, prefix: &str, storyline: &StructuredStoryline) -> Example {
        Example {
            source: self.storyline_source(prefix, storyline),
            target: self.storyline_target(storyline),
        }
    }

    /// Storyline with the given leading events, placeholders elsewhere, and
    /// the requested prompts; the input for generation.
    pub fn plan_skeleton(
        &self,
        first_events: &[Event],
        prompts: &[TemporalRelation],
    ) -> Result<StructuredStoryline> {
        let n = prompts.len() + 1;
        let keep = self.keep(n);
        if first_events.len() < keep {
            return Err(Error::InvalidConfig(format!(
                "generation needs {keep} leading events, got {}",
                first_events.len()
            )));
        }
        let events = (0..n)
            .map(|k| {
                if k < keep {
                    first_events[k].clone()
                } else {
                    Event::placeholder()
                }
            })
            .collect();
        StructuredStoryline::new(events, Some(prompts.to_vec()))
    }

    /// Forces the kept events and schedules the remaining terminators.
    pub fn storyline_plan(&self, skeleton: &StructuredStoryline, max_len: usize) -> DecodePlan {
        let target = self.storyline_target(skeleton);
        let keep = self.keep(skeleton.len());
        let forced = target
            .tokens
            .iter()
            .take_while(|t| matches!(t, TargetToken::Given(_)))
            .map(|t| t.id())
            .collect();
        let prompts = self
            .view(skeleton)
            .prompts()
            .map(<[_]>::to_vec)
            .unwrap_or_default();
        let schedule = (keep..skeleton.len())
            .map(|k| match prompts.get(k) {
                Some(r) => self.vocab.id(self.conv.prompt_token(*r)),
                None => self.vocab.id(&self.conv.eoe_token),
            })
            .collect();
        DecodePlan {
            forced,
            terminal_set: target.terminal_set,
            schedule,
            max_len,
        }
    }

    /// `prefix <sep> storyline`, or the prefix alone when no storyline is
    /// used.
    pub fn story_source(&self, prefix: &str, storyline_text: Option<&str>) -> Vec<TokenId> {
        let mut src = self.encode(prefix);
        if let Some(text) = storyline_text {
            src.push(SEP);
            src.extend(self.encode(text));
        }
        src
    }

    /// Continuation tokens followed by `<eos>`.
    pub fn story_target(&self, continuation: &str) -> Target {
        let mut ids = self.encode(continuation);
        ids.push(EOS);
        Target::plain(&ids)
    }

    pub fn story_example(&self, record: &StoryRecord, storyline_text: Option<&str>) -> Example {
        Example {
            source: self.story_source(&record.prefix, storyline_text),
            target: self.story_target(&record.continuation_text()),
        }
    }

    /// Gold storyline text as fed to the story model.
    pub fn gold_storyline_text(&self, record: &StoryRecord) -> Result<String> {
        Ok(self.storyline_text(&record.storyline()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SyntheticConfig};

    fn codec() -> (Codec, Vec<StoryRecord>) {
        let mut recs = generate_synthetic_corpus(&SyntheticConfig {
            n_stories: 20,
            ..Default::default()
        });
        for r in &mut recs {
            r.prompts = r.gold_prompts.clone();
        }
        let conv = TokenConventions::default();
        let vocab = Vocabulary::build(&recs, &conv).unwrap();
        (Codec::new(vocab, conv, 1), recs)
    }

    #[test]
    fn storyline_target_tags() {
        let (c, recs) = codec();
        let s = recs[0].storyline().unwrap();
        let t = c.storyline_target(&s);
        // First event "verb ; name ; the obj <term>" is given: 7 tokens.
        assert!(t.tokens[..7]
            .iter()
            .all(|x| matches!(x, TargetToken::Given(_))));
        assert!(!matches!(t.tokens[7], TargetToken::Given(_)));
        let terminals = t
            .tokens
            .iter()
            .filter(|x| matches!(x, TargetToken::Terminal(_)))
            .count();
        assert_eq!(terminals, 4);
        assert_eq!(c.decode(&t.ids()), s.serialize(true, &c.conv));
    }

    #[test]
    fn source_keeps_prompts_and_masks_events() {
        let (c, recs) = codec();
        let s = recs[0].storyline().unwrap();
        let text = c.decode(&c.storyline_source(&recs[0].prefix, &s));
        assert_eq!(text.matches("<mask>").count(), 12);
        for p in s.prompts().unwrap() {
            assert!(text.contains(c.conv.prompt_token(*p)));
        }
    }

    #[test]
    fn plan_matches_target() {
        let (c, recs) = codec();
        let s = recs[3].storyline().unwrap();
        let skel = c
            .plan_skeleton(&s.events()[..1], s.prompts().unwrap())
            .unwrap();
        let plan = c.storyline_plan(&skel, 100);
        let t = c.storyline_target(&s);
        let given: Vec<_> = t
            .tokens
            .iter()
            .filter(|x| matches!(x, TargetToken::Given(_)))
            .map(|x| x.id())
            .collect();
        assert_eq!(plan.forced, given);
        let terms: Vec<_> = t
            .tokens
            .iter()
            .filter(|x| matches!(x, TargetToken::Terminal(_)))
            .map(|x| x.id())
            .collect();
        assert_eq!(plan.schedule, terms);
        assert!(matches!(
            c.plan_skeleton(&[], &[TemporalRelation::After]),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn prompt_free_codec_ignores_prompts() {
        let (c, recs) = codec();
        let c = c.without_prompts();
        let s = recs[3].storyline().unwrap();
        let text = c.decode(&c.storyline_source(&recs[3].prefix, &s));
        assert_eq!(text.matches("<eoe>").count(), 5);
        assert_eq!(c.storyline_text(&s).matches("<eoe>").count(), 5);
        let skel = c
            .plan_skeleton(&s.events()[..1], s.prompts().unwrap())
            .unwrap();
        let eoe = c.vocab.id("<eoe>");
        assert_eq!(c.storyline_plan(&skel, 100).schedule, vec![eoe; 4]);
    }
}

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::StoryRecord;
use crate::error::{Error, Result};
use crate::storyline::TokenConventions;

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const SEP: TokenId = 4;

const SPECIALS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<sep>"];

/// Splits text on whitespace, additionally cutting out sentinel tokens that
/// are glued to neighbouring words (`the dog<after>blanketed`).
pub fn tokenize(text: &str, conv: &TokenConventions) -> Vec<String> {
    let sentinels = conv.sentinels();
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut rest = chunk;
        while !rest.is_empty() {
            let hit = sentinels
                .iter()
                .filter_map(|s| rest.find(s).map(|i| (i, *s)))
                .min_by_key(|(i, s)| (*i, std::cmp::Reverse(s.len())));
            match hit {
                Some((i, s)) => {
                    if i > 0 {
                        out.push(rest[..i].to_string());
                    }
                    out.push(s.to_string());
                    rest = &rest[i + s.len()..];
                }
                None => {
                    out.push(rest.to_string());
                    rest = "";
                }
            }
        }
    }
    out
}

/// Bijective token/id map. Ids `0..5` are `<pad> <bos> <eos> <unk> <sep>`,
/// followed by the storyline sentinels, followed by corpus words ordered by
/// descending frequency and then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "duplicate vocabulary token {t:?}"
                )));
            }
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::InvalidConfig(format!(
                    "vocabulary must start with {SPECIALS:?}"
                )));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Counts words over story text and serialized storylines (with and
    /// without prompts).
    pub fn build(records: &[StoryRecord], conv: &TokenConventions) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut count = |text: &str| {
            for t in tokenize(text, conv) {
                *counts.entry(t).or_default() += 1;
            }
        };
        for r in records {
            count(&r.prefix);
            for s in &r.sentences {
                count(s);
            }
            if let Ok(s) = r.storyline() {
                count(&s.serialize(true, conv));
            }
        }
        Self::from_counts(counts, conv)
    }

    /// Builds from raw texts; used for language-model scorers.
    pub fn build_from_texts<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        conv: &TokenConventions,
    ) -> Result<Self> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            for t in tokenize(text, conv) {
                *counts.entry(t).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Self::from_counts(counts, conv)
    }

    fn from_counts(mut counts: BTreeMap<String, usize>, conv: &TokenConventions) -> Result<Self> {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for s in conv.sentinels() {
            counts.remove(s);
            tokens.push(s.to_string());
        }
        for s in SPECIALS {
            counts.remove(s);
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        tokens.extend(words.into_iter().map(|(w, _)| w));
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens.get(id as usize).map_or("<unk>", String::as_str)
    }

    pub fn encode(&self, text: &str, conv: &TokenConventions) -> Vec<TokenId> {
        tokenize(text, conv).iter().map(|t| self.id(t)).collect()
    }

    /// Ids of `<eoe>` and the three prompt tokens.
    pub fn terminal_ids(&self, conv: &TokenConventions) -> Vec<TokenId> {
        conv.terminators().iter().map(|t| self.id(t)).collect()
    }

    /// Joins tokens with spaces, gluing event terminators to their
    /// neighbours as the storyline format does. `<bos>`, `<eos>` and
    /// `<pad>` are dropped.
    pub fn decode(&self, ids: &[TokenId], conv: &TokenConventions) -> String {
        let terminators = conv.terminators();
        let mut out = String::new();
        let mut glue = true;
        for &id in ids {
            if matches!(id, PAD | BOS | EOS) {
                continue;
            }
            let tok = self.token(id);
            let is_term = terminators.contains(&tok);
            if !glue && !is_term {
                out.push(' ');
            }
            out.push_str(tok);
            glue = is_term;
        }
        out
    }

    /// Short content hash used to detect mismatched checkpoints.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(&h.finalize()[..8])
    }
}

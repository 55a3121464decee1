//! Per-sample losses, sequence scores and corpus perplexity.

use super::codec::{Codec, Example};
use super::seq2seq::{SeqModel, Target};
use super::vocab::TokenId;
use crate::corpus::StoryRecord;
use crate::error::{Error, Result};
use crate::storyline::StructuredStoryline;

/// Sum of log-probabilities over the scored target positions.
pub fn sequence_log_prob(model: &SeqModel, source: &[TokenId], target: &Target) -> Result<f64> {
    model.log_prob(source, target)
}

/// Mean negative log-likelihood per scored position; 0 for an empty target.
pub fn mean_nll(model: &SeqModel, source: &[TokenId], target: &Target) -> Result<f64> {
    let n = target.scored_len();
    if n == 0 {
        return Ok(0.0);
    }
    Ok(-model.log_prob(source, target)? / n as f64)
}

/// Storyline reconstruction loss with the prompts supplied in the source.
pub fn storyline_loss(
    model: &SeqModel,
    codec: &Codec,
    prefix: &str,
    gold: &StructuredStoryline,
) -> Result<f64> {
    let ex = codec.storyline_example(prefix, gold);
    mean_nll(model, &ex.source, &ex.target)
}

/// Story loss given a storyline text (gold or predicted), or the prefix
/// alone when `storyline_text` is `None`.
pub fn story_loss(
    model: &SeqModel,
    codec: &Codec,
    record: &StoryRecord,
    storyline_text: Option<&str>,
) -> Result<f64> {
    let ex = codec.story_example(record, storyline_text);
    mean_nll(model, &ex.source, &ex.target)
}

/// `exp(total NLL / total scored positions)`.
pub fn perplexity(model: &SeqModel, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (mut nll, mut count) = (0.0, 0usize);
    for ex in examples {
        nll -= model.log_prob(&ex.source, &ex.target)?;
        count += ex.target.scored_len();
    }
    if count == 0 {
        return Err(Error::EmptyInput);
    }
    Ok((nll / count as f64).exp())
}

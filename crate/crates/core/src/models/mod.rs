//! Sequence models: vocabulary, the encoder-decoder, losses, decoding and
//! the two-step generation pipeline.

pub mod checkpoint;
pub mod codec;
pub mod losses;
pub mod pipeline;
pub mod seq2seq;
mod tape;
pub mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelRole};
pub use codec::{Codec, Example};
pub use losses::{mean_nll, perplexity, sequence_log_prob, story_loss, storyline_loss};
pub use pipeline::{Generation, GenerationRecord, Pipeline};
pub use seq2seq::{
    DecodePlan, DecodeStrategy, Decoded, SeqModel, SeqModelConfig, Target, TargetToken,
};
pub use vocab::{tokenize, TokenId, Vocabulary};

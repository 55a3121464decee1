pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod models;
pub mod storyline;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/storylines.md")]
    struct Storylines;
    #[doc = include_str!("../../../book/src/corpus.md")]
    struct Corpus;
    #[doc = include_str!("../../../book/src/generation.md")]
    struct Generation;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    struct Evaluation;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}

//! Automatic metrics, prompt-effectiveness measures and the statistics
//! used to analyze human annotations.

mod annotations;
mod report;
mod stats;
mod temporal;
mod text;

pub use annotations::{
    load_annotations, regression_rows, summarize_by_model, AnnotationRecord, HumanSummary,
    PREDICTORS,
};
pub use report::{aligned_marker_relations, evaluate, EvalInputs, MetricsReport};
pub use stats::{ols_regress, OlsCoefficient, OlsFit, SIGNIFICANCE};
pub use temporal::{
    after_count_correlation, diversity_of, event_coverage, marker_relations, pearson,
    prompt_accuracy, relation_distribution, spearman, temporal_diversity, AfterCounts,
    DiversityAggregation, RelationDistribution,
};
pub use text::{
    bleu3, distinct_ratio, gen_perplexity, rouge_l, LanguageScorer, ModelScorer, BLEU_EPSILON,
};

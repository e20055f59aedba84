//! Predictive-power analysis of reading times: data ingestion, subword score
//! pooling, a bigram language model, random-intercept mixed models and
//! cross-validated model comparison.

pub mod analysis;
pub mod error;
pub mod ingest;
pub mod lmm;
pub mod ngram;
pub mod pooling;
pub mod simulate;
pub mod stats;
mod tsv;

pub use error::{Error, Result};
pub use ingest::{
    build_analysis_table, AnalysisTable, ItemKey, Lexicon, MissingLexiconPolicy, ReadingEvent, SubjectProfile,
    TableConfig, Texts,
};
pub use lmm::{
    fit_random_intercept_lmm, fixed_effect_summary, marginal_loglik_dense_oracle, predict_heldout_logdensity,
    LmmFit, ModelSpec,
};
pub use ngram::{train_bigram, BigramLm};
pub use pooling::{pool_table, pool_word_scores, TokenScore, TokenScoreTable, WordScore, WordScores};
pub use stats::{
    bootstrap_subject_ci, cross_validated_delta_ll, group_label_permutation_test, make_item_folds,
    paired_sign_flip_test, DeltaLLResult, FoldAssignment, TestConfig,
};
pub use analysis::{
    run_baseline_pp, run_correlations, run_effect_size_table, run_group_split_pp, run_interaction_pp,
    score_correlation_matrix, AnalysisConfig, Hypothesis, HypothesisReport, Measure, Payload, RunReport,
};
pub use simulate::{simulate_corpus, simulate_table, Coefficients, CorpusConfig, CorpusTruth, InteractionMeasure, SimulationConfig};

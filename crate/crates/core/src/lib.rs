//! Tooling for listening-test MOS data: corpus loading and normalization,
//! distribution-balanced train/dev/test split search with unseen-entity
//! constraints, utterance- and system-level prediction metrics, seen/unseen
//! error analysis, audio augmentation and simple reference predictors.

pub mod analysis;
pub mod audio;
pub mod baseline;
pub mod corpus;
pub mod metrics;
pub mod special;
pub mod splitter;
pub mod stats;

pub use analysis::{
    squared_errors_by_category, unseen_report, welch_t_test, AnalysisError, CategoryAnalysis,
    ErrorSummary, TTestResult, UnseenAnalysis,
};
pub use audio::{
    adjust_silence, augment_corpus, read_wav, resample, speed_perturb, write_wav, AudioClip,
    AudioError, AugmentKind, AugmentationSpec, Edge, SilenceMode,
};
pub use baseline::{BaselineError, BaselineKind, BaselineModel};
pub use corpus::{
    export_corpus, generate_synthetic, load_manifest, normalize_scale, validate_corpus, Corpus,
    CorpusError, Manifest, Rating, ScaleSpec, SyntheticSpec, Utterance, ValidationReport,
    Violation,
};
pub use metrics::{
    evaluate, kendall_tau, mse, pearson, spearman, system_aggregate, Correlation, EvaluationReport,
    Level, MetricError, PredictionSet,
};
pub use splitter::{
    check_constraints, propose_candidate, read_split, search_best_split, write_split, Category,
    ConstraintReport, SearchLog, SearchOutcome, SplitAssignment, SplitConfig, SplitError,
    SplitMeta, Subset, UnseenCounts,
};
pub use stats::{
    emd, score_histogram, split_objective, utterance_stats, Histogram, SplitObjectiveConfig,
    StatsError, UtteranceStats,
};

//! Confusion-set evaluation: character similarity, similarity-binned
//! confusion sets, the context-only filter set, binned substitution with a
//! weighted score, a linear probe, and sentence-level metrics.

mod confusion;
mod filter;
mod metrics;
mod model;
mod probe;
mod protocol;
mod score;
mod similarity;

pub use confusion::{
    bin_lower_bounds, bin_of, build_confusion_sets, in_bin, top_pairs, ConfusionKind, ConfusionPair, ConfusionSet,
    Thresholds, BIN_COUNT, BIN_WIDTH,
};
pub use filter::{build_filter_set, FilterSet, MaskedPredictor};
pub use metrics::{sentence_metrics, CscMetrics, SentenceOutcome};
pub use probe::{kmeans, pinyin_initial_class, probe, ProbeConfig};
pub use protocol::{run_macu, BinReport, Corrector, MacuReport, Substitution};
pub use score::{bin_weights, macu_score};
pub use similarity::{char_similarity, graphemic_features, phonetic_features, PHONETIC_FEATURE_DIM};

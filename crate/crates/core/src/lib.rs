//! Similarity-score attacks that infer soft-biometric attributes from
//! (privacy-enhanced) biometric templates, with the verification metrics,
//! dataset preparation and synthetic testbed needed to evaluate them.

pub mod attack;
pub mod cli;
pub mod dataprep;
pub mod error;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod template;

pub use attack::{
    batch_attack, knn_baseline, run_attack, AttackConfig, AttackOutcome, AttackReport, Evidence, Prediction,
    RankedList, Strategy, WeightKind,
};
pub use error::{Error, Result};
pub use template::{
    compare_all, cosine_similarity, normalize_score, similarity, AttributeSet, Gallery, LabeledTemplate,
    ScoredCandidate, SimilarityScore,
};

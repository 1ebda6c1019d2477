//! Content-based image retrieval over deep-feature embeddings.
//!
//! The crate stores per-image feature vectors (and optionally the
//! classifier's softmax outputs), answers top-k similarity queries by exact
//! linear scan or through a class-routed inverted index, reduces
//! dimensionality with PCA, and measures precision@scope and per-query
//! latency over a whole database.
//!
//! ```
//! use cbir_core::{evaluate, synth, EvalConfig};
//!
//! let spec = synth::SynthSpec { dim: 32, items_per_category: 25, ..Default::default() };
//! let spec = synth::SynthSpec { inter_separation: synth::separated_distance(1.0, 32), ..spec };
//! let store = synth::generate(&spec).unwrap();
//! let report = evaluate(&store, &EvalConfig::default(), None).unwrap();
//! assert_eq!(report.overall, 1.0);
//! ```

mod binfmt;
pub mod error;
pub mod evaluation;
pub mod metric;
pub mod pca;
pub mod retrieval;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
pub use evaluation::{
    benchmark_latency, benchmark_throughput, compare_reports, evaluate, precision_at_scope,
    Comparison, EvalConfig, EvalReport, LatencyStats, Mode, Pipeline, Throughput,
};
pub use metric::{l1_distance, l2sq_distance, Metric};
pub use pca::{fit as fit_pca, select_components, ComponentSelection, PcaModel};
pub use retrieval::{
    sample_ids, top_k_classes, ClassRoutedIndex, ExactIndex, Fallback, FeatureSpace, RankedResult,
};
pub use store::{
    read_store, validate_store, write_store, EmbeddingMatrix, EmbeddingStore, ItemId, ItemMeta,
    Matrix, ProbabilityMatrix, Violation,
};

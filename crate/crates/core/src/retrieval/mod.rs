//! Linear-scan and class-routed top-k retrieval.
//!
//! Every ranking orders by `(distance, item id)` ascending, so results are
//! fully determined by the inputs.

mod routed;
mod topk;

pub use routed::{merge_union, top_k_classes, ClassRoutedIndex, DEFAULT_TOP_CLASSES};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::Metric;
use crate::store::{EmbeddingMatrix, EmbeddingStore, ItemId};

use topk::TopK;

/// Which feature space an index scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSpace {
    Raw,
    Pca,
}

/// How a routed query obtained its candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fallback {
    #[default]
    None,
    /// The candidate union was widened to the query's `classes` most probable classes.
    Widened { classes: usize },
    /// Routing could not supply enough candidates; every item was scanned.
    FullScan,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedResult {
    /// `(item, distance)`, ascending by distance then id.
    pub entries: Vec<(ItemId, f64)>,
    /// Number of items the query considered.
    pub candidate_count: usize,
    pub fallback: Fallback,
}

impl RankedResult {
    pub fn ids(&self) -> Vec<ItemId> {
        self.entries.iter().map(|&(id, _)| id).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Brute-force index over a feature bank.
#[derive(Debug, Clone)]
pub struct ExactIndex {
    features: EmbeddingMatrix,
    metric: Metric,
    space: FeatureSpace,
}

impl ExactIndex {
    /// `features` row `i` is the representation of store item `i`; it may be
    /// the raw embeddings or a PCA projection of them.
    pub fn build(
        store: &EmbeddingStore,
        metric: Metric,
        features: EmbeddingMatrix,
        space: FeatureSpace,
    ) -> Result<Self> {
        if features.count() != store.len() {
            return Err(Error::CountMismatch {
                expected: store.len(),
                actual: features.count(),
            });
        }
        Ok(ExactIndex {
            features,
            metric,
            space,
        })
    }

    pub fn len(&self) -> usize {
        self.features.count()
    }

    pub fn is_empty(&self) -> bool {
        self.features.count() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn space(&self) -> FeatureSpace {
        self.space
    }

    pub fn features(&self) -> &EmbeddingMatrix {
        &self.features
    }

    fn check_query(&self, query: &[f32], scope: usize) -> Result<()> {
        if scope == 0 {
            return Err(Error::arg("scope must be at least 1"));
        }
        if query.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: query.len(),
            });
        }
        Ok(())
    }

    /// Scans `ids` and keeps the `scope` nearest, skipping `exclude`.
    pub(crate) fn scan<I>(&self, query: &[f32], scope: usize, ids: I, exclude: Option<ItemId>) -> Vec<(ItemId, f64)>
    where
        I: IntoIterator<Item = ItemId>,
    {
        let mut top = TopK::new(scope);
        for id in ids {
            if Some(id) == exclude {
                continue;
            }
            let d = self.metric.distance_unchecked(query, self.features.row(id));
            top.push(id, d);
        }
        top.into_sorted()
    }

    /// The `scope` nearest items over the whole bank. With `exclude` set, that
    /// item is never returned.
    pub fn query_exact(&self, query: &[f32], scope: usize, exclude: Option<ItemId>) -> Result<RankedResult> {
        self.check_query(query, scope)?;
        Ok(RankedResult {
            entries: self.scan(query, scope, 0..self.len(), exclude),
            candidate_count: self.len(),
            fallback: Fallback::None,
        })
    }

    /// Nearest items within a seeded uniform sample of `sample_size` items.
    pub fn query_sampled(
        &self,
        query: &[f32],
        scope: usize,
        sample_size: usize,
        seed: u64,
        exclude: Option<ItemId>,
    ) -> Result<RankedResult> {
        self.check_query(query, scope)?;
        if sample_size < scope {
            return Err(Error::arg(format!(
                "sample size {sample_size} is smaller than scope {scope}"
            )));
        }
        if sample_size >= self.len() {
            return self.query_exact(query, scope, exclude);
        }
        let ids = sample_ids(self.len(), sample_size, seed);
        Ok(RankedResult {
            entries: self.scan(query, scope, ids.iter().copied(), exclude),
            candidate_count: ids.len(),
            fallback: Fallback::None,
        })
    }
}

/// Seeded uniform sample of `min(size, n)` distinct ids from `0..n`, sorted.
pub fn sample_ids(n: usize, size: usize, seed: u64) -> Vec<ItemId> {
    if size >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = rand::seq::index::sample(&mut rng, n, size).into_vec();
    ids.sort_unstable();
    ids
}

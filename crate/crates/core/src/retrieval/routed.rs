use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::metric::Metric;
use crate::store::{EmbeddingMatrix, EmbeddingStore, ItemId, ProbabilityMatrix};

use super::{ExactIndex, Fallback, FeatureSpace, RankedResult};

pub const DEFAULT_TOP_CLASSES: usize = 5;

/// The `k` most probable class ids, by descending probability then ascending id.
pub fn top_k_classes(probs: &[f32], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > probs.len() {
        return Err(Error::arg(format!(
            "k must be in 1..={}, got {k}",
            probs.len()
        )));
    }
    let by_prob = |a: &usize, b: &usize| probs[*b].total_cmp(&probs[*a]).then(a.cmp(b));
    let mut ids: Vec<usize> = (0..probs.len()).collect();
    if k < ids.len() {
        ids.select_nth_unstable_by(k - 1, by_prob);
        ids.truncate(k);
    }
    ids.sort_unstable_by(by_prob);
    Ok(ids)
}

/// Sorted, deduplicated union of sorted id lists.
pub fn merge_union(lists: &[&[ItemId]]) -> Vec<ItemId> {
    match lists {
        [] => Vec::new(),
        [only] => only.to_vec(),
        _ => {
            let mut heap: BinaryHeap<Reverse<(ItemId, usize, usize)>> = lists
                .iter()
                .enumerate()
                .filter_map(|(l, list)| list.first().map(|&id| Reverse((id, l, 0))))
                .collect();
            let mut out = Vec::with_capacity(lists.iter().map(|l| l.len()).max().unwrap_or(0));
            while let Some(Reverse((id, l, pos))) = heap.pop() {
                if out.last() != Some(&id) {
                    out.push(id);
                }
                if let Some(&next) = lists[l].get(pos + 1) {
                    heap.push(Reverse((next, l, pos + 1)));
                }
            }
            out
        }
    }
}

/// Exact index plus an inverted file from class id to the items whose top-k
/// predicted classes contain it. Queries scan only the union of the lists
/// for the query's own top-k classes.
#[derive(Debug, Clone)]
pub struct ClassRoutedIndex {
    base: ExactIndex,
    k: usize,
    num_classes: usize,
    /// `N × k`, row `i` = top classes of item `i`.
    top_classes: Vec<usize>,
    inverted: Vec<Vec<ItemId>>,
}

impl ClassRoutedIndex {
    pub fn build(
        store: &EmbeddingStore,
        metric: Metric,
        features: EmbeddingMatrix,
        space: FeatureSpace,
        k: usize,
    ) -> Result<Self> {
        let probs = store
            .probabilities
            .as_ref()
            .ok_or(Error::MissingProbabilities)?;
        let base = ExactIndex::build(store, metric, features, space)?;
        Self::from_probabilities(base, probs, k)
    }

    fn from_probabilities(base: ExactIndex, probs: &ProbabilityMatrix, k: usize) -> Result<Self> {
        if probs.count() != base.len() {
            return Err(Error::CountMismatch {
                expected: base.len(),
                actual: probs.count(),
            });
        }
        let num_classes = probs.dim();
        let mut top_classes = Vec::with_capacity(probs.count() * k);
        let mut inverted = vec![Vec::new(); num_classes];
        for (i, row) in probs.rows().enumerate() {
            let classes = top_k_classes(row, k)?;
            for &c in &classes {
                inverted[c].push(i);
            }
            top_classes.extend(classes);
        }
        Ok(ClassRoutedIndex {
            base,
            k,
            num_classes,
            top_classes,
            inverted,
        })
    }

    pub fn base(&self) -> &ExactIndex {
        &self.base
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn item_classes(&self, id: ItemId) -> &[usize] {
        &self.top_classes[id * self.k..(id + 1) * self.k]
    }

    /// Items assigned to `class`, ascending.
    pub fn postings(&self, class: usize) -> &[ItemId] {
        &self.inverted[class]
    }

    fn union_for(&self, classes: &[usize]) -> Vec<ItemId> {
        let lists: Vec<&[ItemId]> = classes.iter().map(|&c| self.inverted[c].as_slice()).collect();
        merge_union(&lists)
    }

    /// Candidate set for a query with class probabilities `query_probs`.
    pub fn candidates(&self, query_probs: &[f32]) -> Result<Vec<ItemId>> {
        self.check_probs(query_probs)?;
        Ok(self.union_for(&top_k_classes(query_probs, self.k)?))
    }

    fn check_probs(&self, query_probs: &[f32]) -> Result<()> {
        if query_probs.len() != self.num_classes {
            return Err(Error::DimensionMismatch {
                expected: self.num_classes,
                actual: query_probs.len(),
            });
        }
        Ok(())
    }

    /// Top-`scope` search restricted to the query's class-routed candidates.
    ///
    /// If fewer than `scope` eligible candidates exist, the query's next most
    /// probable classes are added one at a time; once all classes are used
    /// the whole bank is scanned.
    pub fn query_routed(
        &self,
        query: &[f32],
        query_probs: &[f32],
        scope: usize,
        exclude: Option<ItemId>,
    ) -> Result<RankedResult> {
        self.base.check_query(query, scope)?;
        self.check_probs(query_probs)?;

        let eligible = |cands: &[ItemId]| {
            cands.len() - exclude.map_or(0, |x| usize::from(cands.binary_search(&x).is_ok()))
        };

        let mut candidates = self.union_for(&top_k_classes(query_probs, self.k)?);
        let mut fallback = Fallback::None;
        if eligible(&candidates) < scope {
            let ranking = top_k_classes(query_probs, self.num_classes)?;
            let mut used = self.k;
            while eligible(&candidates) < scope && used < ranking.len() {
                let next = self.inverted[ranking[used]].as_slice();
                candidates = merge_union(&[&candidates, next]);
                used += 1;
            }
            if eligible(&candidates) < scope {
                return Ok(RankedResult {
                    fallback: Fallback::FullScan,
                    ..self.base.query_exact(query, scope, exclude)?
                });
            }
            fallback = Fallback::Widened { classes: used };
        }

        Ok(RankedResult {
            entries: self
                .base
                .scan(query, scope, candidates.iter().copied(), exclude),
            candidate_count: candidates.len(),
            fallback,
        })
    }

    /// Candidate-set size for every item used as a query (self included).
    pub fn candidate_sizes(&self) -> Vec<usize> {
        (0..self.len())
            .map(|i| self.union_for(self.item_classes(i)).len())
            .collect()
    }

    /// Mean candidate-set size over all items used as queries.
    pub fn mean_candidate_size(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let total: usize = self.candidate_sizes().iter().sum();
        total as f64 / self.len() as f64
    }
}

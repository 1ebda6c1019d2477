//! Precision@scope evaluation and retrieval-latency measurement.
//!
//! Every database item is used once as a query. A query's precision is the
//! fraction of its retrieved items whose ground-truth category equals the
//! query's; the overall figure is the mean over all queries.

mod report;

pub use report::{compare_reports, Comparison, ComparisonRow, EvalReport, LatencyStats, ReportConfig};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::Metric;
use crate::pca::PcaModel;
use crate::retrieval::{ClassRoutedIndex, ExactIndex, FeatureSpace, RankedResult, DEFAULT_TOP_CLASSES};
use crate::store::{EmbeddingStore, ItemId};

pub const DEFAULT_SCOPE: usize = 20;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Exact,
    Routed,
    Sampled,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Exact => "exact",
            Mode::Routed => "routed",
            Mode::Sampled => "sampled",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Mode::Exact),
            "routed" => Ok(Mode::Routed),
            "sampled" => Ok(Mode::Sampled),
            other => Err(Error::arg(format!(
                "unknown mode {other:?} (expected exact, routed or sampled)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub scope: usize,
    pub metric: Metric,
    pub mode: Mode,
    /// Classes per item and per query in routed mode.
    pub top_classes: usize,
    /// Items scanned per query in sampled mode.
    pub sample_size: Option<usize>,
    pub seed: u64,
    pub exclude_self: bool,
    /// Worker threads for `evaluate`; does not affect results.
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            scope: DEFAULT_SCOPE,
            metric: Metric::default(),
            mode: Mode::default(),
            top_classes: DEFAULT_TOP_CLASSES,
            sample_size: None,
            seed: DEFAULT_SEED,
            exclude_self: false,
            threads: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scope == 0 {
            return Err(Error::arg("scope must be at least 1"));
        }
        if self.top_classes == 0 {
            return Err(Error::arg("top_classes must be at least 1"));
        }
        if self.mode == Mode::Sampled {
            match self.sample_size {
                None => return Err(Error::arg("sampled mode needs a sample size")),
                Some(s) if s < self.scope => {
                    return Err(Error::arg(format!(
                        "sample size {s} is smaller than scope {}",
                        self.scope
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

enum Engine {
    Exact(ExactIndex),
    Routed(ClassRoutedIndex),
}

/// A prepared feature bank plus index, ready to answer queries.
///
/// Building it (projection of the bank, index construction) is not part of
/// per-query cost; `query_item` and `query_vector` cover everything a query
/// needs: projecting the query, gathering candidates, scanning and ranking.
pub struct Pipeline<'a> {
    store: &'a EmbeddingStore,
    config: EvalConfig,
    pca: Option<&'a PcaModel>,
    engine: Engine,
}

impl<'a> Pipeline<'a> {
    pub fn new(store: &'a EmbeddingStore, config: &EvalConfig, pca: Option<&'a PcaModel>) -> Result<Self> {
        config.validate()?;
        let (features, space) = match pca {
            Some(model) => (model.transform(&store.embeddings)?, FeatureSpace::Pca),
            None => (store.embeddings.clone(), FeatureSpace::Raw),
        };
        let engine = match config.mode {
            Mode::Routed => Engine::Routed(ClassRoutedIndex::build(
                store,
                config.metric,
                features,
                space,
                config.top_classes,
            )?),
            Mode::Exact | Mode::Sampled => {
                Engine::Exact(ExactIndex::build(store, config.metric, features, space)?)
            }
        };
        Ok(Pipeline {
            store,
            config: config.clone(),
            pca,
            engine,
        })
    }

    pub fn config(&self) -> &EvalConfig {
        &self.config
    }

    pub fn routed_index(&self) -> Option<&ClassRoutedIndex> {
        match &self.engine {
            Engine::Routed(r) => Some(r),
            Engine::Exact(_) => None,
        }
    }

    /// Queries with a database item, honouring `exclude_self`. In sampled
    /// mode the sample seed is derived from the configured seed and the id.
    pub fn query_item(&self, id: ItemId) -> Result<RankedResult> {
        if id >= self.store.len() {
            return Err(Error::UnknownItem(id));
        }
        let probs = self.store.probabilities.as_ref().map(|p| p.row(id));
        let exclude = self.config.exclude_self.then_some(id);
        self.query_vector(
            self.store.embeddings.row(id),
            probs,
            exclude,
            item_seed(self.config.seed, id),
        )
    }

    /// Queries with a raw (unprojected) feature vector.
    pub fn query_vector(
        &self,
        raw: &[f32],
        probs: Option<&[f32]>,
        exclude: Option<ItemId>,
        sample_seed: u64,
    ) -> Result<RankedResult> {
        let projected;
        let query = match self.pca {
            Some(model) => {
                projected = model.project(raw)?;
                projected.as_slice()
            }
            None => raw,
        };
        let scope = self.config.scope;
        match (&self.engine, self.config.mode) {
            (Engine::Routed(index), _) => {
                let probs = probs.ok_or_else(|| {
                    Error::arg("routed mode needs class probabilities for the query")
                })?;
                index.query_routed(query, probs, scope, exclude)
            }
            (Engine::Exact(index), Mode::Sampled) => {
                let size = self.config.sample_size.unwrap_or(usize::MAX);
                index.query_sampled(query, scope, size, sample_seed, exclude)
            }
            (Engine::Exact(index), _) => index.query_exact(query, scope, exclude),
        }
    }
}

/// Per-query sampling seed: splitmix64 of the run seed mixed with the id.
pub fn item_seed(seed: u64, id: ItemId) -> u64 {
    let mut z = seed ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fraction of `retrieved` items whose category is `query_category`.
pub fn precision_at_scope(
    retrieved: &RankedResult,
    query_category: &str,
    store: &EmbeddingStore,
) -> Result<f64> {
    if retrieved.is_empty() {
        return Err(Error::arg("cannot compute precision of an empty result"));
    }
    let mut relevant = 0usize;
    for &(id, _) in &retrieved.entries {
        if store.category(id)? == query_category {
            relevant += 1;
        }
    }
    Ok(relevant as f64 / retrieved.len() as f64)
}

struct QueryOutcome {
    precision: f64,
    candidates: usize,
    elapsed: Duration,
}

fn run_query(pipeline: &Pipeline<'_>, store: &EmbeddingStore, id: ItemId) -> Result<QueryOutcome> {
    let start = Instant::now();
    let result = pipeline.query_item(id)?;
    let elapsed = start.elapsed();
    Ok(QueryOutcome {
        precision: precision_at_scope(&result, store.category(id)?, store)?,
        candidates: result.candidate_count,
        elapsed,
    })
}

fn with_threads<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::arg(format!("cannot start {threads} threads: {e}")))?;
    Ok(pool.install(job))
}

/// Uses every item as a query and aggregates precision, candidate counts and
/// per-query latency.
pub fn evaluate(store: &EmbeddingStore, config: &EvalConfig, pca: Option<&PcaModel>) -> Result<EvalReport> {
    if store.is_empty() {
        return Err(Error::arg("cannot evaluate an empty store"));
    }
    let pipeline = Pipeline::new(store, config, pca)?;

    let outcomes: Vec<QueryOutcome> = if config.threads > 1 {
        with_threads(config.threads, || {
            (0..store.len())
                .into_par_iter()
                .map(|id| run_query(&pipeline, store, id))
                .collect::<Result<Vec<_>>>()
        })??
    } else {
        (0..store.len())
            .map(|id| run_query(&pipeline, store, id))
            .collect::<Result<Vec<_>>>()?
    };

    let per_query: Vec<(ItemId, f64)> = outcomes.iter().enumerate().map(|(id, o)| (id, o.precision)).collect();
    let overall = per_query.iter().map(|&(_, p)| p).sum::<f64>() / per_query.len() as f64;

    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (meta, &(_, p)) in store.meta.iter().zip(&per_query) {
        let e = sums.entry(meta.category.clone()).or_insert((0.0, 0));
        e.0 += p;
        e.1 += 1;
    }
    let per_category = sums.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect();

    let counts: Vec<usize> = outcomes.iter().map(|o| o.candidates).collect();
    let candidate_mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;

    let times: Vec<Duration> = outcomes.iter().map(|o| o.elapsed).collect();

    Ok(EvalReport {
        config: ReportConfig::new(config, pca),
        overall,
        per_category,
        candidate_mean,
        candidate_min: counts.iter().copied().min().unwrap_or(0),
        candidate_max: counts.iter().copied().max().unwrap_or(0),
        latency_ms: LatencyStats::from_durations(&times),
        per_query,
    })
}

/// Times `repetitions` sequential passes over every item as a query.
///
/// Index construction and bank projection happen before the clock starts.
pub fn benchmark_latency(
    store: &EmbeddingStore,
    config: &EvalConfig,
    pca: Option<&PcaModel>,
    repetitions: usize,
) -> Result<LatencyStats> {
    if repetitions == 0 {
        return Err(Error::arg("repetitions must be at least 1"));
    }
    let pipeline = Pipeline::new(store, config, pca)?;
    let mut times = Vec::with_capacity(store.len() * repetitions);
    for _ in 0..repetitions {
        for id in 0..store.len() {
            let start = Instant::now();
            let result = pipeline.query_item(id)?;
            times.push(start.elapsed());
            std::hint::black_box(result);
        }
    }
    Ok(LatencyStats::from_durations(&times))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub threads: usize,
    pub queries: usize,
    pub seconds: f64,
    pub queries_per_second: f64,
}

/// Parallel throughput: all queries of `repetitions` passes spread over `threads`.
pub fn benchmark_throughput(
    store: &EmbeddingStore,
    config: &EvalConfig,
    pca: Option<&PcaModel>,
    repetitions: usize,
    threads: usize,
) -> Result<Throughput> {
    if repetitions == 0 || threads == 0 {
        return Err(Error::arg("repetitions and threads must be at least 1"));
    }
    let pipeline = Pipeline::new(store, config, pca)?;
    let queries = store.len() * repetitions;
    let start = Instant::now();
    with_threads(threads, || {
        (0..queries)
            .into_par_iter()
            .try_for_each(|q| pipeline.query_item(q % store.len()).map(|r| {
                std::hint::black_box(r);
            }))
    })??;
    let seconds = start.elapsed().as_secs_f64();
    Ok(Throughput {
        threads,
        queries,
        seconds,
        queries_per_second: if seconds > 0.0 { queries as f64 / seconds } else { f64::INFINITY },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{ItemMeta, Matrix};

    fn labelled(cats: &[&str], rows: &[Vec<f32>]) -> EmbeddingStore {
        let meta = cats
            .iter()
            .enumerate()
            .map(|(i, c)| ItemMeta {
                id: i,
                path: format!("{i}.jpg"),
                category: c.to_string(),
            })
            .collect();
        EmbeddingStore::new(meta, Matrix::from_rows(rows[0].len(), rows).unwrap(), None)
    }

    fn result_of(ids: impl IntoIterator<Item = usize>) -> RankedResult {
        RankedResult {
            entries: ids.into_iter().map(|i| (i, 0.0)).collect(),
            candidate_count: 0,
            fallback: Default::default(),
        }
    }

    fn twenty_store() -> EmbeddingStore {
        let cats: Vec<&str> = (0..40).map(|i| if i < 20 { "african" } else { "beach" }).collect();
        let rows: Vec<Vec<f32>> = (0..40).map(|i| vec![i as f32]).collect();
        labelled(&cats, &rows)
    }

    #[test]
    fn thirteen_of_twenty() {
        let store = twenty_store();
        // 13 from the query's category, 7 from elsewhere
        let r = result_of((0..13).chain(20..27));
        assert_eq!(precision_at_scope(&r, "african", &store).unwrap(), 0.65);
    }

    #[test]
    fn all_and_none_relevant() {
        let store = twenty_store();
        assert_eq!(precision_at_scope(&result_of(0..20), "african", &store).unwrap(), 1.0);
        assert_eq!(precision_at_scope(&result_of(20..40), "african", &store).unwrap(), 0.0);
    }

    #[test]
    fn precision_errors() {
        let store = twenty_store();
        assert!(matches!(
            precision_at_scope(&result_of([3, 99]), "african", &store),
            Err(Error::UnknownItem(99))
        ));
        assert!(precision_at_scope(&result_of([]), "african", &store).is_err());
    }

    #[test]
    fn single_category_is_perfect() {
        let rows: Vec<Vec<f32>> = (0..30).map(|i| vec![(i * 7 % 11) as f32, i as f32]).collect();
        let store = labelled(&["same"; 30], &rows);
        let report = evaluate(&store, &EvalConfig::default(), None).unwrap();
        assert_eq!(report.overall, 1.0);
        assert_eq!(report.per_category["same"], 1.0);
        assert_eq!(report.candidate_mean, 30.0);
    }

    #[test]
    fn per_category_and_overall_identities() {
        // two interleaved 1-D groups so some neighbours cross categories
        let cats: Vec<&str> = (0..12).map(|i| if i % 3 == 0 { "a" } else { "b" }).collect();
        let rows: Vec<Vec<f32>> = (0..12).map(|i| vec![i as f32]).collect();
        let store = labelled(&cats, &rows);
        let config = EvalConfig {
            scope: 3,
            ..Default::default()
        };
        let r = evaluate(&store, &config, None).unwrap();
        let mean: f64 = r.per_query.iter().map(|p| p.1).sum::<f64>() / 12.0;
        assert!((r.overall - mean).abs() < 1e-9);
        let a: Vec<f64> = r.per_query.iter().filter(|(id, _)| id % 3 == 0).map(|p| p.1).collect();
        let a_mean = a.iter().sum::<f64>() / a.len() as f64;
        assert!((r.per_category["a"] - a_mean).abs() < 1e-12);
        assert!(r.per_query.iter().all(|&(_, p)| (1.0 / 3.0 - 1e-12..=1.0).contains(&p)));
    }

    #[test]
    fn exclude_self_removes_query() {
        let store = labelled(&["a", "b", "b"], &[vec![0.0], vec![0.1], vec![5.0]]);
        let config = EvalConfig {
            scope: 1,
            exclude_self: true,
            ..Default::default()
        };
        let r = evaluate(&store, &config, None).unwrap();
        assert_eq!(r.per_query, vec![(0, 0.0), (1, 0.0), (2, 1.0)]);
    }

    #[test]
    fn routed_without_probabilities_fails() {
        let store = twenty_store();
        let config = EvalConfig {
            mode: Mode::Routed,
            ..Default::default()
        };
        assert!(matches!(evaluate(&store, &config, None), Err(Error::MissingProbabilities)));
    }

    #[test]
    fn config_validation() {
        let bad = |c: EvalConfig| c.validate().is_err();
        assert!(bad(EvalConfig { scope: 0, ..Default::default() }));
        assert!(bad(EvalConfig { mode: Mode::Sampled, ..Default::default() }));
        assert!(bad(EvalConfig {
            mode: Mode::Sampled,
            sample_size: Some(5),
            ..Default::default()
        }));
        assert!(EvalConfig::default().validate().is_ok());
        assert_eq!("routed".parse::<Mode>().unwrap(), Mode::Routed);
        assert!("fast".parse::<Mode>().is_err());
    }

    #[test]
    fn benchmark_counts_every_run() {
        let store = twenty_store();
        let stats = benchmark_latency(&store, &EvalConfig::default(), None, 2).unwrap();
        assert_eq!(stats.count, 80);
        assert!(stats.mean >= 0.0 && stats.median <= stats.p95);
        assert!(benchmark_latency(&store, &EvalConfig::default(), None, 0).is_err());
    }

    #[test]
    fn throughput_runs_all_queries() {
        let store = twenty_store();
        let t = benchmark_throughput(&store, &EvalConfig::default(), None, 3, 2).unwrap();
        assert_eq!(t.queries, 120);
        assert_eq!(t.threads, 2);
    }

    #[test]
    fn threads_do_not_change_precision() {
        let cats: Vec<&str> = (0..50).map(|i| ["x", "y", "z"][i % 3]).collect();
        let rows: Vec<Vec<f32>> = (0..50).map(|i| vec![(i * 13 % 17) as f32, (i % 5) as f32]).collect();
        let store = labelled(&cats, &rows);
        let one = evaluate(&store, &EvalConfig { scope: 4, ..Default::default() }, None).unwrap();
        let four = evaluate(&store, &EvalConfig { scope: 4, threads: 4, ..Default::default() }, None).unwrap();
        assert_eq!(one.per_query, four.per_query);
        assert_eq!(one.per_category, four.per_category);
        assert_eq!(one.overall, four.overall);
    }

    #[test]
    fn item_seeds_differ() {
        assert_ne!(item_seed(42, 0), item_seed(42, 1));
        assert_eq!(item_seed(7, 3), item_seed(7, 3));
    }
}

mod common;

use cbir_core::synth::{generate, separated_distance, SynthSpec};
use cbir_core::{
    benchmark_latency, compare_reports, evaluate, fit_pca, select_components, ClassRoutedIndex,
    EvalConfig, Fallback, FeatureSpace, Metric, Mode, Pipeline,
};
use common::{class_ranking, sort_oracle};

fn clustered(categories: usize, per: usize, dim: usize, classes: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        num_categories: categories,
        items_per_category: per,
        dim,
        num_classes: classes,
        intra_sigma: 1.0,
        inter_separation: separated_distance(1.0, dim),
        classes_per_category: 3,
        seed,
    }
}

#[test]
fn separated_clusters_are_perfect_in_exact_mode() {
    let spec = clustered(5, 25, 24, 40, 1);
    let store = generate(&spec).unwrap();
    let config = EvalConfig::default();
    let report = evaluate(&store, &config, None).unwrap();
    assert_eq!(report.overall, 1.0);
    assert!(report.per_category.values().all(|&p| p == 1.0));

    // the sort oracle agrees that every neighbour list stays in-category
    for q in (0..store.len()).step_by(7) {
        let hits = sort_oracle(&store.embeddings, store.embeddings.row(q), false, 20, 0..store.len());
        assert!(hits.iter().all(|&(id, _)| store.meta[id].category == store.meta[q].category));
    }
}

#[test]
fn zero_noise_clusters_are_perfect() {
    let spec = SynthSpec {
        intra_sigma: 0.0,
        ..clustered(3, 20, 8, 10, 2)
    };
    let store = generate(&spec).unwrap();
    let report = evaluate(&store, &EvalConfig::default(), None).unwrap();
    assert_eq!(report.overall, 1.0);
}

/// Independent recomputation of the routed candidate set, including widening.
fn oracle_candidates(store: &cbir_core::EmbeddingStore, k: usize, q: usize, scope: usize, exclude: Option<usize>) -> Option<Vec<usize>> {
    let probs = store.probabilities.as_ref().unwrap();
    let item_top: Vec<Vec<usize>> = (0..store.len())
        .map(|i| class_ranking(probs.row(i))[..k].to_vec())
        .collect();
    let ranking = class_ranking(probs.row(q));
    for used in k..=ranking.len() {
        let classes = &ranking[..used];
        let cands: Vec<usize> = (0..store.len())
            .filter(|i| item_top[*i].iter().any(|c| classes.contains(c)))
            .collect();
        let eligible = cands.iter().filter(|&&i| Some(i) != exclude).count();
        if eligible >= scope {
            return Some(cands);
        }
    }
    None
}

#[test]
fn routed_matches_restricted_oracle_on_synthetic_store() {
    let spec = SynthSpec {
        intra_sigma: 3.0,
        inter_separation: 4.0,
        ..clustered(4, 15, 12, 30, 5)
    };
    let store = generate(&spec).unwrap();
    for (k, scope) in [(1, 5), (2, 10), (3, 20), (1, 16)] {
        let index = ClassRoutedIndex::build(&store, Metric::L1, store.embeddings.clone(), FeatureSpace::Raw, k).unwrap();
        let probs = store.probabilities.as_ref().unwrap();
        for q in 0..store.len() {
            let got = index.query_routed(store.embeddings.row(q), probs.row(q), scope, None).unwrap();
            let want = match oracle_candidates(&store, k, q, scope, None) {
                Some(c) => {
                    assert_eq!(got.candidate_count, c.len());
                    sort_oracle(&store.embeddings, store.embeddings.row(q), true, scope, c)
                }
                None => {
                    assert_eq!(got.fallback, Fallback::FullScan);
                    sort_oracle(&store.embeddings, store.embeddings.row(q), true, scope, 0..store.len())
                }
            };
            assert_eq!(got.ids(), want.iter().map(|p| p.0).collect::<Vec<_>>(), "k={k} scope={scope} q={q}");
            assert_eq!(got.entries[0], (q, 0.0));
            if got.fallback == Fallback::None {
                let qc = &class_ranking(probs.row(q))[..k];
                for &(id, _) in &got.entries {
                    assert!(index.item_classes(id).iter().any(|c| qc.contains(c)));
                }
            }
        }
    }
}

#[test]
fn routed_evaluation_never_exceeds_store_size() {
    let store = generate(&clustered(4, 30, 16, 50, 8)).unwrap();
    let config = EvalConfig {
        mode: Mode::Routed,
        top_classes: 3,
        ..Default::default()
    };
    let report = evaluate(&store, &config, None).unwrap();
    assert!(report.candidate_max <= store.len());
    // disjoint home classes: every query scans exactly its own category
    assert_eq!(report.candidate_mean, 30.0);
    assert_eq!(report.overall, 1.0);
    assert!(report.per_query.iter().all(|&(_, p)| p >= 1.0 / 20.0));
}

#[test]
fn selection_matches_manual_pipeline() {
    let spec = SynthSpec {
        intra_sigma: 2.0,
        inter_separation: 6.0,
        ..clustered(5, 30, 20, 30, 13)
    };
    let store = generate(&spec).unwrap();
    let config = EvalConfig {
        scope: 10,
        ..Default::default()
    };
    let sel = select_components(&store, &config, &[2, 5, 10]).unwrap();
    for &(m, p) in &sel.table {
        let model = fit_pca(&store.embeddings, m).unwrap();
        let manual = evaluate(&store, &config, Some(&model)).unwrap();
        assert_eq!(p, manual.overall, "M={m}");
    }
    let best_p = sel.table.iter().map(|x| x.1).fold(f64::MIN, f64::max);
    let first_best = sel.table.iter().filter(|x| x.1 == best_p).map(|x| x.0).min().unwrap();
    assert_eq!(sel.best, first_best);
}

#[test]
fn full_rank_selection_equals_raw_precision() {
    let spec = SynthSpec {
        intra_sigma: 2.0,
        inter_separation: 5.0,
        ..clustered(4, 20, 10, 20, 17)
    };
    let store = generate(&spec).unwrap();
    let config = EvalConfig {
        scope: 8,
        ..Default::default()
    };
    let raw = evaluate(&store, &config, None).unwrap();
    let sel = select_components(&store, &config, &[10]).unwrap();
    assert!((sel.table[0].1 - raw.overall).abs() < 1e-6);
    assert_eq!(sel.best, 10);
}

#[test]
fn selection_ties_prefer_fewer_components() {
    let store = generate(&clustered(3, 20, 12, 10, 4)).unwrap();
    let sel = select_components(&store, &EvalConfig::default(), &[8, 3, 5]).unwrap();
    assert!(sel.table.iter().all(|&(_, p)| p == 1.0));
    assert_eq!(sel.best, 3);
}

#[test]
fn pca_pipeline_self_retrieval() {
    let store = generate(&clustered(3, 10, 16, 10, 6)).unwrap();
    let model = fit_pca(&store.embeddings, 4).unwrap();
    for mode in [Mode::Exact, Mode::Routed] {
        let config = EvalConfig { mode, top_classes: 2, ..Default::default() };
        let p = Pipeline::new(&store, &config, Some(&model)).unwrap();
        for q in 0..store.len() {
            assert_eq!(p.query_item(q).unwrap().entries[0], (q, 0.0));
        }
    }
}

#[test]
fn sampled_evaluation_is_seeded() {
    let store = generate(&clustered(4, 50, 8, 10, 3)).unwrap();
    let config = EvalConfig {
        mode: Mode::Sampled,
        sample_size: Some(60),
        ..Default::default()
    };
    let mut a = evaluate(&store, &config, None).unwrap();
    let mut b = evaluate(&store, &config, None).unwrap();
    a.clear_latency();
    b.clear_latency();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(a.candidate_mean, 60.0);
    let other = evaluate(&store, &EvalConfig { seed: 7, ..config }, None).unwrap();
    assert_ne!(other.per_query, a.per_query);
}

#[test]
fn pca_and_routing_reduce_latency() {
    let spec = SynthSpec {
        classes_per_category: 5,
        ..clustered(10, 150, 512, 200, 11)
    };
    let store = generate(&spec).unwrap();
    let exact = benchmark_latency(&store, &EvalConfig::default(), None, 2).unwrap();
    assert_eq!(exact.count, 2 * store.len());

    let model = fit_pca(&store.embeddings, 16).unwrap();
    let pca = benchmark_latency(&store, &EvalConfig::default(), Some(&model), 2).unwrap();
    assert!(pca.mean < exact.mean, "pca {} vs raw {}", pca.mean, exact.mean);

    let routed_cfg = EvalConfig { mode: Mode::Routed, ..Default::default() };
    let routed = benchmark_latency(&store, &routed_cfg, None, 2).unwrap();
    assert!(routed.mean < exact.mean, "routed {} vs exact {}", routed.mean, exact.mean);
}

#[test]
fn exact_versus_routed_comparison() {
    let spec = SynthSpec {
        classes_per_category: 5,
        ..clustered(6, 40, 32, 100, 19)
    };
    let store = generate(&spec).unwrap();
    let exact = evaluate(&store, &EvalConfig::default(), None).unwrap();
    let routed = evaluate(&store, &EvalConfig { mode: Mode::Routed, ..Default::default() }, None).unwrap();
    let cmp = compare_reports(&[("exact".into(), exact), ("routed".into(), routed)]).unwrap();
    let row = &cmp.rows[1];
    assert!(row.candidate_mean_delta < 0.0);
    assert!(row.overall_delta.abs() <= 0.02, "{}", row.overall_delta);
    assert!(!row.category_mismatch);
}

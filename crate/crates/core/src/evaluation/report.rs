use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::Metric;
use crate::pca::PcaModel;
use crate::store::ItemId;

use super::{EvalConfig, Mode};

/// The run parameters recorded in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub scope: usize,
    pub metric: Metric,
    pub mode: Mode,
    pub top_classes: usize,
    pub sample_size: Option<usize>,
    pub seed: u64,
    pub exclude_self: bool,
    pub use_pca: bool,
    pub pca_components: Option<usize>,
}

impl ReportConfig {
    pub fn new(config: &EvalConfig, pca: Option<&PcaModel>) -> Self {
        ReportConfig {
            scope: config.scope,
            metric: config.metric,
            mode: config.mode,
            top_classes: config.top_classes,
            sample_size: config.sample_size,
            seed: config.seed,
            exclude_self: config.exclude_self,
            use_pca: pca.is_some(),
            pca_components: pca.map(PcaModel::output_dim),
        }
    }
}

/// Per-query wall time summary, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

impl LatencyStats {
    pub fn from_durations(times: &[Duration]) -> Self {
        let mut ms: Vec<f64> = times.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        Self::from_millis(&mut ms)
    }

    /// Summarises `ms` (reordered in place). p95 uses the nearest-rank rule.
    pub fn from_millis(ms: &mut [f64]) -> Self {
        let count = ms.len();
        if count == 0 {
            return LatencyStats::default();
        }
        ms.sort_by(f64::total_cmp);
        let mean = ms.iter().sum::<f64>() / count as f64;
        let median = if count % 2 == 1 {
            ms[count / 2]
        } else {
            (ms[count / 2 - 1] + ms[count / 2]) / 2.0
        };
        let rank = ((0.95 * count as f64).ceil() as usize).clamp(1, count);
        LatencyStats {
            count,
            mean,
            median,
            p95: ms[rank - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ReportConfig,
    pub overall: f64,
    pub per_category: BTreeMap<String, f64>,
    pub candidate_mean: f64,
    pub candidate_min: usize,
    pub candidate_max: usize,
    pub latency_ms: LatencyStats,
    pub per_query: Vec<(ItemId, f64)>,
}

impl EvalReport {
    /// Zeroes the wall-clock figures (the count is kept) so that reports of
    /// identical runs compare byte-for-byte.
    pub fn clear_latency(&mut self) {
        self.latency_ms = LatencyStats {
            count: self.latency_ms.count,
            ..LatencyStats::default()
        };
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Human-readable summary.
    pub fn to_table(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "mode={} metric={} scope={} pca={} exclude_self={}",
            c.mode,
            c.metric,
            c.scope,
            c.pca_components.map_or("off".to_string(), |m| m.to_string()),
            c.exclude_self
        );
        let width = self.per_category.keys().map(String::len).max().unwrap_or(0).max(8);
        let _ = writeln!(out, "{:<width$}  precision", "category");
        for (cat, p) in &self.per_category {
            let _ = writeln!(out, "{cat:<width$}  {:>8.4}%", p * 100.0);
        }
        let _ = writeln!(out, "{:<width$}  {:>8.4}%", "overall", self.overall * 100.0);
        let _ = writeln!(
            out,
            "candidates: mean {:.2} min {} max {}",
            self.candidate_mean, self.candidate_min, self.candidate_max
        );
        let _ = writeln!(
            out,
            "latency (ms over {} queries): mean {:.4} median {:.4} p95 {:.4}",
            self.latency_ms.count, self.latency_ms.mean, self.latency_ms.median, self.latency_ms.p95
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub overall: f64,
    pub overall_delta: f64,
    pub candidate_mean: f64,
    pub candidate_mean_delta: f64,
    pub latency_mean_ms: f64,
    pub latency_mean_delta_ms: f64,
    /// `None` where this report lacks the category.
    pub per_category: BTreeMap<String, Option<f64>>,
    pub per_category_delta: BTreeMap<String, Option<f64>>,
    /// Category set differs from the baseline's.
    pub category_mismatch: bool,
}

/// Side-by-side view of several reports; deltas are relative to the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub categories: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_reports(reports: &[(String, EvalReport)]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::arg("comparison needs at least two reports"));
    }
    let categories: BTreeSet<&String> = reports.iter().flat_map(|(_, r)| r.per_category.keys()).collect();
    let (base_label, base) = &reports[0];
    let base_cats: BTreeSet<&String> = base.per_category.keys().collect();

    let rows = reports
        .iter()
        .map(|(label, r)| {
            let per_category: BTreeMap<String, Option<f64>> = categories
                .iter()
                .map(|c| ((*c).clone(), r.per_category.get(*c).copied()))
                .collect();
            let per_category_delta = categories
                .iter()
                .map(|c| {
                    let d = match (r.per_category.get(*c), base.per_category.get(*c)) {
                        (Some(a), Some(b)) => Some(a - b),
                        _ => None,
                    };
                    ((*c).clone(), d)
                })
                .collect();
            ComparisonRow {
                label: label.clone(),
                overall: r.overall,
                overall_delta: r.overall - base.overall,
                candidate_mean: r.candidate_mean,
                candidate_mean_delta: r.candidate_mean - base.candidate_mean,
                latency_mean_ms: r.latency_ms.mean,
                latency_mean_delta_ms: r.latency_ms.mean - base.latency_ms.mean,
                per_category,
                per_category_delta,
                category_mismatch: r.per_category.keys().collect::<BTreeSet<_>>() != base_cats,
            }
        })
        .collect();

    Ok(Comparison {
        baseline: base_label.clone(),
        categories: categories.into_iter().cloned().collect(),
        rows,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut header = vec![
            "label".to_string(),
            "overall".into(),
            "overall_delta".into(),
            "candidate_mean".into(),
            "candidate_mean_delta".into(),
            "latency_mean_ms".into(),
            "latency_mean_delta_ms".into(),
        ];
        for c in &self.categories {
            header.push(csv_field(&format!("category:{c}")));
            header.push(csv_field(&format!("category_delta:{c}")));
        }
        header.push("category_warning".into());

        let mut out = header.join(",");
        out.push('\n');
        for row in &self.rows {
            let mut fields = vec![
                csv_field(&row.label),
                row.overall.to_string(),
                row.overall_delta.to_string(),
                row.candidate_mean.to_string(),
                row.candidate_mean_delta.to_string(),
                row.latency_mean_ms.to_string(),
                row.latency_mean_delta_ms.to_string(),
            ];
            for c in &self.categories {
                fields.push(opt(row.per_category[c]));
                fields.push(opt(row.per_category_delta[c]));
            }
            fields.push(if row.category_mismatch { "category set differs from baseline".into() } else { String::new() });
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>10}  {:>9}  {:>12}  {:>12}",
            "label", "overall%", "delta", "candidates", "latency ms"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>10.4}  {:>+9.4}  {:>12.2}  {:>12.4}{}",
                r.label,
                r.overall * 100.0,
                r.overall_delta * 100.0,
                r.candidate_mean,
                r.latency_mean_ms,
                if r.category_mismatch { "  [category mismatch]" } else { "" }
            );
        }
        out
    }
}

//! Principal component analysis over embedding matrices.
//!
//! The model is fit by a thin SVD of the mean-centred data; no whitening is
//! applied, so projected distances stay comparable to raw ones. Each principal
//! axis is sign-normalised so that its largest-magnitude entry is non-negative,
//! which makes fits reproducible across runs.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::binfmt::{self, HEADER_LEN};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalConfig};
use crate::store::{EmbeddingMatrix, EmbeddingStore, Matrix};

const PCA_MAGIC: &[u8; 4] = b"CBQ1";

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f32>,
    /// `output_dim × input_dim`, row-major, rows ordered by decreasing variance.
    components: Vec<f32>,
    explained_variance: Vec<f32>,
    input_dim: usize,
    output_dim: usize,
}

impl PcaModel {
    /// Assembles a model from raw parts, checking shapes only.
    pub fn from_parts(
        mean: Vec<f32>,
        components: Vec<f32>,
        explained_variance: Vec<f32>,
    ) -> Result<Self> {
        let input_dim = mean.len();
        let output_dim = explained_variance.len();
        if input_dim == 0 || output_dim == 0 || components.len() != input_dim * output_dim {
            return Err(Error::arg(format!(
                "inconsistent PCA shapes: mean {input_dim}, variances {output_dim}, components {}",
                components.len()
            )));
        }
        Ok(PcaModel {
            mean,
            components,
            explained_variance,
            input_dim,
            output_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn explained_variance(&self) -> &[f32] {
        &self.explained_variance
    }

    /// Principal axis `j` (unit length in `input_dim` space).
    pub fn component(&self, j: usize) -> &[f32] {
        &self.components[j * self.input_dim..(j + 1) * self.input_dim]
    }

    /// Keeps only the first `m` components.
    pub fn truncate(&self, m: usize) -> Result<PcaModel> {
        if m == 0 || m > self.output_dim {
            return Err(Error::arg(format!(
                "cannot truncate {} components to {m}",
                self.output_dim
            )));
        }
        Ok(PcaModel {
            mean: self.mean.clone(),
            components: self.components[..m * self.input_dim].to_vec(),
            explained_variance: self.explained_variance[..m].to_vec(),
            input_dim: self.input_dim,
            output_dim: m,
        })
    }

    /// Projects one vector; `out` must have `output_dim` entries.
    pub fn project_into(&self, x: &[f32], out: &mut [f32]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        if out.len() != self.output_dim {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim,
                actual: out.len(),
            });
        }
        for (j, o) in out.iter_mut().enumerate() {
            let axis = self.component(j);
            let mut acc = 0.0f64;
            for ((&xi, &mi), &ci) in x.iter().zip(&self.mean).zip(axis) {
                acc += (f64::from(xi) - f64::from(mi)) * f64::from(ci);
            }
            *o = acc as f32;
        }
        Ok(())
    }

    pub fn project(&self, x: &[f32]) -> Result<Vec<f32>> {
        let mut out = vec![0.0; self.output_dim];
        self.project_into(x, &mut out)?;
        Ok(out)
    }

    /// Maps `output_dim`-vectors back to the input space (mean added back).
    pub fn inverse_project(&self, y: &[f32]) -> Result<Vec<f32>> {
        if y.len() != self.output_dim {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim,
                actual: y.len(),
            });
        }
        let mut acc: Vec<f64> = self.mean.iter().map(|&m| f64::from(m)).collect();
        for (j, &yj) in y.iter().enumerate() {
            for (a, &c) in acc.iter_mut().zip(self.component(j)) {
                *a += f64::from(yj) * f64::from(c);
            }
        }
        Ok(acc.into_iter().map(|v| v as f32).collect())
    }

    pub fn transform(&self, data: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if data.dim() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: data.dim(),
            });
        }
        let mut out = vec![0.0f32; data.count() * self.output_dim];
        out.par_chunks_mut(self.output_dim)
            .enumerate()
            .try_for_each(|(i, dst)| self.project_into(data.row(i), dst))?;
        Matrix::new(data.count(), self.output_dim, out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let d = binfmt::to_u32(path, "input_dim", self.input_dim)?;
        let m = binfmt::to_u32(path, "output_dim", self.output_dim)?;
        binfmt::write_file(path, |w| {
            w.header(PCA_MAGIC, d, m)?;
            w.f32s(&self.mean)?;
            w.f32s(&self.components)?;
            w.f32s(&self.explained_variance)
        })
    }

    pub fn load(path: &Path) -> Result<PcaModel> {
        let bytes = binfmt::read_file(path)?;
        let (d, m) = binfmt::parse_header(path, &bytes, PCA_MAGIC)?;
        let floats = d
            .checked_mul(m)
            .and_then(|dm| dm.checked_add(d))
            .and_then(|v| v.checked_add(m))
            .ok_or_else(|| Error::format(path, "header dimensions overflow"))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != floats * 4 {
            return Err(Error::format(
                path,
                format!(
                    "size mismatch: header implies {} payload bytes, found {}",
                    floats * 4,
                    payload.len()
                ),
            ));
        }
        let values = binfmt::decode_f32s(payload);
        let (mean, rest) = values.split_at(d);
        let (components, variance) = rest.split_at(d * m);
        PcaModel::from_parts(mean.to_vec(), components.to_vec(), variance.to_vec())
            .map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Fits a PCA model with `num_components` axes.
///
/// `explained_variance[j]` is the sample variance (denominator `N − 1`) of the
/// data projected onto axis `j`.
pub fn fit(data: &EmbeddingMatrix, num_components: usize) -> Result<PcaModel> {
    let (n, d) = (data.count(), data.dim());
    if n < 2 {
        return Err(Error::arg(format!("PCA needs at least 2 rows, got {n}")));
    }
    if num_components == 0 || num_components > n.min(d) {
        return Err(Error::arg(format!(
            "num_components must be in 1..={}, got {num_components}",
            n.min(d)
        )));
    }

    let mut mean = vec![0.0f64; d];
    for row in data.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += f64::from(v);
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let centered = DMatrix::<f64>::from_fn(n, d, |i, j| f64::from(data.row(i)[j]) - mean[j]);
    let total_ss: f64 = centered.iter().map(|v| v * v).sum();
    if total_ss == 0.0 {
        return Err(Error::Degenerate(
            "all rows are identical; total variance is zero".into(),
        ));
    }

    let svd = centered.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Degenerate("SVD did not converge".into()))?;
    let singular = svd.singular_values;

    let mut order: Vec<usize> = (0..singular.len()).collect();
    order.sort_by(|&a, &b| singular[b].total_cmp(&singular[a]).then(a.cmp(&b)));

    let denom = (n - 1) as f64;
    let mut components = Vec::with_capacity(num_components * d);
    let mut explained = Vec::with_capacity(num_components);
    for &k in order.iter().take(num_components) {
        let mut axis: Vec<f64> = v_t.row(k).iter().copied().collect();
        let pivot = axis
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > axis[best].abs() { i } else { best });
        if axis[pivot] < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        components.extend(axis.iter().map(|&v| v as f32));
        explained.push((singular[k] * singular[k] / denom) as f32);
    }

    PcaModel::from_parts(
        mean.into_iter().map(|m| m as f32).collect(),
        components,
        explained,
    )
}

/// Outcome of choosing the number of principal components by precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSelection {
    pub best: usize,
    /// `(M, overall precision)` for every candidate, in the order given.
    pub table: Vec<(usize, f64)>,
}

/// Evaluates overall precision for each candidate component count and picks
/// the best one; ties go to the smaller count.
pub fn select_components(
    store: &EmbeddingStore,
    config: &EvalConfig,
    candidates: &[usize],
) -> Result<ComponentSelection> {
    let max = *candidates
        .iter()
        .max()
        .ok_or_else(|| Error::arg("no candidate component counts given"))?;
    // The full SVD is computed regardless of M, so truncating one fit is
    // identical to fitting each candidate separately.
    let full = fit(&store.embeddings, max)?;

    let mut table = Vec::with_capacity(candidates.len());
    for &m in candidates {
        let model = full.truncate(m)?;
        let report = evaluate(store, config, Some(&model))?;
        table.push((m, report.overall));
    }
    let (best, _) = table
        .iter()
        .copied()
        .fold(None, |acc: Option<(usize, f64)>, (m, p)| match acc {
            Some((bm, bp)) if bp > p || (bp == p && bm <= m) => Some((bm, bp)),
            _ => Some((m, p)),
        })
        .expect("candidates is non-empty");
    Ok(ComponentSelection { best, table })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_data() -> EmbeddingMatrix {
        let mut rows = Vec::new();
        for i in 1..=50 {
            let t = i as f32 * 0.1;
            rows.push([t, 2.0 * t]);
            rows.push([-t, -2.0 * t]);
        }
        Matrix::from_rows(2, &rows).unwrap()
    }

    #[test]
    fn rank_one_line() {
        let model = fit(&line_data(), 1).unwrap();
        let c = model.component(0);
        let s = 5f32.sqrt();
        assert!((c[0] - 1.0 / s).abs() < 1e-6 && (c[1] - 2.0 / s).abs() < 1e-6, "{c:?}");

        let full = fit(&line_data(), 2).unwrap();
        let ev = full.explained_variance();
        let share = ev[0] / (ev[0] + ev[1]);
        assert!(share > 1.0 - 1e-6, "{ev:?}");
    }

    #[test]
    fn mean_projects_to_zero() {
        let data = Matrix::from_rows(3, &[[1.0, 2.0, 3.0], [4.0, 0.0, -1.0], [2.0, 2.0, 2.0], [0.0, 1.0, 5.0]]).unwrap();
        let model = fit(&data, 2).unwrap();
        let y = model.project(model.mean()).unwrap();
        assert!(y.iter().all(|v| *v == 0.0), "{y:?}");
    }

    #[test]
    fn range_errors() {
        let data = line_data();
        assert!(fit(&data, 0).is_err());
        assert!(fit(&data, 3).is_err());
        let one = Matrix::from_rows(2, &[[1.0, 2.0]]).unwrap();
        assert!(fit(&one, 1).is_err());
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let data = Matrix::from_rows(2, &[[1.0, 2.0]; 4]).unwrap();
        match fit(&data, 1) {
            Err(Error::Degenerate(msg)) => assert!(msg.contains("zero")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn transform_checks_dimension() {
        let model = fit(&line_data(), 1).unwrap();
        let bad = Matrix::zeros(2, 3);
        assert!(matches!(
            model.transform(&bad),
            Err(Error::DimensionMismatch { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pca.bin");
        let model = fit(&line_data(), 2).unwrap();
        model.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"CBQ1");
        assert_eq!(bytes.len(), 12 + (2 + 4 + 2) * 4);
        assert_eq!(PcaModel::load(&path).unwrap(), model);

        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(PcaModel::load(&path).unwrap_err().to_string().contains("size mismatch"));
    }

    #[test]
    fn truncate_keeps_prefix() {
        let model = fit(&line_data(), 2).unwrap();
        let t = model.truncate(1).unwrap();
        assert_eq!(t.output_dim(), 1);
        assert_eq!(t.component(0), model.component(0));
        assert!(model.truncate(3).is_err());
    }
}

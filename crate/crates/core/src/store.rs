//! On-disk embedding store: manifest, feature matrix and optional class
//! probabilities.
//!
//! A store directory holds
//!
//! * `manifest.json`: `{"version": 1, "count", "dim", "num_classes", "items": [...]}`
//! * `embeddings.bin`: `CBE1`, u32 count, u32 dim, count×dim f32
//! * `probs.bin`: `CBP1`, u32 count, u32 num_classes, count×num_classes f32
//!
//! All integers and floats are little-endian.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binfmt::{self, HEADER_LEN};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const PROBS_FILE: &str = "probs.bin";

const EMBEDDINGS_MAGIC: &[u8; 4] = b"CBE1";
const PROBS_MAGIC: &[u8; 4] = b"CBP1";
const FORMAT_VERSION: u32 = 1;

/// Tolerance on the sum of each probability row.
pub const PROB_SUM_TOLERANCE: f64 = 1e-3;

/// Dense item index, `0..N`.
pub type ItemId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub id: ItemId,
    pub path: String,
    /// Ground-truth relevance class.
    pub category: String,
}

/// Row-major `count × dim` matrix of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    count: usize,
    dim: usize,
    data: Vec<f32>,
}

/// Image feature vectors, one row per item.
pub type EmbeddingMatrix = Matrix;

/// Softmax outputs, one row per item; `dim()` is the number of classes.
pub type ProbabilityMatrix = Matrix;

impl Matrix {
    pub fn new(count: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if count.checked_mul(dim) != Some(data.len()) {
            return Err(Error::arg(format!(
                "matrix data has {} values, expected {count}x{dim}",
                data.len()
            )));
        }
        Ok(Matrix { count, dim, data })
    }

    pub fn zeros(count: usize, dim: usize) -> Self {
        Matrix {
            count,
            dim,
            data: vec![0.0; count * dim],
        }
    }

    /// Builds a matrix from equally sized rows. `dim` is needed for the empty case.
    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            count: rows.len(),
            dim,
            data,
        })
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.count
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        // chunks_exact panics on zero chunk size
        (0..self.count).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// True when both matrices have the same shape and identical bit patterns.
    pub fn bit_eq(&self, other: &Matrix) -> bool {
        self.count == other.count
            && self.dim == other.dim
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub meta: Vec<ItemMeta>,
    pub embeddings: EmbeddingMatrix,
    pub probabilities: Option<ProbabilityMatrix>,
}

impl EmbeddingStore {
    pub fn new(
        meta: Vec<ItemMeta>,
        embeddings: EmbeddingMatrix,
        probabilities: Option<ProbabilityMatrix>,
    ) -> Self {
        EmbeddingStore {
            meta,
            embeddings,
            probabilities,
        }
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.probabilities.as_ref().map(Matrix::dim)
    }

    pub fn category(&self, id: ItemId) -> Result<&str> {
        self.meta
            .get(id)
            .map(|m| m.category.as_str())
            .ok_or(Error::UnknownItem(id))
    }

    /// Sorted, deduplicated category names.
    pub fn categories(&self) -> Vec<&str> {
        let mut cats: Vec<&str> = self.meta.iter().map(|m| m.category.as_str()).collect();
        cats.sort_unstable();
        cats.dedup();
        cats
    }

    pub fn bit_eq(&self, other: &EmbeddingStore) -> bool {
        self.meta == other.meta
            && self.embeddings.bit_eq(&other.embeddings)
            && match (&self.probabilities, &other.probabilities) {
                (None, None) => true,
                (Some(a), Some(b)) => a.bit_eq(b),
                _ => false,
            }
    }
}

/// A single broken store invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Offending item id (manifest id for id rules, row index otherwise).
    pub item: Option<ItemId>,
    pub rule: Rule,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rule {
    ZeroDim,
    CountMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    IdOutOfRange,
    DuplicateId,
    /// The id set is a permutation of `0..N` but not stored in order.
    IdOrder { position: usize },
    EmptyCategory,
    NonFiniteEmbedding { column: usize },
    ProbabilityOutOfRange { class: usize, value: f32 },
    ProbabilityRowSum { sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(id) = self.item {
            write!(f, "item {id}: ")?;
        }
        match &self.rule {
            Rule::ZeroDim => write!(f, "embedding dimension is zero"),
            Rule::CountMismatch {
                what,
                expected,
                actual,
            } => write!(f, "{what} count {actual} != manifest count {expected}"),
            Rule::IdOutOfRange => write!(f, "id outside 0..N"),
            Rule::DuplicateId => write!(f, "duplicate id"),
            Rule::IdOrder { position } => write!(f, "listed at position {position}, ids must be in order"),
            Rule::EmptyCategory => write!(f, "empty category"),
            Rule::NonFiniteEmbedding { column } => {
                write!(f, "non-finite embedding value at column {column}")
            }
            Rule::ProbabilityOutOfRange { class, value } => {
                write!(f, "probability {value} for class {class} outside [0, 1]")
            }
            Rule::ProbabilityRowSum { sum } => {
                write!(f, "probability row sums to {sum}, not 1")
            }
        }
    }
}

/// Checks every store invariant and reports all violations found.
pub fn validate_store(store: &EmbeddingStore) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = store.meta.len();
    let global = |rule| Violation { item: None, rule };

    if store.embeddings.dim() == 0 {
        out.push(global(Rule::ZeroDim));
    }
    if store.embeddings.count() != n {
        out.push(global(Rule::CountMismatch {
            what: "embedding",
            expected: n,
            actual: store.embeddings.count(),
        }));
    }
    if let Some(p) = &store.probabilities {
        if p.count() != n {
            out.push(global(Rule::CountMismatch {
                what: "probability",
                expected: n,
                actual: p.count(),
            }));
        }
    }

    let mut seen = HashSet::with_capacity(n);
    let mut ids_ok = true;
    for m in &store.meta {
        if m.id >= n {
            out.push(Violation {
                item: Some(m.id),
                rule: Rule::IdOutOfRange,
            });
            ids_ok = false;
        } else if !seen.insert(m.id) {
            out.push(Violation {
                item: Some(m.id),
                rule: Rule::DuplicateId,
            });
            ids_ok = false;
        }
    }
    // N in-range distinct ids are exactly 0..N; only their order can be wrong.
    if ids_ok {
        for (position, m) in store.meta.iter().enumerate() {
            if m.id != position {
                out.push(Violation {
                    item: Some(m.id),
                    rule: Rule::IdOrder { position },
                });
            }
        }
    }
    for m in &store.meta {
        if m.category.is_empty() {
            out.push(Violation {
                item: Some(m.id),
                rule: Rule::EmptyCategory,
            });
        }
    }

    if store.embeddings.dim() > 0 {
        for (i, row) in store.embeddings.rows().enumerate() {
            if let Some(column) = row.iter().position(|v| !v.is_finite()) {
                out.push(Violation {
                    item: Some(i),
                    rule: Rule::NonFiniteEmbedding { column },
                });
            }
        }
    }

    if let Some(p) = &store.probabilities {
        for (i, row) in p.rows().enumerate() {
            if let Some(class) = row.iter().position(|v| !(0.0..=1.0).contains(v)) {
                out.push(Violation {
                    item: Some(i),
                    rule: Rule::ProbabilityOutOfRange {
                        class,
                        value: row[class],
                    },
                });
                continue;
            }
            let sum: f64 = row.iter().map(|&v| f64::from(v)).sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                out.push(Violation {
                    item: Some(i),
                    rule: Rule::ProbabilityRowSum { sum },
                });
            }
        }
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    count: usize,
    dim: usize,
    num_classes: Option<usize>,
    items: Vec<ItemMeta>,
}

/// Writes `store` into `dir`, creating the directory if needed. Invalid
/// stores are refused.
pub fn write_store(store: &EmbeddingStore, dir: &Path) -> Result<()> {
    let violations = validate_store(store);
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let emb_path = dir.join(EMBEDDINGS_FILE);
    let count = binfmt::to_u32(&emb_path, "count", store.len())?;
    let dim = binfmt::to_u32(&emb_path, "dim", store.dim())?;
    binfmt::write_file(&emb_path, |w| {
        w.header(EMBEDDINGS_MAGIC, count, dim)?;
        w.f32s(store.embeddings.as_slice())
    })?;

    let probs_path = dir.join(PROBS_FILE);
    match &store.probabilities {
        Some(p) => {
            let classes = binfmt::to_u32(&probs_path, "num_classes", p.dim())?;
            binfmt::write_file(&probs_path, |w| {
                w.header(PROBS_MAGIC, count, classes)?;
                w.f32s(p.as_slice())
            })?;
        }
        None => match fs::remove_file(&probs_path) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(Error::io(&probs_path, e)),
        },
    }

    let manifest = Manifest {
        version: FORMAT_VERSION,
        count: store.len(),
        dim: store.dim(),
        num_classes: store.num_classes(),
        items: store.meta.clone(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))
}

/// Loads and validates a store directory.
pub fn read_store(dir: &Path) -> Result<EmbeddingStore> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest_bytes = binfmt::read_file(&manifest_path)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::format(
            &manifest_path,
            format!("unsupported version {}", manifest.version),
        ));
    }
    if manifest.items.len() != manifest.count {
        return Err(Error::format(
            &manifest_path,
            format!(
                "count is {} but {} items are listed",
                manifest.count,
                manifest.items.len()
            ),
        ));
    }

    let embeddings = read_matrix(
        &dir.join(EMBEDDINGS_FILE),
        EMBEDDINGS_MAGIC,
        manifest.count,
        manifest.dim,
    )?;
    let probabilities = match manifest.num_classes {
        Some(c) => Some(read_matrix(&dir.join(PROBS_FILE), PROBS_MAGIC, manifest.count, c)?),
        None => None,
    };

    let store = EmbeddingStore::new(manifest.items, embeddings, probabilities);
    let violations = validate_store(&store);
    if violations.is_empty() {
        Ok(store)
    } else {
        Err(Error::Invalid(violations))
    }
}

fn read_matrix(path: &Path, magic: &[u8; 4], count: usize, dim: usize) -> Result<Matrix> {
    let bytes = binfmt::read_file(path)?;
    let (h_count, h_dim) = binfmt::parse_header(path, &bytes, magic)?;
    if h_count != count || h_dim != dim {
        return Err(Error::format(
            path,
            format!("header says {h_count}x{h_dim}, manifest says {count}x{dim}"),
        ));
    }
    let expected = h_count
        .checked_mul(h_dim)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::format(path, "header dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "size mismatch: header implies {expected} payload bytes, found {}",
                payload.len()
            ),
        ));
    }
    Matrix::new(h_count, h_dim, binfmt::decode_f32s(payload))
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dissimilarity between two feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Manhattan distance, `Σ|a_i − b_i|`.
    L1,
    /// Squared Euclidean distance, `Σ(a_i − b_i)²`. Ranks identically to L2.
    #[default]
    L2sq,
}

impl Metric {
    /// Distance without the dimension check. Callers guarantee `a.len() == b.len()`.
    #[inline]
    pub fn distance_unchecked(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            Metric::L1 => l1_kernel(a, b),
            Metric::L2sq => l2sq_kernel(a, b),
        }
    }

    pub fn distance(self, a: &[f32], b: &[f32]) -> Result<f64> {
        check_dims(a, b)?;
        Ok(self.distance_unchecked(a, b))
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::L1 => "l1",
            Metric::L2sq => "l2sq",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Metric::L1),
            "l2sq" => Ok(Metric::L2sq),
            other => Err(Error::arg(format!("unknown metric {other:?} (expected l1 or l2sq)"))),
        }
    }
}

fn check_dims(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

pub fn l1_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    Metric::L1.distance(a, b)
}

pub fn l2sq_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    Metric::L2sq.distance(a, b)
}

const LANES: usize = 8;

// Independent f64 accumulators let the loop vectorize without reassociating
// a single sum; the lane order is fixed so results are reproducible.
#[inline]
fn l1_kernel(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += (f64::from(x[l]) - f64::from(y[l])).abs();
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += (f64::from(*x) - f64::from(*y)).abs();
    }
    reduce(acc) + tail
}

#[inline]
fn l2sq_kernel(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            let d = f64::from(x[l]) - f64::from(y[l]);
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        let d = f64::from(*x) - f64::from(*y);
        tail += d * d;
    }
    reduce(acc) + tail
}

#[inline]
fn reduce(acc: [f64; LANES]) -> f64 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

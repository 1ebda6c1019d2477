//! Synthetic stores with planted category clusters and class-probability
//! structure.
//!
//! Category `g` is centred at `inter_separation · e_g`; items are that centre
//! plus isotropic Gaussian noise of scale `intra_sigma`. Each category owns
//! `classes_per_category` "home" classes, and an item's probability row puts
//! most of its mass on its category's home classes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::store::{EmbeddingStore, ItemMeta, Matrix};

/// Probability mass placed on an item's home classes.
pub const HOME_MASS: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_categories: usize,
    pub items_per_category: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub intra_sigma: f64,
    pub inter_separation: f64,
    pub classes_per_category: usize,
    pub seed: u64,
}

/// Centre spacing at which nearest-centre classification is exact with
/// overwhelming probability: `10 · sigma · √dim`.
pub fn separated_distance(sigma: f64, dim: usize) -> f64 {
    10.0 * sigma * (dim as f64).sqrt()
}

impl Default for SynthSpec {
    /// 10 categories × 200 items in 1536 dimensions with 1000 classes.
    fn default() -> Self {
        SynthSpec {
            num_categories: 10,
            items_per_category: 200,
            dim: 1536,
            num_classes: 1000,
            intra_sigma: 1.0,
            inter_separation: separated_distance(1.0, 1536),
            classes_per_category: 5,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn len(&self) -> usize {
        self.num_categories * self.items_per_category
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_categories", self.num_categories),
            ("items_per_category", self.items_per_category),
            ("dim", self.dim),
            ("num_classes", self.num_classes),
            ("classes_per_category", self.classes_per_category),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::arg(format!("{name} must be positive")));
            }
        }
        if !(self.intra_sigma >= 0.0 && self.intra_sigma.is_finite()) {
            return Err(Error::arg("intra_sigma must be finite and non-negative"));
        }
        if !(self.inter_separation > 0.0 && self.inter_separation.is_finite()) {
            return Err(Error::arg("inter_separation must be finite and positive"));
        }
        if self.classes_per_category > self.num_classes {
            return Err(Error::arg(format!(
                "classes_per_category {} exceeds num_classes {}",
                self.classes_per_category, self.num_classes
            )));
        }
        if self.num_categories > self.dim {
            return Err(Error::arg(format!(
                "cannot place {} separated centres on the axes of a {}-dimensional space",
                self.num_categories, self.dim
            )));
        }
        Ok(())
    }

    pub fn category_name(&self, g: usize) -> String {
        let width = (self.num_categories.saturating_sub(1)).to_string().len().max(2);
        format!("cat_{g:0width$}")
    }

    /// Home classes of every category. Disjoint whenever they fit in the
    /// class range, otherwise sampled independently per category.
    pub fn home_classes(&self) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(0);
        let cpc = self.classes_per_category;
        if self.num_categories * cpc <= self.num_classes {
            let mut all: Vec<usize> = (0..self.num_classes).collect();
            all.shuffle(&mut rng);
            all.chunks(cpc).take(self.num_categories).map(<[usize]>::to_vec).collect()
        } else {
            (0..self.num_categories)
                .map(|_| rand::seq::index::sample(&mut rng, self.num_classes, cpc).into_vec())
                .collect()
        }
    }
}

/// Builds the store described by `spec`. Identical specs give bit-identical stores.
pub fn generate(spec: &SynthSpec) -> Result<EmbeddingStore> {
    spec.validate()?;
    let n = spec.len();
    let (d, c) = (spec.dim, spec.num_classes);
    let homes = spec.home_classes();

    let mut embeddings = vec![0.0f32; n * d];
    let mut probs = vec![0.0f32; n * c];
    embeddings
        .par_chunks_mut(d)
        .zip(probs.par_chunks_mut(c))
        .enumerate()
        .for_each(|(id, (emb, prob))| {
            let g = id / spec.items_per_category;
            // stream 0 is reserved for the home-class draw
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(id as u64 + 1);
            fill_embedding(spec, g, &mut rng, emb);
            fill_probabilities(&homes[g], &mut rng, prob);
        });

    let meta = (0..n)
        .map(|id| {
            let g = id / spec.items_per_category;
            let name = spec.category_name(g);
            ItemMeta {
                id,
                path: format!("synth/{name}/{:06}", id % spec.items_per_category),
                category: name,
            }
        })
        .collect();

    Ok(EmbeddingStore::new(
        meta,
        Matrix::new(n, d, embeddings)?,
        Some(Matrix::new(n, c, probs)?),
    ))
}

fn fill_embedding(spec: &SynthSpec, g: usize, rng: &mut ChaCha8Rng, out: &mut [f32]) {
    for (j, v) in out.iter_mut().enumerate() {
        let noise: f64 = rng.sample(StandardNormal);
        let centre = if j == g { spec.inter_separation } else { 0.0 };
        *v = (centre + spec.intra_sigma * noise) as f32;
    }
}

fn fill_probabilities(home: &[usize], rng: &mut ChaCha8Rng, out: &mut [f32]) {
    let mut weights: Vec<f64> = (0..out.len()).map(|_| rng.random::<f64>()).collect();
    let mut is_home = vec![false; out.len()];
    for &h in home {
        is_home[h] = true;
        weights[h] += 0.5;
    }
    let home_total: f64 = home.iter().map(|&h| weights[h]).sum();
    let other_total: f64 = weights.iter().sum::<f64>() - home_total;
    let home_mass = if other_total > 0.0 { HOME_MASS } else { 1.0 };

    let mut row: Vec<f64> = weights
        .iter()
        .zip(&is_home)
        .map(|(&w, &h)| {
            if h {
                home_mass * w / home_total
            } else if other_total > 0.0 {
                (1.0 - home_mass) * w / other_total
            } else {
                0.0
            }
        })
        .collect();
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= sum);
    for (o, p) in out.iter_mut().zip(row) {
        *o = p as f32;
    }
}

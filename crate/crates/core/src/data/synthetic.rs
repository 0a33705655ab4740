use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::{RawDataset, RawRows};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Weights};

/// A random ground-truth network: `W_cd ∝ exp(U(-spread, spread))` scaled to
/// A, and unit `c` belonging to class `c mod K` with equal weight.
pub fn random_ground_truth(config: &ModelConfig, spread: f64, seed: u64) -> Result<Weights> {
    config.validate()?;
    if config.units < config.classes {
        return Err(Error::InvalidConfig(format!(
            "every class needs a unit (C = {}, K = {})",
            config.units, config.classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Array2::from_shape_fn((config.units, config.input_dim), |_| {
        if spread > 0.0 {
            rng.random_range(-spread..spread).exp()
        } else {
            1.0
        }
    });
    let r = Array2::from_shape_fn((config.classes, config.units), |(k, c)| {
        if c % config.classes == k {
            1.0
        } else {
            0.0
        }
    });
    Weights::normalized(w, r, config.total)
}

/// Samples drawn from the generative model together with their latent
/// `(class, unit)` assignments.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub raw: RawDataset,
    pub latent: Vec<(usize, usize)>,
}

/// Draws `n` samples: `k` uniform over classes, `c ~ R_k`, `y_d ~ Poisson(W_cd)`,
/// label `k`.
pub fn generate_synthetic(ground_truth: &Weights, n: usize, seed: u64) -> Result<Synthetic> {
    ground_truth.validate()?;
    let (units, dim, classes) = (
        ground_truth.units(),
        ground_truth.input_dim(),
        ground_truth.classes(),
    );
    let mut unit_dists = Vec::with_capacity(classes);
    for k in 0..classes {
        let dist = WeightedIndex::new(ground_truth.r().row(k).iter().copied())
            .map_err(|e| Error::InvalidWeights(format!("R row {k}: {e}")))?;
        unit_dists.push(dist);
    }
    let mut poissons = Vec::with_capacity(units * dim);
    for &lambda in ground_truth.w().iter() {
        poissons.push(Poisson::new(lambda).map_err(|e| Error::InvalidWeights(e.to_string()))?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for mut row in data.rows_mut() {
        let k = rng.random_range(0..classes);
        let c = unit_dists[k].sample(&mut rng);
        for (d, v) in row.iter_mut().enumerate() {
            *v = poissons[c * dim + d].sample(&mut rng);
        }
        labels.push(k);
        latent.push((k, c));
    }
    Ok(Synthetic {
        raw: RawDataset {
            name: "synthetic".into(),
            dim,
            classes,
            rows: RawRows::Dense(data),
            labels,
        },
        latent,
    })
}

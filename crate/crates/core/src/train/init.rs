use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{normalize_input, ModelConfig, Observations, Weights};

/// Initialization of the first layer. Sampled rows are brought to the total
/// with the input normalization, so their background stays at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WInit {
    /// Unit `c` starts at the mean of labeled class `c mod K` plus
    /// `U(0, 2 sigma)` noise per entry.
    ClassMean,
    /// Every unit starts at the data mean plus `U(0, 2 sigma)` noise.
    GlobalMean,
}

/// Initialization of the second layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RInit {
    /// `R_kc = 1/C`.
    Uniform,
    /// `R_kc = delta_kc`; needs `C == K`.
    Delta,
}

impl FromStr for WInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class_mean" => Ok(WInit::ClassMean),
            "global_mean" => Ok(WInit::GlobalMean),
            other => Err(Error::InvalidConfig(format!("unknown W init {other:?}"))),
        }
    }
}

impl FromStr for RInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "r_uniform" | "uniform" => Ok(RInit::Uniform),
            "r_delta" | "delta" => Ok(RInit::Delta),
            other => Err(Error::InvalidConfig(format!("unknown R init {other:?}"))),
        }
    }
}

impl WInit {
    pub fn as_str(self) -> &'static str {
        match self {
            WInit::ClassMean => "class_mean",
            WInit::GlobalMean => "global_mean",
        }
    }
}

impl RInit {
    pub fn as_str(self) -> &'static str {
        match self {
            RInit::Uniform => "r_uniform",
            RInit::Delta => "r_delta",
        }
    }
}

/// Per-dimension mean and (population) standard deviation of the selected items.
fn moments(obs: &Observations, items: &[usize]) -> (Array1<f64>, Array1<f64>) {
    let dim = obs.dim();
    let mut sum = vec![0.0; dim];
    for &n in items {
        obs.get(n).add_scaled_to(&mut sum, 1.0);
    }
    let count = items.len() as f64;
    let mean = Array1::from(sum) / count;
    let mut var = Array1::zeros(dim);
    for &n in items {
        for (v, (y, m)) in var.iter_mut().zip(obs.get(n).to_dense().iter().zip(&mean)) {
            *v += (y - m) * (y - m);
        }
    }
    let std = (var / count).mapv(f64::sqrt);
    (mean, std)
}

/// Initial weights. `labels` holds the labels visible to the learner; the
/// class-mean scheme uses only those.
pub fn init_weights(
    config: &ModelConfig,
    obs: &Observations,
    labels: &[Option<usize>],
    w_init: WInit,
    r_init: RInit,
    seed: u64,
) -> Result<Weights> {
    config.validate()?;
    let (units, dim, classes) = (config.units, config.input_dim, config.classes);
    if obs.dim() != dim {
        return Err(Error::Shape(format!(
            "data has dimension {}, model expects {dim}",
            obs.dim()
        )));
    }
    if obs.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if r_init == RInit::Delta && units != classes {
        return Err(Error::DeltaInitShapeMismatch { units, classes });
    }
    let centers: Vec<(Array1<f64>, Array1<f64>)> = match w_init {
        WInit::GlobalMean => {
            let all: Vec<usize> = (0..obs.len()).collect();
            vec![moments(obs, &all)]
        }
        WInit::ClassMean => {
            let mut by_class = vec![Vec::new(); classes];
            for (n, l) in labels.iter().enumerate() {
                if let Some(l) = *l {
                    if l >= classes {
                        return Err(Error::LabelOutOfRange { label: l, classes });
                    }
                    by_class[l].push(n);
                }
            }
            let mut out = Vec::with_capacity(classes);
            for (k, items) in by_class.iter().enumerate() {
                if items.is_empty() {
                    return Err(Error::MissingClassLabels(k));
                }
                out.push(moments(obs, items));
            }
            out
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Array2::zeros((units, dim));
    for (c, mut row) in w.rows_mut().into_iter().enumerate() {
        let (mean, std) = &centers[c % centers.len()];
        let foreground: Vec<f64> = mean
            .iter()
            .zip(std)
            .map(|(&m, &s)| {
                let noise = if s > 0.0 {
                    rng.random_range(0.0..2.0 * s)
                } else {
                    0.0
                };
                m + noise - 1.0
            })
            .collect();
        // The noise only adds mass. Normalizing the field like an input keeps
        // its background at 1; scaling the whole row would push the background
        // of every unit below the data's and let one unit capture all samples.
        let field = normalize_input(&foreground, config.total)?;
        row.assign(&Array1::from(field));
    }
    let r = match r_init {
        RInit::Uniform => Array2::from_elem((classes, units), 1.0 / units as f64),
        RInit::Delta => Array2::eye(classes),
    };
    Weights::normalized(w, r, config.total)
}

//! Model parameters, input normalization, posterior inference and the
//! Hebbian learning rules of the network.
//!
//! The network has three layers: normalized inputs `y` (length D), a middle
//! layer `s` over C subclass units and a top layer `t` over K classes. The
//! weights `W` (C x D, rows sum to A) and `R` (K x C, rows sum to 1) are at
//! the same time the parameters of a hierarchical Poisson mixture, so the
//! activations are exact posteriors of that model.

mod inference;
mod learning;
mod obs;

pub(crate) use inference::softmax_in_place;
pub use inference::{
    argmax, bvsb, classify, label_to_prior, log_likelihood, middle_input, middle_posterior,
    sample_log_likelihood, top_posterior, InferenceCache,
};
pub use learning::{
    hebbian_update, minibatch_update, minibatch_update_cached, BatchItem, UpdateSummary,
};
pub use obs::{normalize_input, normalize_sparse, ObsRef, Observations, SparseObs};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Absolute tolerance on `R` row sums.
pub const R_SUM_TOL: f64 = 1e-9;
/// Relative tolerance (times A) on `W` row sums.
pub const W_SUM_RTOL: f64 = 1e-6;

/// Dimensions and normalization constant of one network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Input dimensionality D.
    pub input_dim: usize,
    /// Middle-layer units C.
    pub units: usize,
    /// Classes K.
    pub classes: usize,
    /// Input and weight row mass A.
    pub total: f64,
}

impl ModelConfig {
    pub fn new(input_dim: usize, units: usize, classes: usize, total: f64) -> Result<Self> {
        let cfg = Self {
            input_dim,
            units,
            classes,
            total,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.units == 0 || self.classes == 0 {
            return Err(Error::InvalidConfig(format!(
                "D, C and K must be positive (got D={}, C={}, K={})",
                self.input_dim, self.units, self.classes
            )));
        }
        if !(self.total > self.input_dim as f64) || !self.total.is_finite() {
            return Err(Error::InvalidA {
                total: self.total,
                dim: self.input_dim,
            });
        }
        Ok(())
    }
}

/// Which information enters the middle layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InferenceMode {
    /// Bottom-up evidence plus the top-down term `log(sum_k u_k R_kc)`.
    Recurrent,
    /// Bottom-up evidence only (uniform prior over units).
    Feedforward,
}

impl InferenceMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            InferenceMode::Recurrent => "recurrent",
            InferenceMode::Feedforward => "feedforward",
        }
    }
}

/// Top-down label input `u`: one-hot for labeled samples, uniform otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPrior(pub Vec<f64>);

impl LabelPrior {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Middle and top layer activities for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    pub s: Array1<f64>,
    pub t: Array1<f64>,
}

/// One normalized observation with an optional visible label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub y: Vec<f64>,
    pub label: Option<usize>,
}

/// Network weights.
///
/// `w` is C x D with strictly positive entries and rows summing to A; `r` is
/// K x C, non-negative, rows summing to 1. A row of `r` may be entirely zero
/// only after a manual field assignment left a class without units.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    w: Array2<f64>,
    r: Array2<f64>,
    total: f64,
}

impl Weights {
    /// Builds weights and checks every invariant.
    pub fn from_parts(w: Array2<f64>, r: Array2<f64>, total: f64) -> Result<Self> {
        let weights = Self::from_parts_unchecked(w, r, total)?;
        weights.validate()?;
        Ok(weights)
    }

    /// Builds weights checking only shapes; sums and signs are not verified.
    pub fn from_parts_unchecked(w: Array2<f64>, r: Array2<f64>, total: f64) -> Result<Self> {
        if w.nrows() != r.ncols() {
            return Err(Error::Shape(format!(
                "W has {} rows but R has {} columns",
                w.nrows(),
                r.ncols()
            )));
        }
        if w.nrows() == 0 || w.ncols() == 0 || r.nrows() == 0 {
            return Err(Error::Shape("empty weight matrix".into()));
        }
        Ok(Self { w, r, total })
    }

    /// Rescales both matrices onto their constraint sets and builds weights.
    pub fn normalized(mut w: Array2<f64>, mut r: Array2<f64>, total: f64) -> Result<Self> {
        for mut row in w.rows_mut() {
            let sum: f64 = row.sum();
            row.mapv_inplace(|v| v * total / sum);
        }
        for mut row in r.rows_mut() {
            let sum: f64 = row.sum();
            if sum > 0.0 {
                row.mapv_inplace(|v| v / sum);
            }
        }
        Self::from_parts(w, r, total)
    }

    /// Equal W rows (A/D everywhere) and uniform R (1/C everywhere).
    pub fn uniform(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let w = Array2::from_elem(
            (config.units, config.input_dim),
            config.total / config.input_dim as f64,
        );
        let r = Array2::from_elem((config.classes, config.units), 1.0 / config.units as f64);
        Self::from_parts(w, r, config.total)
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.total;
        for (c, row) in self.w.rows().into_iter().enumerate() {
            for (d, &v) in row.iter().enumerate() {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::NonPositiveWeight {
                        unit: c,
                        dim: d,
                        value: v,
                    });
                }
            }
            let sum: f64 = row.sum();
            if (sum - a).abs() > W_SUM_RTOL * a {
                return Err(Error::InvalidWeights(format!(
                    "row {c} of W sums to {sum}, expected {a}"
                )));
            }
        }
        for (k, row) in self.r.rows().into_iter().enumerate() {
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidWeights(format!(
                    "row {k} of R has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.sum();
            if sum != 0.0 && (sum - 1.0).abs() > R_SUM_TOL {
                return Err(Error::InvalidWeights(format!(
                    "row {k} of R sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn r(&self) -> &Array2<f64> {
        &self.r
    }

    pub(crate) fn w_mut(&mut self) -> &mut Array2<f64> {
        &mut self.w
    }

    pub(crate) fn r_mut(&mut self) -> &mut Array2<f64> {
        &mut self.r
    }

    /// Replaces R, e.g. after a manual field assignment. W is untouched.
    pub fn set_r(&mut self, r: Array2<f64>) -> Result<()> {
        if r.dim() != self.r.dim() {
            return Err(Error::Shape(format!(
                "R must be {:?}, got {:?}",
                self.r.dim(),
                r.dim()
            )));
        }
        self.r = r;
        Ok(())
    }

    pub fn into_parts(self) -> (Array2<f64>, Array2<f64>, f64) {
        (self.w, self.r, self.total)
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn units(&self) -> usize {
        self.w.nrows()
    }

    pub fn classes(&self) -> usize {
        self.r.nrows()
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: self.input_dim(),
            units: self.units(),
            classes: self.classes(),
            total: self.total,
        }
    }

    /// Largest deviation of a W row sum from A and of an R row sum from 1.
    pub fn row_sum_error(&self) -> (f64, f64) {
        let w_err = self
            .w
            .rows()
            .into_iter()
            .map(|row| (row.sum() - self.total).abs())
            .fold(0.0, f64::max);
        let r_err = self
            .r
            .rows()
            .into_iter()
            .map(|row| (row.sum() - 1.0).abs())
            .fold(0.0, f64::max);
        (w_err, r_err)
    }

    /// Column sums of R, `sum_k R_kc`.
    pub fn r_column_sums(&self) -> Array1<f64> {
        self.r.sum_axis(ndarray::Axis(0))
    }
}

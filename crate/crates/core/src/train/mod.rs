//! Online training of the four network variants.

mod checkpoint;
mod init;
mod stopping;
mod trainer;

pub use checkpoint::{restore, save, Checkpoint, FORMAT_VERSION};
pub use init::{init_weights, RInit, WInit};
pub use stopping::{stopping_monitor, Decision};
pub use trainer::{train, Control, EpochStats, StopReason, TrainReport, Trainer};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::InferenceMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Ff,
    R,
    FfPlus,
    RPlus,
}

impl Variant {
    pub fn mode(self) -> InferenceMode {
        match self {
            Variant::Ff | Variant::FfPlus => InferenceMode::Feedforward,
            Variant::R | Variant::RPlus => InferenceMode::Recurrent,
        }
    }

    pub fn self_labeling(self) -> bool {
        matches!(self, Variant::FfPlus | Variant::RPlus)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Ff => "ff",
            Variant::R => "r",
            Variant::FfPlus => "ff+",
            Variant::RPlus => "r+",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ff" => Ok(Variant::Ff),
            "r" => Ok(Variant::R),
            "ff+" | "ff_plus" => Ok(Variant::FfPlus),
            "r+" | "r_plus" => Ok(Variant::RPlus),
            other => Err(Error::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    /// `lambda_W` in `eps_W = lambda_W * C / N`.
    pub eps_w_mult: f64,
    /// `lambda_R` in `eps_R = lambda_R * K / L` (or `K / N` when the top
    /// layer also learns from unlabeled data).
    pub eps_r_mult: f64,
    pub batch_size: usize,
    /// BvSB threshold for self-labels (plus variants only).
    pub theta: f64,
    pub epochs: usize,
    pub seed: u64,
    pub early_stop: bool,
    /// Moving-average window of the stopping monitor.
    pub window: usize,
    pub w_init: WInit,
    pub r_init: RInit,
    /// Compute the training-set likelihood after every epoch. Implied by
    /// `early_stop`.
    pub track_likelihood: bool,
    /// Train the top layer on unlabeled items with a uniform `t = 1/K`.
    pub uniform_top: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Ff,
            eps_w_mult: 0.2,
            eps_r_mult: 0.2,
            batch_size: 1,
            theta: 0.6,
            epochs: 100,
            seed: 0,
            early_stop: false,
            window: 20,
            w_init: WInit::GlobalMean,
            r_init: RInit::Uniform,
            track_likelihood: false,
            uniform_top: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidConfig(format!(
                "theta must lie in [0, 1], got {}",
                self.theta
            )));
        }
        if !(self.eps_w_mult >= 0.0) || !(self.eps_r_mult >= 0.0) {
            return Err(Error::InvalidConfig(
                "learning-rate multipliers must be non-negative".into(),
            ));
        }
        if self.early_stop && self.window < 2 {
            return Err(Error::InvalidConfig(
                "stopping window must be at least 2".into(),
            ));
        }
        Ok(())
    }

    /// Whether the top layer learns from unlabeled items.
    pub fn r_sees_unlabeled(&self) -> bool {
        self.variant.self_labeling() || self.uniform_top
    }
}

/// Learning rates scaled by the average activation per unit:
/// `eps_W = lambda_W * C / N`, `eps_R = lambda_R * K / L` (or `K / N` when the
/// top layer also learns from unlabeled data).
pub fn effective_rates(
    config: &TrainConfig,
    units: usize,
    classes: usize,
    n: usize,
    labeled: usize,
) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let eps_w = config.eps_w_mult * units as f64 / n as f64;
    let eps_r = if config.eps_r_mult == 0.0 {
        0.0
    } else if config.r_sees_unlabeled() {
        config.eps_r_mult * classes as f64 / n as f64
    } else if labeled == 0 {
        return Err(Error::NoLabels);
    } else {
        config.eps_r_mult * classes as f64 / labeled as f64
    };
    Ok((eps_w, eps_r))
}

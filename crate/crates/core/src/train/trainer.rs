use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{effective_rates, init_weights, stopping_monitor, Decision, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{assign_field_labels, AssignMode};
use crate::model::{
    argmax, bvsb, minibatch_update_cached, softmax_in_place, BatchItem, InferenceCache,
    ModelConfig, Observations, Weights,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Completed,
    LikelihoodDrop,
    UserAbort,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Completed => "completed",
            StopReason::LikelihoodDrop => "likelihood_drop",
            StopReason::UserAbort => "user_abort",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StopReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "completed" => Ok(StopReason::Completed),
            "likelihood_drop" => Ok(StopReason::LikelihoodDrop),
            "user_abort" => Ok(StopReason::UserAbort),
            other => Err(Error::InvalidConfig(format!(
                "unknown stop reason {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based index of the finished epoch.
    pub epoch: usize,
    /// Training-set log-likelihood per sample, if tracked.
    pub loglik: Option<f64>,
    pub self_labels: usize,
    pub eps_w: f64,
    pub eps_r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub weights: Weights,
    pub stop_epoch: usize,
    pub stop_reason: StopReason,
}

/// Returned by the epoch hook of [`Trainer::run`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Online trainer owning one weight state.
///
/// Each epoch visits the data in a fresh permutation drawn from
/// `(seed, epoch)`, so a run resumed from a checkpoint taken at an epoch
/// boundary continues exactly like an uninterrupted one.
pub struct Trainer<'a> {
    obs: &'a Observations,
    labels: Vec<Option<usize>>,
    config: TrainConfig,
    weights: Weights,
    cache: InferenceCache,
    gamma: Option<Vec<f64>>,
    eps_w: f64,
    eps_r: f64,
    history: Vec<EpochStats>,
}

impl<'a> Trainer<'a> {
    /// Initializes the weights according to `config` and prepares training.
    /// `labels[n]` is the label visible to the learner, `None` if unlabeled.
    pub fn new(
        obs: &'a Observations,
        labels: Vec<Option<usize>>,
        model: &ModelConfig,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let weights = init_weights(
            model,
            obs,
            &labels,
            config.w_init,
            config.r_init,
            config.seed,
        )?;
        Self::resume(obs, labels, config, weights, Vec::new())
    }

    /// Continues from given weights after `history.len()` finished epochs.
    pub fn resume(
        obs: &'a Observations,
        labels: Vec<Option<usize>>,
        config: TrainConfig,
        weights: Weights,
        history: Vec<EpochStats>,
    ) -> Result<Self> {
        config.validate()?;
        weights.validate()?;
        if labels.len() != obs.len() {
            return Err(Error::Shape(format!(
                "{} samples but {} label entries",
                obs.len(),
                labels.len()
            )));
        }
        if obs.dim() != weights.input_dim() {
            return Err(Error::Shape(format!(
                "data has dimension {}, weights expect {}",
                obs.dim(),
                weights.input_dim()
            )));
        }
        let classes = weights.classes();
        if let Some(l) = labels.iter().flatten().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label: *l, classes });
        }
        let labeled = labels.iter().filter(|l| l.is_some()).count();
        let (eps_w, eps_r) =
            effective_rates(&config, weights.units(), classes, obs.len(), labeled)?;
        let cache = InferenceCache::new(&weights)?;
        Ok(Self {
            obs,
            labels,
            config,
            weights,
            cache,
            gamma: None,
            eps_w,
            eps_r,
            history,
        })
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn cache(&self) -> &InferenceCache {
        &self.cache
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Number of finished epochs.
    pub fn epoch(&self) -> usize {
        self.history.len()
    }

    pub fn history(&self) -> &[EpochStats] {
        &self.history
    }

    pub fn rates(&self) -> (f64, f64) {
        (self.eps_w, self.eps_r)
    }

    /// Replaces the second layer by a field-label assignment. Only call
    /// between epochs.
    pub fn assign_fields(
        &mut self,
        assignments: &BTreeMap<usize, usize>,
        mode: AssignMode,
    ) -> Result<()> {
        self.weights = assign_field_labels(&self.weights, assignments, mode)?;
        self.cache.refresh_top(&self.weights);
        Ok(())
    }

    /// Switches the learning configuration between epochs, e.g. from
    /// unsupervised layer-1 training to self-labeling.
    pub fn reconfigure(&mut self, config: TrainConfig) -> Result<()> {
        config.validate()?;
        let labeled = self.labels.iter().filter(|l| l.is_some()).count();
        let (eps_w, eps_r) = effective_rates(
            &config,
            self.weights.units(),
            self.weights.classes(),
            self.obs.len(),
            labeled,
        )?;
        self.config = config;
        self.eps_w = eps_w;
        self.eps_r = eps_r;
        Ok(())
    }

    /// Training-set log-likelihood per sample under the current weights.
    pub fn loglik_per_sample(&mut self) -> Result<f64> {
        let obs = self.obs;
        let gamma = self
            .gamma
            .get_or_insert_with(|| obs.iter().map(|y| y.log_gamma_sum()).collect());
        let ll = self.cache.log_likelihood(obs, &self.labels, gamma)?;
        Ok(ll / obs.len() as f64)
    }

    /// One pass over the data.
    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        let epoch = self.history.len();
        let mut order: Vec<usize> = (0..self.obs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);

        let mode = self.config.variant.mode();
        let classes = self.weights.classes();
        let self_labeling = self.config.variant.self_labeling();
        let train_r = self.eps_r > 0.0;
        let mut self_labels = 0;

        for batch in order.chunks(self.config.batch_size) {
            let mut s = self.cache.bottom_up_batch(self.obs, batch);
            let mut t = Array2::<f64>::zeros((batch.len(), classes));
            let mut update_r = vec![false; batch.len()];
            for (i, &n) in batch.iter().enumerate() {
                let label = self.labels[n];
                let mut s_row = s.row_mut(i);
                let s_slice = s_row.as_slice_mut().expect("contiguous");
                self.cache.add_top_down(s_slice, label, mode);
                softmax_in_place(s_slice)?;
                if !train_r {
                    continue;
                }
                let mut t_row = t.row_mut(i);
                match label {
                    Some(l) => {
                        t_row[l] = 1.0;
                        update_r[i] = true;
                    }
                    None if self_labeling => {
                        let post = self.cache.top(s_slice, None)?;
                        let post = post.as_slice().expect("contiguous");
                        if bvsb(post)? > self.config.theta {
                            t_row[argmax(post)] = 1.0;
                            update_r[i] = true;
                            self_labels += 1;
                        }
                    }
                    None if self.config.uniform_top => {
                        t_row.fill(1.0 / classes as f64);
                        update_r[i] = true;
                    }
                    None => {}
                }
            }
            let items: Vec<BatchItem> = batch
                .iter()
                .enumerate()
                .map(|(i, &n)| BatchItem {
                    s: s.row(i).to_slice().expect("contiguous"),
                    t: t.row(i).to_slice().expect("contiguous"),
                    y: self.obs.get(n),
                    update_r: update_r[i],
                })
                .collect();
            minibatch_update_cached(
                &mut self.weights,
                &mut self.cache,
                &items,
                self.eps_w,
                self.eps_r,
            )?;
        }
        // drop the round-off the incremental log updates accumulated
        let all: Vec<usize> = (0..self.weights.units()).collect();
        self.cache.refresh_rows(&self.weights, &all)?;

        let loglik = if self.config.track_likelihood || self.config.early_stop {
            Some(self.loglik_per_sample()?)
        } else {
            None
        };
        let stats = EpochStats {
            epoch: epoch + 1,
            loglik,
            self_labels,
            eps_w: self.eps_w,
            eps_r: self.eps_r,
        };
        log::debug!(
            "epoch {} loglik {:?} self-labels {}",
            stats.epoch,
            stats.loglik,
            stats.self_labels
        );
        self.history.push(stats.clone());
        Ok(stats)
    }

    fn stop_requested(&self) -> bool {
        if !self.config.early_stop {
            return false;
        }
        let lls: Vec<f64> = self.history.iter().filter_map(|e| e.loglik).collect();
        stopping_monitor(&lls, self.config.window) == Decision::Stop
    }

    /// Trains until the epoch budget is spent, the likelihood drops or the
    /// hook asks to stop. The hook runs after every epoch and may pause,
    /// inspect or relabel the network.
    pub fn run(mut self, mut hook: impl FnMut(&mut Self) -> Control) -> Result<TrainReport> {
        let mut reason = StopReason::Completed;
        while self.history.len() < self.config.epochs {
            self.run_epoch()?;
            if self.stop_requested() {
                reason = StopReason::LikelihoodDrop;
                break;
            }
            if hook(&mut self) == Control::Stop {
                reason = StopReason::UserAbort;
                break;
            }
        }
        Ok(self.into_report(reason))
    }

    pub fn into_report(self, stop_reason: StopReason) -> TrainReport {
        TrainReport {
            stop_epoch: self.history.len(),
            history: self.history,
            weights: self.weights,
            stop_reason,
        }
    }
}

/// Trains a freshly initialized network.
pub fn train(
    obs: &Observations,
    labels: Vec<Option<usize>>,
    model: &ModelConfig,
    config: TrainConfig,
) -> Result<TrainReport> {
    Trainer::new(obs, labels, model, config)?.run(|_| Control::Continue)
}

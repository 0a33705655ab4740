//! Batch EM for the hierarchical Poisson mixture.
//!
//! Written independently of the network code in [`crate::model`]: posteriors
//! are obtained by enumerating the joint `p(y, c, l)` term by term, so the
//! two implementations can check each other.

use ndarray::Array2;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{self, InferenceMode, Sample, Weights};

/// Which samples train the top layer in the M-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RUpdate {
    /// Every sample, with `p(k|c)` from the current `R` for unlabeled ones.
    All,
    /// Labeled samples only.
    LabeledOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    pub max_iters: usize,
    /// Stop when the likelihood changes by less than `tol * N`.
    pub tol: f64,
    pub r_update: RUpdate,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            tol: 1e-7,
            r_update: RUpdate::All,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmState {
    pub weights: Weights,
    pub iteration: usize,
    /// Likelihood of the initial weights followed by one entry per iteration.
    pub loglik_history: Vec<f64>,
    /// Units that received no responsibility in some iteration.
    pub empty_units: Vec<usize>,
}

/// Result of one M-step.
#[derive(Debug, Clone)]
pub struct MStep {
    pub weights: Weights,
    /// Units with zero total responsibility; their `W` row and `R` column
    /// were carried over from the old weights.
    pub empty_units: Vec<usize>,
}

/// `ln p(y|c) = sum_d (y_d ln W_cd - W_cd - ln Gamma(y_d + 1))`.
fn log_poisson(y: &[f64], w_row: ndarray::ArrayView1<f64>) -> f64 {
    let mut acc = 0.0;
    for (&yd, &wcd) in y.iter().zip(w_row.iter()) {
        acc += yd * wcd.ln() - wcd - ln_gamma(yd + 1.0);
    }
    acc
}

/// `ln p(c, l)` up to the constant `ln p(k)`: `ln R_lc` for a labeled
/// sample and `ln(sum_k R_kc / K)` otherwise.
fn log_unit_prior(c: usize, label: Option<usize>, r: &Array2<f64>) -> f64 {
    let mass = match label {
        Some(l) => r[[l, c]],
        None => r.column(c).sum() / r.nrows() as f64,
    };
    if mass > 0.0 {
        mass.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn check_sample(y: &[f64], label: Option<usize>, weights: &Weights) -> Result<()> {
    if y.len() != weights.input_dim() {
        return Err(Error::Shape(format!(
            "sample has {} entries, weights expect {}",
            y.len(),
            weights.input_dim()
        )));
    }
    if let Some(l) = label {
        if l >= weights.classes() {
            return Err(Error::LabelOutOfRange {
                label: l,
                classes: weights.classes(),
            });
        }
    }
    Ok(())
}

/// Log joint `ln p(y, c, l)` for every unit (without the constant `ln 1/K` of
/// the class prior for labeled samples).
fn log_joint(y: &[f64], label: Option<usize>, weights: &Weights) -> Vec<f64> {
    let w = weights.w();
    let r = weights.r();
    (0..weights.units())
        .map(|c| log_poisson(y, w.row(c)) + log_unit_prior(c, label, r))
        .collect()
}

/// Posterior `p(c|y, l)` (or `p(c|y)` for an unlabeled sample) by Bayes' rule.
pub fn e_step_c(y: &[f64], label: Option<usize>, weights: &Weights) -> Result<Vec<f64>> {
    check_sample(y, label, weights)?;
    let joint = log_joint(y, label, weights);
    let max = joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllUnitsDead);
    }
    if max.is_nan() {
        return Err(Error::InvalidInput("NaN in joint probability".into()));
    }
    let mut post: Vec<f64> = joint.iter().map(|&j| (j - max).exp()).collect();
    let norm: f64 = post.iter().sum();
    post.iter_mut().for_each(|p| *p /= norm);
    Ok(post)
}

/// `p(k|c, l)`: the label's one-hot vector, or `R_kc / sum_k' R_k'c`.
pub fn e_step_k(c: usize, label: Option<usize>, weights: &Weights) -> Result<Vec<f64>> {
    let r = weights.r();
    let classes = r.nrows();
    if c >= r.ncols() {
        return Err(Error::UnitOutOfRange {
            unit: c,
            units: r.ncols(),
        });
    }
    match label {
        Some(l) if l >= classes => Err(Error::LabelOutOfRange { label: l, classes }),
        Some(l) => {
            let mut p = vec![0.0; classes];
            p[l] = 1.0;
            Ok(p)
        }
        None => {
            let mass = r.column(c).sum();
            if mass <= 0.0 {
                return Err(Error::OrphanColumn(c));
            }
            Ok(r.column(c).iter().map(|&v| v / mass).collect())
        }
    }
}

/// Data log-likelihood, evaluated directly with a per-sample log-sum-exp.
pub fn log_likelihood(samples: &[Sample], weights: &Weights) -> Result<f64> {
    let ln_k = (weights.classes() as f64).ln();
    let mut total = 0.0;
    for sample in samples {
        check_sample(&sample.y, sample.label, weights)?;
        let joint = log_joint(&sample.y, sample.label, weights);
        let max = joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut ll = max + joint.iter().map(|&j| (j - max).exp()).sum::<f64>().ln();
        if sample.label.is_some() {
            ll -= ln_k;
        }
        total += ll;
    }
    Ok(total)
}

/// Closed-form parameter update from the posteriors under `old`.
pub fn m_step(samples: &[Sample], old: &Weights, r_update: RUpdate) -> Result<MStep> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let (units, dim, classes) = (old.units(), old.input_dim(), old.classes());
    let total = old.total();
    let mut w_acc = Array2::<f64>::zeros((units, dim));
    let mut r_acc = Array2::<f64>::zeros((classes, units));
    let mut resp = vec![0.0; units];
    for sample in samples {
        let post_c = e_step_c(&sample.y, sample.label, old)?;
        let trains_r = sample.label.is_some() || r_update == RUpdate::All;
        for (c, &pc) in post_c.iter().enumerate() {
            if pc == 0.0 {
                continue;
            }
            resp[c] += pc;
            for (acc, &yd) in w_acc.row_mut(c).iter_mut().zip(&sample.y) {
                *acc += pc * yd;
            }
            if trains_r {
                let post_k = e_step_k(c, sample.label, old)?;
                for (k, &pk) in post_k.iter().enumerate() {
                    r_acc[[k, c]] += pk * pc;
                }
            }
        }
    }

    let empty_units: Vec<usize> = (0..units).filter(|&c| resp[c] == 0.0).collect();
    for &c in &empty_units {
        log::warn!("unit {c} received no responsibility; keeping its old parameters");
    }

    let mut w = Array2::zeros((units, dim));
    for c in 0..units {
        if resp[c] == 0.0 {
            w.row_mut(c).assign(&old.w().row(c));
            continue;
        }
        let mass: f64 = w_acc.row(c).sum();
        for d in 0..dim {
            w[[c, d]] = total * w_acc[[c, d]] / mass;
        }
    }

    let mut r = Array2::zeros((classes, units));
    for k in 0..classes {
        let kept: f64 = empty_units.iter().map(|&c| old.r()[[k, c]]).sum();
        let mass: f64 = r_acc.row(k).sum();
        if mass == 0.0 {
            // no evidence for this class: keep the old row
            r.row_mut(k).assign(&old.r().row(k));
            continue;
        }
        for c in 0..units {
            r[[k, c]] = if resp[c] == 0.0 {
                old.r()[[k, c]]
            } else {
                (1.0 - kept) * r_acc[[k, c]] / mass
            };
        }
    }
    let weights = Weights::from_parts(w, r, total)?;
    Ok(MStep {
        weights,
        empty_units,
    })
}

/// Iterates E- and M-steps until `max_iters` or `|dL| < tol * N`.
pub fn run_em(samples: &[Sample], init: Weights, opts: &EmOptions) -> Result<EmState> {
    let n = samples.len() as f64;
    let mut state = EmState {
        loglik_history: vec![log_likelihood(samples, &init)?],
        weights: init,
        iteration: 0,
        empty_units: Vec::new(),
    };
    while state.iteration < opts.max_iters {
        let step = m_step(samples, &state.weights, opts.r_update)?;
        for c in step.empty_units {
            if !state.empty_units.contains(&c) {
                state.empty_units.push(c);
            }
        }
        state.weights = step.weights;
        state.iteration += 1;
        let ll = log_likelihood(samples, &state.weights)?;
        let prev = *state.loglik_history.last().expect("non-empty");
        state.loglik_history.push(ll);
        if (ll - prev).abs() < opts.tol * n {
            break;
        }
    }
    Ok(state)
}

/// Options for [`fixed_point_residual`].
#[derive(Debug, Clone, Copy)]
pub struct ResidualOptions {
    /// Inference mode of the network whose activations are used.
    pub mode: InferenceMode,
    pub r_update: RUpdate,
}

/// Max-norm distance between `weights` and one M-step-style recomputation
/// from the network activations: `W_c = A * sum_n s_c y / sum_n s_c |y|` and
/// `R_k ∝ sum_n t_k s`. Returns `(res_w, res_r)`.
pub fn fixed_point_residual(
    weights: &Weights,
    samples: &[Sample],
    opts: &ResidualOptions,
) -> Result<(f64, f64)> {
    let (units, dim, classes) = (weights.units(), weights.input_dim(), weights.classes());
    let mut w_acc = Array2::<f64>::zeros((units, dim));
    let mut r_acc = Array2::<f64>::zeros((classes, units));
    for sample in samples {
        let prior = model::label_to_prior(sample.label, classes)?;
        let input = model::middle_input(&sample.y, &prior, weights, opts.mode)?;
        let s = model::middle_posterior(input.as_slice().expect("contiguous"))?;
        let s = s.as_slice().expect("contiguous");
        for (c, &sc) in s.iter().enumerate() {
            if sc == 0.0 {
                continue;
            }
            for (acc, &yd) in w_acc.row_mut(c).iter_mut().zip(&sample.y) {
                *acc += sc * yd;
            }
        }
        if sample.label.is_some() || opts.r_update == RUpdate::All {
            let t = model::top_posterior(s, sample.label, weights.r())?;
            for (k, &tk) in t.iter().enumerate() {
                for (c, &sc) in s.iter().enumerate() {
                    r_acc[[k, c]] += tk * sc;
                }
            }
        }
    }
    let mut res_w: f64 = 0.0;
    for c in 0..units {
        let mass: f64 = w_acc.row(c).sum();
        if mass == 0.0 {
            continue;
        }
        for d in 0..dim {
            let target = weights.total() * w_acc[[c, d]] / mass;
            res_w = res_w.max((target - weights.w()[[c, d]]).abs());
        }
    }
    let mut res_r: f64 = 0.0;
    for k in 0..classes {
        let mass: f64 = r_acc.row(k).sum();
        if mass == 0.0 {
            continue;
        }
        for c in 0..units {
            let target = r_acc[[k, c]] / mass;
            res_r = res_r.max((target - weights.r()[[k, c]]).abs());
        }
    }
    Ok((res_w, res_r))
}

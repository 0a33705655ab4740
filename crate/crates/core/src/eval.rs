//! Test error, repeated-run statistics, field statistics and field labeling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::model::{argmax, InferenceCache, InferenceMode, Observations, Weights};

/// Percentage of misclassified samples under MAP classification.
pub fn test_error(
    weights: &Weights,
    obs: &Observations,
    labels: &[usize],
    mode: InferenceMode,
) -> Result<f64> {
    let cache = InferenceCache::new(weights)?;
    test_error_cached(&cache, obs, labels, mode)
}

/// [`test_error`] with a prepared inference cache.
pub fn test_error_cached(
    cache: &InferenceCache,
    obs: &Observations,
    labels: &[usize],
    mode: InferenceMode,
) -> Result<f64> {
    if labels.len() != obs.len() {
        return Err(Error::Shape(format!(
            "{} samples but {} labels",
            obs.len(),
            labels.len()
        )));
    }
    if obs.is_empty() {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    let pred = cache.predict(obs, mode)?;
    let wrong = pred.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(100.0 * wrong as f64 / obs.len() as f64)
}

/// Summary of test errors over independent runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub errors: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator); 0 for a single run.
    pub std: f64,
    /// `std / sqrt(n)`; 0 for a single run, see `sem_defined`.
    pub sem: f64,
    pub sem_defined: bool,
    pub min: f64,
    pub max: f64,
}

impl RunStats {
    pub fn from_errors(errors: Vec<f64>) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::InvalidInput("no runs".into()));
        }
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let (std, sem_defined) = if errors.len() > 1 {
            let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
            (var.sqrt(), true)
        } else {
            (0.0, false)
        };
        let min = errors.iter().copied().fold(f64::INFINITY, f64::min);
        let max = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            sem: std / n.sqrt(),
            errors,
            mean,
            std,
            sem_defined,
            min,
            max,
        })
    }

    /// `mean ± sem` with two decimals, as in result tables.
    pub fn summary(&self) -> String {
        format!("{:.2} ± {:.2} %", self.mean, self.sem)
    }
}

/// Runs `run(seed)` for seeds `base_seed..base_seed + n_runs` and collects
/// the returned test errors.
pub fn repeated_runs(
    n_runs: usize,
    base_seed: u64,
    mut run: impl FnMut(u64) -> Result<f64>,
) -> Result<RunStats> {
    if n_runs == 0 {
        return Err(Error::InvalidInput("n_runs must be at least 1".into()));
    }
    let errors = (0..n_runs as u64)
        .map(|i| run(base_seed + i))
        .collect::<Result<Vec<_>>>()?;
    RunStats::from_errors(errors)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldBucket {
    /// `p_c N < 0.5`
    Forgotten,
    /// `0.5 <= p_c N < 1.5`
    SinglePattern,
    Regular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldStats {
    /// `p_c = (1/K) sum_k R_kc`.
    pub prior: Vec<f64>,
    /// `p_c N`.
    pub expected_count: Vec<f64>,
    /// `argmax_k R_kc`.
    pub class: Vec<usize>,
    pub bucket: Vec<FieldBucket>,
}

impl FieldStats {
    pub fn count(&self, bucket: FieldBucket) -> usize {
        self.bucket.iter().filter(|&&b| b == bucket).count()
    }

    /// Line-oriented summary table.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let units = self.prior.len();
        writeln!(out, "fields            {units}").unwrap();
        for (name, b) in [
            ("forgotten", FieldBucket::Forgotten),
            ("single_pattern", FieldBucket::SinglePattern),
            ("regular", FieldBucket::Regular),
        ] {
            let n = self.count(b);
            writeln!(
                out,
                "{name:<17} {n} ({:.2} %)",
                100.0 * n as f64 / units.max(1) as f64
            )
            .unwrap();
        }
        out
    }
}

/// Prior mass of every unit under `R` and its pruning bucket for a training
/// set of `n` samples.
pub fn field_stats(weights: &Weights, n: usize) -> FieldStats {
    let r = weights.r();
    let classes = r.nrows() as f64;
    let prior: Vec<f64> = r.sum_axis(Axis(0)).iter().map(|&m| m / classes).collect();
    let expected_count: Vec<f64> = prior.iter().map(|p| p * n as f64).collect();
    let class = r
        .columns()
        .into_iter()
        .map(|col| argmax(&col.to_vec()))
        .collect();
    let bucket = expected_count
        .iter()
        .map(|&e| {
            if e < 0.5 {
                FieldBucket::Forgotten
            } else if e < 1.5 {
                FieldBucket::SinglePattern
            } else {
                FieldBucket::Regular
            }
        })
        .collect();
    FieldStats {
        prior,
        expected_count,
        class,
        bucket,
    }
}

/// Removes units with `p_c N < threshold`. Returns the reduced network and
/// the kept unit indices. `R` rows are renormalized over the kept units.
pub fn prune(weights: &Weights, n: usize, threshold: f64) -> Result<(Weights, Vec<usize>)> {
    let stats = field_stats(weights, n);
    let keep: Vec<usize> = (0..weights.units())
        .filter(|&c| stats.expected_count[c] >= threshold)
        .collect();
    if keep.is_empty() {
        return Err(Error::InvalidInput(format!(
            "pruning at {threshold} removes every unit"
        )));
    }
    let w = weights.w().select(Axis(0), &keep);
    let r = weights.r().select(Axis(1), &keep);
    Ok((Weights::normalized(w, r, weights.total())?, keep))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignMode {
    /// `R_kc = delta(l(c), k) / sum_c' delta(l(c'), k)`; every unit must be
    /// assigned.
    Flat,
    /// `R_kc ∝ delta(l(c), k) sum_k' R_k'c` on assigned columns, keeping each
    /// unit's learned prior mass; unassigned columns keep their values.
    Weighted,
}

impl AssignMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AssignMode::Flat => "flat",
            AssignMode::Weighted => "weighted",
        }
    }
}

impl FromStr for AssignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(AssignMode::Flat),
            "weighted" => Ok(AssignMode::Weighted),
            other => Err(Error::InvalidConfig(format!(
                "unknown assign mode {other:?}"
            ))),
        }
    }
}

fn check_assignments(weights: &Weights, assignments: &BTreeMap<usize, usize>) -> Result<()> {
    let (units, classes) = (weights.units(), weights.classes());
    for (&c, &k) in assignments {
        if c >= units {
            return Err(Error::UnitOutOfRange { unit: c, units });
        }
        if k >= classes {
            return Err(Error::LabelOutOfRange { label: k, classes });
        }
    }
    Ok(())
}

/// `R` of a weighted assignment before the rows are renormalized: assigned
/// column `c` holds its old mass `sum_k R_kc` at row `l(c)` and zero elsewhere.
pub fn weighted_assignment_raw(
    weights: &Weights,
    assignments: &BTreeMap<usize, usize>,
) -> Result<Array2<f64>> {
    check_assignments(weights, assignments)?;
    let mut r = weights.r().clone();
    for (&c, &l) in assignments {
        let mass = r.column(c).sum();
        r.column_mut(c).fill(0.0);
        r[[l, c]] = mass;
    }
    Ok(r)
}

/// Sets `p(k|c)` of the assigned units to their labels. `W` is untouched.
pub fn assign_field_labels(
    weights: &Weights,
    assignments: &BTreeMap<usize, usize>,
    mode: AssignMode,
) -> Result<Weights> {
    check_assignments(weights, assignments)?;
    let (units, classes) = (weights.units(), weights.classes());
    let r = match mode {
        AssignMode::Flat => {
            if let Some(c) = (0..units).find(|c| !assignments.contains_key(c)) {
                return Err(Error::UncoveredUnit(c));
            }
            let mut r = Array2::zeros((classes, units));
            for (&c, &l) in assignments {
                r[[l, c]] = 1.0;
            }
            r
        }
        AssignMode::Weighted => weighted_assignment_raw(weights, assignments)?,
    };
    Weights::normalized(weights.w().clone(), r, weights.total())
}

/// Automated stand-in for a human labeler: each unit gets the majority class
/// among the `top` training samples with the highest responsibility for it.
pub fn proxy_field_labels(
    weights: &Weights,
    obs: &Observations,
    labels: &[usize],
    classes: usize,
    top: usize,
) -> Result<BTreeMap<usize, usize>> {
    let cache = InferenceCache::new(weights)?;
    let units = weights.units();
    // per unit: (responsibility, sample) pairs, best first
    let mut best: Vec<Vec<(f64, usize)>> = vec![Vec::new(); units];
    let all: Vec<usize> = (0..obs.len()).collect();
    for chunk in all.chunks(256) {
        let mut inputs = cache.bottom_up_batch(obs, chunk);
        for (i, &n) in chunk.iter().enumerate() {
            let mut row = inputs.row_mut(i);
            let s = row.as_slice_mut().expect("contiguous");
            crate::model::softmax_in_place(s)?;
            for (c, &sc) in s.iter().enumerate() {
                let list = &mut best[c];
                if list.len() < top || sc > list.last().map_or(0.0, |p| p.0) {
                    let pos = list.partition_point(|p| p.0 >= sc);
                    list.insert(pos, (sc, n));
                    list.truncate(top);
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    for (c, list) in best.iter().enumerate() {
        let mut votes = vec![0.0; classes];
        for &(_, n) in list {
            votes[labels[n]] += 1.0;
        }
        out.insert(c, argmax(&votes));
    }
    Ok(out)
}

/// Self-describing `key=value` report.
pub fn key_value_report(pairs: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        writeln!(out, "{k}={v}").unwrap();
    }
    out
}

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// Maps a raw non-negative vector onto the input simplex scaled to `total`:
/// `y_d = (A - D) * raw_d / sum(raw) + 1`.
pub fn normalize_input(raw: &[f64], total: f64) -> Result<Vec<f64>> {
    let dim = raw.len();
    check_total(total, dim)?;
    let mass = checked_mass(raw.iter().copied())?;
    let scale = (total - dim as f64) / mass;
    Ok(raw.iter().map(|&v| scale * v + 1.0).collect())
}

/// Sparse counterpart of [`normalize_input`]: stores only the offsets above
/// the constant background value 1.
pub fn normalize_sparse(
    indices: &[u32],
    counts: &[f64],
    dim: usize,
    total: f64,
) -> Result<SparseObs> {
    if indices.len() != counts.len() {
        return Err(Error::Shape(format!(
            "{} indices but {} values",
            indices.len(),
            counts.len()
        )));
    }
    check_total(total, dim)?;
    if let Some(&i) = indices.iter().find(|&&i| i as usize >= dim) {
        return Err(Error::InvalidInput(format!(
            "index {i} out of range for dimension {dim}"
        )));
    }
    let mass = checked_mass(counts.iter().copied())?;
    let scale = (total - dim as f64) / mass;
    let mut pairs: Vec<(u32, f64)> = indices
        .iter()
        .zip(counts)
        .filter(|(_, &v)| v != 0.0)
        .map(|(&i, &v)| (i, scale * v))
        .collect();
    pairs.sort_by_key(|p| p.0);
    pairs.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 += b.1;
            true
        } else {
            false
        }
    });
    Ok(SparseObs {
        indices: pairs.iter().map(|p| p.0).collect(),
        values: pairs.iter().map(|p| p.1).collect(),
    })
}

fn check_total(total: f64, dim: usize) -> Result<()> {
    if !(total > dim as f64) {
        return Err(Error::InvalidA { total, dim });
    }
    Ok(())
}

fn checked_mass(values: impl Iterator<Item = f64>) -> Result<f64> {
    let mut mass = 0.0;
    for v in values {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidInput(format!(
                "raw entries must be finite and non-negative, got {v}"
            )));
        }
        mass += v;
    }
    if mass == 0.0 {
        return Err(Error::ZeroMassInput);
    }
    Ok(mass)
}

/// A normalized observation stored as offsets over a background of 1.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseObs {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

/// Borrowed view of one normalized observation.
#[derive(Debug, Clone, Copy)]
pub enum ObsRef<'a> {
    Dense(ArrayView1<'a, f64>),
    Sparse { obs: &'a SparseObs, dim: usize },
}

impl<'a> ObsRef<'a> {
    pub fn dim(&self) -> usize {
        match self {
            ObsRef::Dense(y) => y.len(),
            ObsRef::Sparse { dim, .. } => *dim,
        }
    }

    /// `sum_d row_d * y_d`; `row_sum` must be `sum_d row_d` (used by the sparse path).
    pub fn dot(&self, row: ArrayView1<f64>, row_sum: f64) -> f64 {
        match self {
            ObsRef::Dense(y) => y.dot(&row),
            ObsRef::Sparse { obs, .. } => {
                let mut acc = row_sum;
                for (&i, &v) in obs.indices.iter().zip(&obs.values) {
                    acc += row[i as usize] * v;
                }
                acc
            }
        }
    }

    /// `acc += scale * y`.
    pub fn add_scaled_to(&self, acc: &mut [f64], scale: f64) {
        match self {
            ObsRef::Dense(y) => {
                for (a, &v) in acc.iter_mut().zip(y.iter()) {
                    *a += scale * v;
                }
            }
            ObsRef::Sparse { obs, .. } => {
                for a in acc.iter_mut() {
                    *a += scale;
                }
                for (&i, &v) in obs.indices.iter().zip(&obs.values) {
                    acc[i as usize] += scale * v;
                }
            }
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match self {
            ObsRef::Dense(y) => y.to_vec(),
            ObsRef::Sparse { obs, dim } => {
                let mut y = vec![1.0; *dim];
                for (&i, &v) in obs.indices.iter().zip(&obs.values) {
                    y[i as usize] += v;
                }
                y
            }
        }
    }

    pub fn sum(&self) -> f64 {
        match self {
            ObsRef::Dense(y) => y.sum(),
            ObsRef::Sparse { obs, dim } => *dim as f64 + obs.values.iter().sum::<f64>(),
        }
    }

    /// `sum_d ln Gamma(y_d + 1)`, the normalizer of the Poisson likelihood.
    pub fn log_gamma_sum(&self) -> f64 {
        use statrs::function::gamma::ln_gamma;
        match self {
            ObsRef::Dense(y) => y.iter().map(|&v| ln_gamma(v + 1.0)).sum(),
            // ln Gamma(2) = 0 for every background entry
            ObsRef::Sparse { obs, .. } => obs.values.iter().map(|&v| ln_gamma(v + 2.0)).sum(),
        }
    }
}

/// A set of normalized observations, dense (N x D) or sparse.
#[derive(Debug, Clone, PartialEq)]
pub enum Observations {
    Dense(Array2<f64>),
    Sparse { dim: usize, rows: Vec<SparseObs> },
}

impl Observations {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::Shape("observations have different lengths".into()));
            }
            data.extend_from_slice(row);
        }
        let arr = Array2::from_shape_vec((rows.len(), dim), data)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Observations::Dense(arr))
    }

    pub fn len(&self) -> usize {
        match self {
            Observations::Dense(y) => y.nrows(),
            Observations::Sparse { rows, .. } => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            Observations::Dense(y) => y.ncols(),
            Observations::Sparse { dim, .. } => *dim,
        }
    }

    pub fn get(&self, n: usize) -> ObsRef<'_> {
        match self {
            Observations::Dense(y) => ObsRef::Dense(y.row(n)),
            Observations::Sparse { dim, rows } => ObsRef::Sparse {
                obs: &rows[n],
                dim: *dim,
            },
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = ObsRef<'_>> + '_ {
        (0..self.len()).map(move |n| self.get(n))
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        match self {
            Observations::Dense(y) => Observations::Dense(y.select(Axis(0), indices)),
            Observations::Sparse { dim, rows } => Observations::Sparse {
                dim: *dim,
                rows: indices.iter().map(|&i| rows[i].clone()).collect(),
            },
        }
    }

    /// Concatenates `times` copies of the set.
    pub fn repeat(&self, times: usize) -> Self {
        let idx: Vec<usize> = (0..times).flat_map(|_| 0..self.len()).collect();
        self.subset(&idx)
    }
}

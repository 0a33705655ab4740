//! Dataset ingestion: IDX image files, sparse bag-of-words text, tf-idf,
//! class-balanced label splits and sampling from the generative model.

mod bow;
mod idx;
mod split;
mod synthetic;

pub use bow::{read_sparse_bow, tfidf, write_sparse_bow, Idf};
pub use idx::{read_idx, write_idx};
pub use split::{split_labels, visible_labels, LabelsPerClass, SplitSpec};
pub use synthetic::{generate_synthetic, random_ground_truth, Synthetic};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{normalize_input, normalize_sparse, Observations, Sample};

/// Raw counts of one sparse document.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseCounts {
    pub indices: Vec<u32>,
    pub counts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawRows {
    Dense(Array2<f64>),
    Sparse(Vec<SparseCounts>),
}

/// Unnormalized non-negative data with one class label per item.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub name: String,
    pub dim: usize,
    pub classes: usize,
    pub rows: RawRows,
    pub labels: Vec<usize>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row `n` as a dense vector.
    pub fn dense_row(&self, n: usize) -> Vec<f64> {
        match &self.rows {
            RawRows::Dense(a) => a.row(n).to_vec(),
            RawRows::Sparse(rows) => {
                let mut v = vec![0.0; self.dim];
                for (&i, &c) in rows[n].indices.iter().zip(&rows[n].counts) {
                    v[i as usize] += c;
                }
                v
            }
        }
    }

    /// Keeps the given items in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let rows = match &self.rows {
            RawRows::Dense(a) => RawRows::Dense(a.select(ndarray::Axis(0), indices)),
            RawRows::Sparse(rows) => {
                RawRows::Sparse(indices.iter().map(|&i| rows[i].clone()).collect())
            }
        };
        Self {
            name: self.name.clone(),
            dim: self.dim,
            classes: self.classes,
            rows,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Normalized observations ready for the network.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub classes: usize,
    pub obs: Observations,
    pub labels: Vec<usize>,
    /// Items dropped at ingestion because their raw mass was zero.
    pub skipped: usize,
}

impl Dataset {
    /// Normalizes every item to mass `total`. Zero-mass items are dropped and
    /// counted in `skipped`.
    pub fn from_raw(raw: RawDataset, total: f64) -> Result<Self> {
        let dim = raw.dim;
        let mut skipped = 0;
        let mut labels = Vec::with_capacity(raw.labels.len());
        let obs = match raw.rows {
            RawRows::Dense(mut a) => {
                let mut keep = Vec::with_capacity(a.nrows());
                for (n, mut row) in a.rows_mut().into_iter().enumerate() {
                    let slice = row.as_slice_mut().expect("standard layout");
                    match normalize_input(slice, total) {
                        Ok(y) => {
                            slice.copy_from_slice(&y);
                            keep.push(n);
                            labels.push(raw.labels[n]);
                        }
                        Err(Error::ZeroMassInput) => skipped += 1,
                        Err(e) => return Err(e),
                    }
                }
                if keep.len() < a.nrows() {
                    a = a.select(ndarray::Axis(0), &keep);
                }
                Observations::Dense(a)
            }
            RawRows::Sparse(rows) => {
                let mut out = Vec::with_capacity(rows.len());
                for (n, row) in rows.iter().enumerate() {
                    match normalize_sparse(&row.indices, &row.counts, dim, total) {
                        Ok(obs) => {
                            out.push(obs);
                            labels.push(raw.labels[n]);
                        }
                        Err(Error::ZeroMassInput) => skipped += 1,
                        Err(e) => return Err(e),
                    }
                }
                Observations::Sparse { dim, rows: out }
            }
        };
        if skipped > 0 {
            log::warn!("{}: skipped {skipped} items with zero mass", raw.name);
        }
        Ok(Self {
            name: raw.name,
            classes: raw.classes,
            obs,
            labels,
            skipped,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.obs.dim()
    }

    /// Dense samples with labels visible where `mask` is set.
    pub fn samples(&self, mask: Option<&[bool]>) -> Vec<Sample> {
        self.obs
            .iter()
            .enumerate()
            .map(|(n, y)| Sample {
                y: y.to_dense(),
                label: match mask {
                    Some(m) if !m[n] => None,
                    _ => Some(self.labels[n]),
                },
            })
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            classes: self.classes,
            obs: self.obs.subset(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            skipped: 0,
        }
    }
}

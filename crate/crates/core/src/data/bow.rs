use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{RawDataset, RawRows, SparseCounts};
use crate::error::{Error, Result};

/// Reads a sparse bag-of-words file: a header line holding the vocabulary
/// size, then one document per line as `label idx:count ...`.
pub fn read_sparse_bow(path: &Path) -> Result<RawDataset> {
    let file = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let mut dim = None;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let Some(d) = dim else {
            let d: usize = text.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("expected vocabulary size, got {text:?}"),
            })?;
            dim = Some(d);
            continue;
        };
        let mut tokens = text.split_whitespace();
        let label: usize =
            tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: "missing or invalid label".into(),
                })?;
        let mut doc = SparseCounts::default();
        for tok in tokens {
            let (idx, count) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("expected idx:count, got {tok:?}"),
            })?;
            let idx: u32 = idx.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad index {idx:?}"),
            })?;
            let count: f64 = count.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad count {count:?}"),
            })?;
            if idx as usize >= d {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("index {idx} out of range for vocabulary size {d}"),
                });
            }
            if !(count >= 0.0) || !count.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("count must be non-negative, got {count}"),
                });
            }
            doc.indices.push(idx);
            doc.counts.push(count);
        }
        rows.push(doc);
        labels.push(label);
    }
    let dim = dim.ok_or(Error::Parse {
        line: 1,
        msg: "missing vocabulary size header".into(),
    })?;
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(RawDataset {
        name,
        dim,
        classes,
        rows: RawRows::Sparse(rows),
        labels,
    })
}

/// Writes a dataset in the format read by [`read_sparse_bow`].
pub fn write_sparse_bow(path: &Path, data: &RawDataset) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", data.dim)?;
    for n in 0..data.len() {
        write!(out, "{}", data.labels[n])?;
        for (d, v) in data.dense_row(n).iter().enumerate() {
            if *v != 0.0 {
                write!(out, " {d}:{v}")?;
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Inverse document frequencies `ln(N / df)` fitted on a training corpus.
/// Terms that never occur get weight 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Idf {
    pub weights: Vec<f64>,
}

impl Idf {
    pub fn fit(corpus: &RawDataset) -> Self {
        let mut df = vec![0usize; corpus.dim];
        match &corpus.rows {
            RawRows::Sparse(rows) => {
                for row in rows {
                    let mut seen: Vec<u32> = row
                        .indices
                        .iter()
                        .zip(&row.counts)
                        .filter(|(_, &c)| c > 0.0)
                        .map(|(&i, _)| i)
                        .collect();
                    seen.sort_unstable();
                    seen.dedup();
                    for i in seen {
                        df[i as usize] += 1;
                    }
                }
            }
            RawRows::Dense(a) => {
                for row in a.rows() {
                    for (d, &v) in row.iter().enumerate() {
                        if v > 0.0 {
                            df[d] += 1;
                        }
                    }
                }
            }
        }
        let n = corpus.len() as f64;
        let weights = df
            .into_iter()
            .map(|f| if f == 0 { 0.0 } else { (n / f as f64).ln() })
            .collect();
        Self { weights }
    }

    /// Raw counts times idf; zero counts stay zero.
    pub fn transform(&self, data: &RawDataset) -> Result<RawDataset> {
        if data.dim != self.weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "idf fitted on {} terms, data has {}",
                self.weights.len(),
                data.dim
            )));
        }
        let rows = match &data.rows {
            RawRows::Sparse(rows) => RawRows::Sparse(
                rows.iter()
                    .map(|row| SparseCounts {
                        indices: row.indices.clone(),
                        counts: row
                            .indices
                            .iter()
                            .zip(&row.counts)
                            .map(|(&i, &c)| c * self.weights[i as usize])
                            .collect(),
                    })
                    .collect(),
            ),
            RawRows::Dense(a) => {
                let mut a = a.clone();
                for mut row in a.rows_mut() {
                    for (v, &w) in row.iter_mut().zip(&self.weights) {
                        *v *= w;
                    }
                }
                RawRows::Dense(a)
            }
        };
        Ok(RawDataset {
            rows,
            ..data.clone()
        })
    }
}

/// tf-idf of a corpus with idf fitted on the corpus itself.
pub fn tfidf(corpus: &RawDataset) -> Result<RawDataset> {
    Idf::fit(corpus).transform(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bow.txt");
        std::fs::write(&path, text).unwrap();
        (dir, path)
    }

    #[test]
    fn parses_one_document() {
        let (_dir, path) = write("8\n1 0:2 5:1\n");
        let raw = read_sparse_bow(&path).unwrap();
        assert_eq!(raw.dim, 8);
        assert_eq!(raw.labels, vec![1]);
        assert_eq!(
            raw.dense_row(0),
            vec![2.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn empty_document_is_kept_for_downstream() {
        let (_dir, path) = write("4\n0\n1 2:1\n");
        let raw = read_sparse_bow(&path).unwrap();
        assert_eq!(raw.len(), 2);
        let ds = crate::data::Dataset::from_raw(raw, 10.0).unwrap();
        assert_eq!(ds.skipped, 1);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let (_dir, path) = write("4\n0 1:1\n1 9:1\n");
        match read_sparse_bow(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let (_dir, path) = write("4\n0 1-1\n");
        assert!(matches!(
            read_sparse_bow(&path),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn idf_conventions() {
        // term 0 in both documents, term 1 in one, term 2 in none
        let (_dir, path) = write("3\n0 0:2 1:3\n1 0:1\n");
        let raw = read_sparse_bow(&path).unwrap();
        let out = tfidf(&raw).unwrap();
        let ln2 = 2f64.ln();
        assert_eq!(out.dense_row(0), vec![0.0, 3.0 * ln2, 0.0]);
        assert_eq!(out.dense_row(1), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn single_document_has_zero_idf() {
        let (_dir, path) = write("3\n0 0:2 2:3\n");
        let raw = read_sparse_bow(&path).unwrap();
        assert!(Idf::fit(&raw).weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn bow_round_trip() {
        let (dir, path) = write("5\n2 4:1 0:3\n0 1:2.5\n");
        let raw = read_sparse_bow(&path).unwrap();
        let back = dir.path().join("back.txt");
        write_sparse_bow(&back, &raw).unwrap();
        let again = read_sparse_bow(&back).unwrap();
        for n in 0..2 {
            assert_eq!(raw.dense_row(n), again.dense_row(n));
        }
        assert_eq!(raw.labels, again.labels);
    }
}

//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `NESICKPT`, format version (u32), D, C, K
//! (u64), A (f64), W row-major, R row-major, metadata length (u64) and a
//! UTF-8 `key=value` text block.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::trainer::{EpochStats, StopReason, TrainReport};
use crate::error::{Error, Result};
use crate::model::Weights;

const MAGIC: &[u8; 8] = b"NESICKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Contents of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub report: TrainReport,
    /// Caller-supplied metadata, in file order.
    pub meta: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn weights(&self) -> &Weights {
        &self.report.weights
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn opt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

/// Writes weights, training history and metadata. The file is written to a
/// temporary sibling first and renamed, so readers never see partial files.
pub fn save(path: &Path, report: &TrainReport, meta: &[(String, String)]) -> Result<()> {
    let w = &report.weights;
    let mut buf = Vec::with_capacity(64 + 8 * (w.w().len() + w.r().len()));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [w.input_dim(), w.units(), w.classes()] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    buf.extend_from_slice(&w.total().to_le_bytes());
    for v in w.w().iter().chain(w.r().iter()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }

    let mut text = String::new();
    text.push_str(&format!("stop_epoch={}\n", report.stop_epoch));
    text.push_str(&format!("stop_reason={}\n", report.stop_reason));
    for e in &report.history {
        text.push_str(&format!(
            "history={},{},{},{},{}\n",
            e.epoch,
            opt_f64(e.loglik),
            e.self_labels,
            e.eps_w,
            e.eps_r
        ));
    }
    for (k, v) in meta {
        if k.contains('=') || k.contains('\n') {
            return Err(Error::InvalidInput(format!("metadata key {k:?}")));
        }
        text.push_str(&format!("meta.{k}={}\n", escape(v)));
    }
    buf.extend_from_slice(&(text.len() as u64).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());

    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptCheckpoint("file is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::CorruptCheckpoint("matrix size overflows".into()))?;
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::CorruptCheckpoint("matrix size overflows".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))
    }
}

fn bad(line: &str) -> Error {
    Error::CorruptCheckpoint(format!("bad metadata line {line:?}"))
}

fn parse_history(value: &str) -> Result<EpochStats> {
    let parts: Vec<&str> = value.split(',').collect();
    if parts.len() != 5 {
        return Err(bad(value));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(value));
    Ok(EpochStats {
        epoch: parts[0].parse().map_err(|_| bad(value))?,
        loglik: if parts[1] == "-" {
            None
        } else {
            Some(num(parts[1])?)
        },
        self_labels: parts[2].parse().map_err(|_| bad(value))?,
        eps_w: num(parts[3])?,
        eps_r: num(parts[4])?,
    })
}

/// Reads a checkpoint written by [`save`]. Any inconsistency is an error;
/// partial weights are never returned.
pub fn restore(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let mut rd = Reader {
        bytes: &bytes,
        pos: 0,
    };
    let magic = rd.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(Error::CorruptCheckpoint("not a checkpoint file".into()));
    }
    let version = rd.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::FormatVersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let dim = rd.u64()? as usize;
    let units = rd.u64()? as usize;
    let classes = rd.u64()? as usize;
    let total = rd.f64()?;
    let w = rd.matrix(units, dim)?;
    let r = rd.matrix(classes, units)?;
    let meta_len = rd.u64()? as usize;
    let text = std::str::from_utf8(rd.take(meta_len)?)
        .map_err(|_| Error::CorruptCheckpoint("metadata is not UTF-8".into()))?;
    if rd.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    let weights =
        Weights::from_parts(w, r, total).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;

    let mut history = Vec::new();
    let mut meta = Vec::new();
    let mut stop_epoch = None;
    let mut stop_reason = None;
    for line in text.lines() {
        let (key, value) = line.split_once('=').ok_or_else(|| bad(line))?;
        match key {
            "stop_epoch" => stop_epoch = Some(value.parse().map_err(|_| bad(line))?),
            "stop_reason" => {
                stop_reason = Some(value.parse::<StopReason>().map_err(|_| bad(line))?)
            }
            "history" => history.push(parse_history(value)?),
            _ => match key.strip_prefix("meta.") {
                Some(k) => meta.push((k.to_string(), unescape(value))),
                None => return Err(bad(line)),
            },
        }
    }
    let report = TrainReport {
        history,
        weights,
        stop_epoch: stop_epoch.ok_or_else(|| bad("stop_epoch missing"))?,
        stop_reason: stop_reason.ok_or_else(|| bad("stop_reason missing"))?,
    };
    Ok(Checkpoint { report, meta })
}

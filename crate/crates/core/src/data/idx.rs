use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{RawDataset, RawRows};
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// Reads an IDX image file (unsigned bytes, 3 dimensions) and its label file.
pub fn read_idx(images: &Path, labels: &Path) -> Result<RawDataset> {
    let mut img = open(images)?;
    let magic = read_u32(&mut img)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(&mut img)? as usize;
    let rows = read_u32(&mut img)? as usize;
    let cols = read_u32(&mut img)? as usize;
    let dim = rows * cols;
    if dim == 0 {
        return Err(Error::DimensionMismatch(format!(
            "{}: image size {rows}x{cols}",
            images.display()
        )));
    }

    let mut lab = open(labels)?;
    let magic = read_u32(&mut lab)?;
    if magic != LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let label_count = read_u32(&mut lab)? as usize;
    if label_count != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }

    let mut pixels = vec![0u8; count * dim];
    img.read_exact(&mut pixels).map_err(|e| {
        Error::DimensionMismatch(format!(
            "{}: expected {count} images of {dim} bytes ({e})",
            images.display()
        ))
    })?;
    let mut label_bytes = vec![0u8; count];
    lab.read_exact(&mut label_bytes).map_err(|e| {
        Error::DimensionMismatch(format!(
            "{}: expected {count} labels ({e})",
            labels.display()
        ))
    })?;

    let data: Vec<f64> = pixels.into_iter().map(f64::from).collect();
    let arr =
        Array2::from_shape_vec((count, dim), data).map_err(|e| Error::Shape(e.to_string()))?;
    let labels_vec: Vec<usize> = label_bytes.into_iter().map(usize::from).collect();
    let classes = labels_vec.iter().max().map_or(0, |&m| m + 1);
    let name = images
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(RawDataset {
        name,
        dim,
        classes,
        rows: RawRows::Dense(arr),
        labels: labels_vec,
    })
}

/// Writes images (row-major bytes, `rows * cols` per image) and labels as an
/// IDX file pair.
pub fn write_idx(
    images: &Path,
    labels: &Path,
    rows: usize,
    cols: usize,
    pixels: &[u8],
    label_bytes: &[u8],
) -> Result<()> {
    let count = label_bytes.len();
    if pixels.len() != count * rows * cols {
        return Err(Error::CountMismatch {
            images: pixels.len() / (rows * cols).max(1),
            labels: count,
        });
    }
    let mut img = BufWriter::new(File::create(images)?);
    img.write_all(&IMAGES_MAGIC.to_be_bytes())?;
    for v in [count, rows, cols] {
        img.write_all(&(v as u32).to_be_bytes())?;
    }
    img.write_all(pixels)?;
    img.flush()?;
    let mut lab = BufWriter::new(File::create(labels)?);
    lab.write_all(&LABELS_MAGIC.to_be_bytes())?;
    lab.write_all(&(count as u32).to_be_bytes())?;
    lab.write_all(label_bytes)?;
    lab.flush()?;
    Ok(())
}

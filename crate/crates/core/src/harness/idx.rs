//! IDX file ingestion (the MNIST distribution format).
//!
//! Layout: a big-endian magic number `0x0000_08TD`, where `T = 0x08` marks
//! unsigned-byte payloads and `D` the number of dimensions, then `D`
//! big-endian `u32` sizes, then the payload.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scenarios::{Corpus, Dataset};
use crate::tensor::Tensor2;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, field: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(field, "file ends inside the header"))
}

/// Parsed image file: `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, "images.magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(
            "images.magic",
            format!("expected {IMAGES_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let n = be_u32(bytes, 4, "images.count")? as usize;
    let h = be_u32(bytes, 8, "images.rows")? as usize;
    let w = be_u32(bytes, 12, "images.cols")? as usize;
    let expected = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::format("images.dims", "dimension product overflows"))?;
    let payload = &bytes[16..];
    if payload.len() < expected {
        return Err(Error::format(
            "images.payload",
            format!(
                "truncated: expected {expected} bytes, found {}",
                payload.len()
            ),
        ));
    }
    Ok((n, h, w, payload[..expected].to_vec()))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "labels.magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(
            "labels.magic",
            format!("expected {LABELS_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let n = be_u32(bytes, 4, "labels.count")? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(Error::format(
            "labels.payload",
            format!("truncated: expected {n} bytes, found {}", payload.len()),
        ));
    }
    Ok(payload[..n].to_vec())
}

/// Builds a dataset from in-memory IDX images and labels. Pixels are scaled
/// to `[0, 1]`; the class count is `max(label) + 1`.
pub fn dataset_from_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (n, h, w, pixels) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != n {
        return Err(Error::format(
            "labels.count",
            format!("{} labels for {n} images", labels.len()),
        ));
    }
    let inputs = Tensor2::from_vec(
        n,
        h * w,
        pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )?;
    let class_count = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    Dataset::new(
        inputs,
        labels.into_iter().map(usize::from).collect(),
        class_count,
        Some((h, w)),
    )
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    dataset_from_idx(&images, &labels)
}

fn find_file(dir: &Path, stems: &[&str]) -> Result<PathBuf> {
    stems
        .iter()
        .map(|s| dir.join(s))
        .find(|p| p.is_file())
        .ok_or_else(|| {
            Error::io(
                dir.join(stems[0]),
                std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found"),
            )
        })
}

/// Loads the standard four MNIST files from `dir`.
pub fn load_mnist_dir(dir: &Path) -> Result<Corpus> {
    let train = load_idx(
        &find_file(dir, &["train-images-idx3-ubyte", "train-images.idx3-ubyte"])?,
        &find_file(dir, &["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"])?,
    )?;
    let mut test = load_idx(
        &find_file(dir, &["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"])?,
        &find_file(dir, &["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"])?,
    )?;
    test.class_count = train.class_count.max(test.class_count);
    let mut train = train;
    train.class_count = test.class_count;
    Ok(Corpus { train, test })
}

/// Serializes images and labels in IDX format; the inverse of [`dataset_from_idx`]
/// for byte-valued pixels.
pub fn encode_idx(
    n: usize,
    h: usize,
    w: usize,
    pixels: &[u8],
    labels: &[u8],
) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, h as u32, w as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + labels.len());
    for v in [LABELS_MAGIC, labels.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    (images, lab)
}

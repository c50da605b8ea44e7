//! IDX reader (the MNIST / Fashion-MNIST distribution format).
//!
//! Big-endian `u32` magic, then one big-endian `u32` per dimension, then raw
//! `u8` payload. Pixel bytes are scaled by `1/255`.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::error::{CgpflError, Result};

use super::Dataset;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

fn expect_magic<R: Read>(r: &mut R, magic: u32, what: &str) -> Result<()> {
    let found = read_u32(r)?;
    if found != magic {
        return Err(CgpflError::Format(format!(
            "{what}: bad magic {found:#010x}, expected {magic:#010x}"
        )));
    }
    Ok(())
}

/// Returns `(count, rows * cols, pixel bytes)`.
pub fn parse_idx_images<R: Read>(mut r: R) -> Result<(usize, usize, Vec<u8>)> {
    expect_magic(&mut r, IDX_IMAGES_MAGIC, "images")?;
    let count = read_u32(&mut r)? as usize;
    let rows = read_u32(&mut r)? as usize;
    let cols = read_u32(&mut r)? as usize;
    let dim = rows * cols;
    let mut pixels = vec![0u8; count * dim];
    r.read_exact(&mut pixels)?;
    Ok((count, dim, pixels))
}

pub fn parse_idx_labels<R: Read>(mut r: R) -> Result<Vec<u8>> {
    expect_magic(&mut r, IDX_LABELS_MAGIC, "labels")?;
    let count = read_u32(&mut r)? as usize;
    let mut labels = vec![0u8; count];
    r.read_exact(&mut labels)?;
    Ok(labels)
}

/// Builds a dataset from already-parsed IDX payloads.
pub(crate) fn assemble(count: usize, dim: usize, pixels: &[u8], labels: &[u8]) -> Result<Dataset> {
    if labels.len() != count {
        return Err(CgpflError::Format(format!(
            "image count {count} does not match label count {}",
            labels.len()
        )));
    }
    if count == 0 {
        return Err(CgpflError::Format("IDX files contain no samples".into()));
    }
    let features = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(features, labels, dim, num_classes)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (count, dim, pixels) = parse_idx_images(BufReader::new(File::open(images_path)?))?;
    let labels = parse_idx_labels(BufReader::new(File::open(labels_path)?))?;
    assemble(count, dim, &pixels, &labels)
}

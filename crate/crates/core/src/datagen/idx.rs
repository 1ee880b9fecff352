//! IDX ubyte files (the MNIST container).

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::dataset::LabeledSet;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx(format!("{what}: truncated header")))
}

/// Parses an image file into `N×1×rows×cols` values in `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor<f32>> {
    let magic = read_u32(bytes, 0, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Idx(format!("images: bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let n = read_u32(bytes, 4, "images")? as usize;
    let rows = read_u32(bytes, 8, "images")? as usize;
    let cols = read_u32(bytes, 12, "images")? as usize;
    let body = &bytes[16..];
    let expected = n * rows * cols;
    if body.len() != expected {
        return Err(Error::Idx(format!(
            "images: header declares {n}×{rows}×{cols} = {expected} bytes, body has {}",
            body.len()
        )));
    }
    Tensor::new(vec![n, 1, rows, cols], body.iter().map(|&b| b as f32 / 255.0).collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u32>> {
    let magic = read_u32(bytes, 0, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Idx(format!("labels: bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let n = read_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Idx(format!("labels: header declares {n} labels, body has {}", body.len())));
    }
    Ok(body.iter().map(|&b| b as u32).collect())
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledSet> {
    let images = parse_idx_images(&std::fs::read(images_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    if images.shape()[0] != labels.len() {
        return Err(Error::IdxCountMismatch {
            images: images.shape()[0],
            labels: labels.len(),
        });
    }
    LabeledSet::new(images, labels)
}

/// Serializes images (`N×1×H×W`, or RGB converted to luma) and labels.
pub fn encode_idx(set: &LabeledSet) -> (Vec<u8>, Vec<u8>) {
    let n = set.len();
    let [_, h, w] = set.sample_shape();
    let mut images = Vec::with_capacity(16 + n * h * w);
    for v in [IMAGES_MAGIC, n as u32, h as u32, w as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    for i in 0..n {
        images.extend(set.image(i).grayscale().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    let mut labels = Vec::with_capacity(8 + n);
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    labels.extend(set.labels.iter().map(|&l| l as u8));
    (images, labels)
}

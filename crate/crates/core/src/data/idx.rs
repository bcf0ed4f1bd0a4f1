//! IDX files (MNIST layout): big-endian magic `00 00 08 <ndim>`, one u32 per
//! dimension, then unsigned bytes.

use std::fs;
use std::path::Path;

use super::{Dataset, Image};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format("IDX header truncated".into()))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Image>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!("bad IDX image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let payload = &bytes[16..];
    if payload.len() != n * size {
        return Err(Error::Format(format!(
            "IDX image payload is {} bytes, header implies {}",
            payload.len(),
            n * size
        )));
    }
    if size == 0 {
        return Ok(vec![Image::filled(rows, cols, 1, 0.0); n]);
    }
    payload
        .chunks_exact(size)
        .map(|px| Image::new(rows, cols, 1, px.iter().map(|&b| b as f32 / 255.0).collect()))
        .collect()
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!("bad IDX label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(Error::Format(format!(
            "IDX label payload is {} bytes, header says {}",
            payload.len(),
            n
        )));
    }
    Ok(payload.to_vec())
}

/// Inverse of `parse_idx_images` for images whose pixels are multiples of 1/255.
pub fn encode_idx_images(images: &[Image]) -> Result<Vec<u8>> {
    let (rows, cols) = images.first().map_or((0, 0), |i| (i.height, i.width));
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        if img.channels != 1 || img.height != rows || img.width != cols {
            return Err(Error::Shape("IDX images must be single-channel and equally sized".into()));
        }
        out.extend(img.pixels.iter().map(|v| (v * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads an image file and its label file; the class count is 10 or one past
/// the largest label, whichever is larger.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let imgs = parse_idx_images(&fs::read(images)?)?;
    let labs = parse_idx_labels(&fs::read(labels)?)?;
    if imgs.len() != labs.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            imgs.len(),
            labs.len()
        )));
    }
    let classes = labs.iter().map(|&l| l as usize + 1).max().unwrap_or(0).max(10);
    let name = images
        .file_name()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(&name, classes, imgs, labs.into_iter().map(usize::from).collect())
}

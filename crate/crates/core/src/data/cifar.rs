//! CIFAR-10 binary batches: records of one label byte followed by the 32×32
//! red plane, green plane and blue plane.

use std::fs;
use std::path::Path;

use super::{Dataset, Image};
use crate::error::{Error, Result};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

pub fn parse_cifar_binary(bytes: &[u8]) -> Result<(Vec<Image>, Vec<usize>)> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format(format!(
            "CIFAR file length {} is not a multiple of {}",
            bytes.len(),
            CIFAR_RECORD
        )));
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(rec[0] as usize);
        let planes = &rec[1..];
        let mut pixels = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                pixels.push(planes[c * plane + i] as f32 / 255.0);
            }
        }
        images.push(Image::new(CIFAR_SIDE, CIFAR_SIDE, 3, pixels)?);
    }
    Ok((images, labels))
}

pub fn encode_cifar_binary(images: &[Image], labels: &[usize]) -> Result<Vec<u8>> {
    if images.len() != labels.len() {
        return Err(Error::InvalidArgument("image/label count mismatch".into()));
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut out = Vec::with_capacity(images.len() * CIFAR_RECORD);
    for (img, &label) in images.iter().zip(labels) {
        if img.height != CIFAR_SIDE || img.width != CIFAR_SIDE || img.channels != 3 {
            return Err(Error::Shape("CIFAR records are 32x32x3".into()));
        }
        out.push(u8::try_from(label).map_err(|_| Error::InvalidArgument(format!("label {label}")))?);
        for c in 0..3 {
            out.extend((0..plane).map(|i| (img.pixels[i * 3 + c] * 255.0).round() as u8));
        }
    }
    Ok(out)
}

pub fn load_cifar_binary(path: &Path) -> Result<Dataset> {
    let (images, labels) = parse_cifar_binary(&fs::read(path)?)?;
    let name = path
        .file_name()
        .map_or_else(|| "cifar10".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(&name, 10, images, labels)
}

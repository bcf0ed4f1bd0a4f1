//! Images, datasets, loaders for IDX and CIFAR-10 binary files, the
//! procedural glyph dataset, stratified labeled/unlabeled splits and the
//! labeled/unlabeled batch stream.

mod cifar;
mod glyphs;
mod idx;
mod image;
mod split;
mod stream;

pub use cifar::{encode_cifar_binary, load_cifar_binary, parse_cifar_binary, CIFAR_RECORD};
pub use glyphs::{make_synthetic_glyphs, render_glyph, GlyphParams, GLYPH_CLASSES};
pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels};
pub use image::{ChannelStats, Image};
pub use split::{split_labeled, SplitSpec, UnlabeledSet};
pub use stream::BatchStream;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(name: &str, num_classes: usize, images: Vec<Image>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Format(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Format(format!("label {l} outside {num_classes} classes")));
        }
        Ok(Self {
            name: name.to_string(),
            num_classes,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    pub fn concat(mut self, other: Dataset) -> Result<Self> {
        if self.num_classes != other.num_classes {
            return Err(Error::InvalidArgument("class counts differ".into()));
        }
        self.images.extend(other.images);
        self.labels.extend(other.labels);
        Ok(self)
    }
}

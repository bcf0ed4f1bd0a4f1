use rand::seq::SliceRandom;

use super::{Dataset, Image};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub labels_per_class: usize,
    pub seed: u64,
    pub include_labeled_in_unlabeled: bool,
}

/// Unlabeled pool. Ground truth is kept only for diagnostics and is reachable
/// solely through [`UnlabeledSet::diagnostic_labels`].
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledSet {
    pub num_classes: usize,
    pub images: Vec<Image>,
    hidden_labels: Vec<usize>,
}

impl UnlabeledSet {
    pub fn new(num_classes: usize, images: Vec<Image>, hidden_labels: Vec<usize>) -> Self {
        assert_eq!(images.len(), hidden_labels.len());
        Self {
            num_classes,
            images,
            hidden_labels,
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn diagnostic_labels(&self) -> &[usize] {
        &self.hidden_labels
    }
}

/// Picks `labels_per_class` examples of every class by a seeded shuffle of
/// that class's indices. The labeled set keeps dataset order.
pub fn split_labeled(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, UnlabeledSet)> {
    let hist = ds.class_histogram();
    if let Some((c, &have)) = hist.iter().enumerate().find(|(_, &n)| n < spec.labels_per_class) {
        return Err(Error::InvalidArgument(format!(
            "class {c} has {have} examples, {} requested",
            spec.labels_per_class
        )));
    }
    let mut chosen = vec![false; ds.len()];
    for class in 0..ds.num_classes {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        idx.shuffle(&mut rng::stream(spec.seed, "split", class as u64, 0));
        for &i in idx.iter().take(spec.labels_per_class) {
            chosen[i] = true;
        }
    }
    let mut l_img = Vec::new();
    let mut l_lab = Vec::new();
    let mut u_img = Vec::new();
    let mut u_lab = Vec::new();
    for (i, &is_labeled) in chosen.iter().enumerate() {
        if is_labeled {
            l_img.push(ds.images[i].clone());
            l_lab.push(ds.labels[i]);
        }
        if !is_labeled || spec.include_labeled_in_unlabeled {
            u_img.push(ds.images[i].clone());
            u_lab.push(ds.labels[i]);
        }
    }
    let labeled = Dataset::new(&format!("{}-labeled", ds.name), ds.num_classes, l_img, l_lab)?;
    Ok((labeled, UnlabeledSet::new(ds.num_classes, u_img, u_lab)))
}

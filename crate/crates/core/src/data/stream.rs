use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Endless labeled/unlabeled index stream. Each side walks through seeded
/// permutations of its index range, drawing a fresh permutation whenever one
/// is used up, so a batch is a pure function of (seed, iteration).
#[derive(Clone, Debug)]
pub struct BatchStream {
    labeled: Side,
    unlabeled: Side,
    iteration: u64,
}

#[derive(Clone, Debug)]
struct Side {
    len: usize,
    batch: usize,
    seed: u64,
    tag: &'static str,
    cached: Option<(u64, Vec<usize>)>,
}

impl Side {
    fn permutation(&mut self, epoch: u64) -> &[usize] {
        if self.cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut p: Vec<usize> = (0..self.len).collect();
            p.shuffle(&mut rng::stream(self.seed, self.tag, epoch, 0));
            self.cached = Some((epoch, p));
        }
        &self.cached.as_ref().unwrap().1
    }

    fn batch(&mut self, iteration: u64) -> Vec<usize> {
        if self.len == 0 {
            return Vec::new();
        }
        let start = iteration * self.batch as u64;
        (start..start + self.batch as u64)
            .map(|pos| {
                let epoch = pos / self.len as u64;
                let off = (pos % self.len as u64) as usize;
                self.permutation(epoch)[off]
            })
            .collect()
    }
}

impl BatchStream {
    /// `batch` labeled and `mu·batch` unlabeled indices per step.
    pub fn new(n_labeled: usize, n_unlabeled: usize, batch: usize, mu: usize, seed: u64) -> Result<Self> {
        if n_labeled == 0 {
            return Err(Error::InvalidArgument("labeled set is empty".into()));
        }
        if batch == 0 || mu == 0 {
            return Err(Error::InvalidArgument("batch size and ratio must be at least 1".into()));
        }
        Ok(Self {
            labeled: Side {
                len: n_labeled,
                batch,
                seed,
                tag: "labeled_epoch",
                cached: None,
            },
            unlabeled: Side {
                len: n_unlabeled,
                batch: batch * mu,
                seed,
                tag: "unlabeled_epoch",
                cached: None,
            },
            iteration: 0,
        })
    }

    /// Batch indices for a given iteration (0-based).
    pub fn batch_at(&mut self, iteration: u64) -> (Vec<usize>, Vec<usize>) {
        (self.labeled.batch(iteration), self.unlabeled.batch(iteration))
    }

    /// Repositions the iterator so the next item is `iteration`.
    pub fn seek(&mut self, iteration: u64) {
        self.iteration = iteration;
    }

    pub fn unlabeled_batch_size(&self) -> usize {
        self.unlabeled.batch
    }
}

impl Iterator for BatchStream {
    type Item = (Vec<usize>, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        let out = self.batch_at(self.iteration);
        self.iteration += 1;
        Some(out)
    }
}

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sire_tensor::Tensor;

use super::{Dataset, Split};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Dataset indices of the samples, in batch order.
    pub indices: Vec<usize>,
}

/// Mirrors a `[C, H, W]` image left to right in place.
pub fn hflip(image: &mut [f32], c: usize, h: usize, w: usize) {
    debug_assert_eq!(image.len(), c * h * w);
    for row in image.chunks_exact_mut(w) {
        row.reverse();
    }
}

/// Lazy batch sequence over a fixed index order.
pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    flips: Vec<bool>,
    batch_size: usize,
    pos: usize,
}

impl Batches<'_> {
    pub fn len(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn samples(&self) -> usize {
        self.order.len()
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        let flips = &self.flips[self.pos..end];
        self.pos = end;
        let (c, h, w) = self.ds.input_shape();
        let plane = c * h * w;
        let src = self.ds.images.data();
        let mut data = Vec::with_capacity(indices.len() * plane);
        for (&i, &flip) in indices.iter().zip(flips) {
            let start = data.len();
            data.extend_from_slice(&src[i * plane..(i + 1) * plane]);
            if flip {
                hflip(&mut data[start..], c, h, w);
            }
        }
        let labels = indices.iter().map(|&i| self.ds.labels[i]).collect();
        let images = Tensor::from_vec(vec![indices.len(), c, h, w], data).expect("batch shape");
        Some(Batch {
            images,
            labels,
            indices,
        })
    }
}

/// Batches over the samples `indices`. When `train` is set the order is
/// shuffled from `seed`, each image is flipped with probability 0.5 if
/// `hflip`, and a trailing batch of one is dropped. Otherwise samples come
/// in the given order untouched.
pub fn batches_from<'a>(
    ds: &'a Dataset,
    indices: &[usize],
    batch_size: usize,
    train: bool,
    seed: u64,
    hflip: bool,
) -> Result<Batches<'a>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::Data(format!("sample index {bad} out of range for {} samples", ds.len())));
    }
    let mut order = indices.to_vec();
    let mut flips = vec![false; order.len()];
    if train {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        if hflip {
            for f in &mut flips {
                *f = rng.random_bool(0.5);
            }
        }
        if order.len() > 1 && order.len() % batch_size == 1 {
            order.pop();
            flips.pop();
        }
    }
    Ok(Batches {
        ds,
        order,
        flips,
        batch_size,
        pos: 0,
    })
}

/// Batches over a named split; only the train split is shuffled and
/// augmented.
pub fn batches<'a>(
    ds: &'a Dataset,
    split: Split,
    batch_size: usize,
    shuffle_seed: u64,
    hflip: bool,
) -> Result<Batches<'a>> {
    batches_from(
        ds,
        ds.split(split),
        batch_size,
        split == Split::Train,
        shuffle_seed,
        hflip,
    )
}

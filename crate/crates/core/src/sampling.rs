//! Batch construction: plain seeded shuffling, and class-balanced batches that
//! oversample minority classes.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::taxonomy::{Emotion, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<Vec<usize>>,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.batches.iter().map(Vec::as_slice)
    }
}

/// A seeded permutation of `0..n` chunked into batches of `batch_size`; the
/// last batch may be short.
pub fn shuffled_batches(n: usize, batch_size: usize, seed: u64) -> Result<BatchPlan> {
    if n == 0 {
        return Err(Error::invalid("n", "need at least one sample"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be ≥ 1"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    Ok(BatchPlan {
        batches: idx.chunks(batch_size).map(<[usize]>::to_vec).collect(),
    })
}

/// `ceil(N / B)` batches, each holding exactly `B / 8` samples of every class.
///
/// Each class draws from an endless stream of fresh seeded shuffles of its own
/// indices, so a minority class repeats only after all its members were used.
pub fn balanced_batches(labels: &[usize], batch_size: usize, seed: u64) -> Result<BatchPlan> {
    if batch_size == 0 || batch_size % NUM_CLASSES != 0 {
        return Err(Error::invalid(
            "batch_size",
            format!("{batch_size} is not a positive multiple of {NUM_CLASSES} classes"),
        ));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, &c) in labels.iter().enumerate() {
        by_class.get_mut(c).ok_or(Error::ClassOutOfRange(c))?.push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::ClassAbsent(Emotion::ALL[c].code()));
    }

    let per_class = batch_size / NUM_CLASSES;
    let n_batches = labels.len().div_ceil(batch_size);
    let quota = per_class * n_batches;
    let mut rng = seeded(seed);

    let streams: Vec<Vec<usize>> = by_class
        .iter()
        .map(|members| {
            let mut stream = Vec::with_capacity(quota + members.len());
            while stream.len() < quota {
                let mut pass = members.clone();
                pass.shuffle(&mut rng);
                stream.extend(pass);
            }
            stream.truncate(quota);
            stream
        })
        .collect();

    let batches = (0..n_batches)
        .map(|b| {
            let mut batch: Vec<usize> = streams
                .iter()
                .flat_map(|s| s[b * per_class..(b + 1) * per_class].iter().copied())
                .collect();
            batch.shuffle(&mut rng);
            batch
        })
        .collect();
    Ok(BatchPlan { batches })
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::{Error, Result};

/// Partition sizes `(train, val, test)`: validation and test get
/// `floor(n * ratio)` items and the remainder goes to training.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be positive, got {ratios:?}"
        )));
    }
    if (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must sum to 1, got {}",
            a + b + c
        )));
    }
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 items to split, got {n}"
        )));
    }
    // Tolerate representation error such as 3 * (1/3) = 0.999...
    let floor = |r: f64| (n as f64 * r + 1e-9).floor() as usize;
    let val = floor(b);
    let test = floor(c);
    Ok((n - val - test, val, test))
}

/// Seeded shuffle into train/val/test. Items are id-sorted first, so the
/// result does not depend on the order they were loaded in.
pub fn split_dataset(ds: &Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (train_n, val_n, _) = split_sizes(ds.len(), ratios)?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| ds.items[a].image.id.cmp(&ds.items[b].image.id));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, rest) = order.split_at(train_n);
    let (val, test) = rest.split_at(val_n);
    Ok((ds.subset(train), ds.subset(val), ds.subset(test)))
}

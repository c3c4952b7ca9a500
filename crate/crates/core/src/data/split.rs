use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ImagePromptPair;
use crate::error::{Error, Result};

pub const DEFAULT_TRAIN_RATIO: f64 = 0.8;

/// Train/test split that never separates pairs sharing an object label.
///
/// Labels are shuffled by `seed` and moved into train until it holds at
/// least `ratio` of the pairs; the last label always goes to test. Both
/// sides keep the input order.
pub fn split_by_object(
    pairs: &[ImagePromptPair],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<ImagePromptPair>, Vec<ImagePromptPair>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("train ratio {ratio} outside (0, 1)")));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in pairs {
        *counts.entry(p.object_label.as_str()).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(Error::Data(format!(
            "{} distinct object label(s); a label-atomic split needs at least 2",
            counts.len()
        )));
    }
    let mut labels: Vec<(&str, usize)> = counts.into_iter().collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let target = ratio * pairs.len() as f64;
    let mut train_labels = HashSet::new();
    let mut n_train = 0usize;
    for &(label, count) in &labels[..labels.len() - 1] {
        if n_train as f64 >= target {
            break;
        }
        train_labels.insert(label);
        n_train += count;
    }
    let (train, test) = pairs
        .iter()
        .cloned()
        .partition(|p| train_labels.contains(p.object_label.as_str()));
    Ok((train, test))
}

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Split {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Classes too small to appear on both sides.
    pub warnings: Vec<String>,
}

/// Stratified, seeded train/test split. Each class contributes
/// `round(count * test_fraction)` test images, kept within `[1, count - 1]`
/// when the class has at least two images. Both sides keep dataset order.
pub fn split(dataset: &LabeledDataset, test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut warnings = Vec::new();
    for class in 0..dataset.class_count() {
        let mut idx = dataset.class_indices(class);
        let n = idx.len();
        if n < 2 {
            if n == 1 {
                warnings.push(format!(
                    "class {class} has a single image; it is kept in the training side only"
                ));
            }
            train.extend(idx);
            continue;
        }
        idx.shuffle(&mut rng);
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train: dataset.select(&train),
        test: dataset.select(&test),
        warnings,
    })
}

/// Exactly `n` images per class, drawn uniformly without replacement; output
/// keeps dataset order.
pub fn subsample_per_class(dataset: &LabeledDataset, n: usize, seed: u64) -> Result<LabeledDataset> {
    subsample(dataset, SampleSize::Count(n), seed)
}

/// Per-class sample size: an absolute count or a percentage of each class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SampleSize {
    Count(usize),
    Percent(f64),
}

impl SampleSize {
    /// Number of images to draw from a class of `class_size`.
    pub fn resolve(self, class_size: usize) -> usize {
        match self {
            SampleSize::Count(n) => n,
            SampleSize::Percent(p) => ((p / 100.0 * class_size as f64).round() as usize).max(1),
        }
    }
}

impl fmt::Display for SampleSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleSize::Count(n) => write!(f, "{n}"),
            SampleSize::Percent(p) => write!(f, "{p}%"),
        }
    }
}

impl FromStr for SampleSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidArgument(format!("invalid sample size `{s}`"));
        if let Some(p) = s.strip_suffix('%') {
            let p: f64 = p.trim().parse().map_err(|_| bad())?;
            if p > 0.0 && p <= 100.0 {
                return Ok(SampleSize::Percent(p));
            }
            return Err(bad());
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(SampleSize::Count(n)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for SampleSize {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SampleSize> for String {
    fn from(s: SampleSize) -> String {
        s.to_string()
    }
}

pub fn subsample(dataset: &LabeledDataset, size: SampleSize, seed: u64) -> Result<LabeledDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for class in 0..dataset.class_count() {
        let idx = dataset.class_indices(class);
        let n = size.resolve(idx.len());
        if n > idx.len() {
            return Err(Error::InsufficientClass {
                class,
                available: idx.len(),
                required: n,
            });
        }
        keep.extend(index::sample(&mut rng, idx.len(), n).into_iter().map(|i| idx[i]));
    }
    keep.sort_unstable();
    Ok(dataset.select(&keep))
}

/// Keeps at most `max` images per class (seeded), leaving smaller classes whole.
pub fn cap_per_class(dataset: &LabeledDataset, max: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for class in 0..dataset.class_count() {
        let idx = dataset.class_indices(class);
        if idx.len() <= max {
            keep.extend(idx);
        } else {
            keep.extend(index::sample(&mut rng, idx.len(), max).into_iter().map(|i| idx[i]));
        }
    }
    keep.sort_unstable();
    dataset.select(&keep)
}

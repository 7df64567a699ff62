use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabeledDataset;
use crate::tensor::Tensor;

/// Toy dataset of `side x side x 1` images, each a bright Gaussian spot whose
/// position depends on the class (spots sit on a circle around the image
/// center), with positional jitter and uniform pixel noise.
pub fn gaussian_blobs(classes: usize, per_class: usize, side: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mid = (side as f64 - 1.0) / 2.0;
    let radius = side as f64 / 4.0;
    let spread = (side as f64 / 8.0).max(0.75);
    let mut images = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        let theta = std::f64::consts::TAU * c as f64 / classes as f64;
        let (cy, cx) = (mid + radius * theta.sin(), mid + radius * theta.cos());
        for _ in 0..per_class {
            let jy = cy + rng.gen_range(-0.5..0.5);
            let jx = cx + rng.gen_range(-0.5..0.5);
            let mut data = Vec::with_capacity(side * side);
            for y in 0..side {
                for x in 0..side {
                    let r2 = (y as f64 - jy).powi(2) + (x as f64 - jx).powi(2);
                    let v = (-r2 / (2.0 * spread * spread)).exp() + rng.gen_range(0.0..0.1);
                    data.push(v.min(1.0));
                }
            }
            images.push(Tensor::new(vec![side, side, 1], data).expect("blob shape"));
            labels.push(c);
        }
    }
    LabeledDataset::new(images, labels, classes).expect("valid blobs")
}

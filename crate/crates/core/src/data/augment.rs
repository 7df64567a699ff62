use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::imaging::{clahe, flip_horizontal, flip_vertical, perspective, rotate};
use super::{LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const CLAHE_GRID: usize = 8;

/// Random augmentation recipe. Photometric parameters are in byte units
/// (`0..=255`); images are rescaled to `[0, 1]` at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    /// Augmented copies produced per input image.
    pub copies: usize,
    /// CLAHE clip limit range, applied to every channel.
    pub clahe_clip: (f64, f64),
    /// Rotation drawn from `[-rotation_deg, rotation_deg]`.
    pub rotation_deg: f64,
    /// Independent probability of a horizontal and of a vertical flip.
    pub flip_prob: f64,
    /// Laplace noise scale, per pixel and channel.
    pub laplace_scale: f64,
    /// Per-channel multiplier range.
    pub channel_mult: (f64, f64),
    /// Range of the perspective corner-jitter scale `s`; corners move by
    /// `|N(0, s * min(H, W))|` towards the image interior.
    pub perspective_scale: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            copies: 4,
            clahe_clip: (1.0, 10.0),
            rotation_deg: 5.0,
            flip_prob: 0.3,
            laplace_scale: 0.03 * 255.0,
            channel_mult: (0.7, 1.3),
            perspective_scale: (0.0, 0.15),
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn none() -> Self {
        Self {
            copies: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        let ok = range_ok(self.clahe_clip)
            && self.clahe_clip.0 > 0.0
            && range_ok(self.channel_mult)
            && self.channel_mult.0 >= 0.0
            && range_ok(self.perspective_scale)
            && self.perspective_scale.0 >= 0.0
            && self.rotation_deg >= 0.0
            && (0.0..=1.0).contains(&self.flip_prob)
            && self.laplace_scale >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid augmentation config {self:?}"
            )))
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn laplace(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let u: f64 = rng.gen_range(-0.5..0.5);
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// One random augmentation of a `[H, W, C]` image in `[0, 1]`: CLAHE,
/// rotation, horizontal and vertical flips, Laplace noise, channel
/// multiplication and a perspective warp, in that order.
pub fn augment_image(image: &Tensor, cfg: &AugmentationConfig, rng: &mut ChaCha8Rng) -> Tensor {
    let s = image.shape();
    let (h, w, c) = (s[0], s[1], s[2]);
    let mut px: Vec<f64> = image.data().iter().map(|v| v * 255.0).collect();

    let clip = uniform(rng, cfg.clahe_clip);
    for ch in 0..c {
        let plane: Vec<u8> = (0..h * w)
            .map(|i| px[i * c + ch].round().clamp(0.0, 255.0) as u8)
            .collect();
        for (i, v) in clahe(&plane, h, w, clip, CLAHE_GRID).into_iter().enumerate() {
            px[i * c + ch] = f64::from(v);
        }
    }

    let angle = uniform(rng, (-cfg.rotation_deg, cfg.rotation_deg));
    px = rotate(&px, h, w, c, angle);

    if rng.gen::<f64>() < cfg.flip_prob {
        px = flip_horizontal(&px, h, w, c);
    }
    if rng.gen::<f64>() < cfg.flip_prob {
        px = flip_vertical(&px, h, w, c);
    }

    if cfg.laplace_scale > 0.0 {
        for v in px.iter_mut() {
            *v = (*v + laplace(rng, cfg.laplace_scale)).clamp(0.0, 255.0);
        }
    }

    let factors: Vec<f64> = (0..c).map(|_| uniform(rng, cfg.channel_mult)).collect();
    for (i, v) in px.iter_mut().enumerate() {
        *v = (*v * factors[i % c]).clamp(0.0, 255.0);
    }

    let jitter = uniform(rng, cfg.perspective_scale);
    if jitter > 0.0 {
        let normal = Normal::new(0.0, jitter * h.min(w) as f64).expect("finite jitter");
        let (wm, hm) = ((w - 1) as f64, (h - 1) as f64);
        let mut off = || {
            let cap_x = 0.45 * wm;
            let cap_y = 0.45 * hm;
            let dx: f64 = normal.sample(rng);
            let dy: f64 = normal.sample(rng);
            (dx.abs().min(cap_x), dy.abs().min(cap_y))
        };
        let (a, b, cc, d) = (off(), off(), off(), off());
        let quad = [
            (a.0, a.1),
            (wm - b.0, b.1),
            (wm - cc.0, hm - cc.1),
            (d.0, hm - d.1),
        ];
        px = perspective(&px, h, w, c, quad);
    }

    let data = px.into_iter().map(|v| (v / 255.0).clamp(0.0, 1.0)).collect();
    Tensor::new(s.to_vec(), data).expect("augmented shape")
}

/// Originals plus `cfg.copies` augmented variants of each image, laid out as
/// `[img0, aug0_1.., img1, aug1_1.., ..]`. Every (image, copy) pair draws from
/// its own RNG stream, so the result does not depend on thread scheduling.
pub fn augment(dataset: &LabeledDataset, cfg: &AugmentationConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    if dataset.provenance() == Provenance::Augmented {
        return Err(Error::InvalidArgument(
            "dataset is already augmented".into(),
        ));
    }
    let per = cfg.copies + 1;
    let images: Vec<Tensor> = (0..dataset.len() * per)
        .into_par_iter()
        .map(|k| {
            let (i, copy) = (k / per, k % per);
            let img = dataset.image(i);
            if copy == 0 {
                return img.clone();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(((i as u64) << 16) | copy as u64);
            augment_image(img, cfg, &mut rng)
        })
        .collect();
    let labels = dataset
        .labels()
        .iter()
        .flat_map(|&l| std::iter::repeat_n(l, per))
        .collect();
    Ok(LabeledDataset::new(images, labels, dataset.class_count())?
        .with_class_names(dataset.class_names().to_vec())?
        .with_provenance(Provenance::Augmented))
}

//! Siamese kernels: an embedding network trained against one fixed anchor
//! image, read out as a Gaussian similarity to that anchor.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::container::{self, Kind};
use crate::data::LabeledDataset;
use crate::embedding::{BackboneConfig, EmbeddingNetwork};
use crate::error::{Error, Result};
use crate::metric::{
    cosine_distance, gaussian_rbf_with, mine_semi_hard_distances, triplet_loss_grad, DistanceMapping,
    Margin, Triplet, DEFAULT_SIGMA,
};
use crate::network::Mode;
use crate::optim::Adam;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTrainConfig {
    pub lr: f64,
    /// Gradient steps.
    pub iterations: usize,
    /// Positives (and negatives) drawn per step.
    pub batch_triplets: usize,
    pub margin: Margin,
    pub seed: u64,
}

impl KernelTrainConfig {
    /// Hyperparameters of the original experiments.
    pub fn paper() -> Self {
        Self {
            lr: 1e-5,
            iterations: 5000,
            batch_triplets: 32,
            margin: Margin::default(),
            seed: 0,
        }
    }

    /// Reduced schedule for single-machine CPU runs.
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            iterations: 20,
            batch_triplets: 16,
            margin: Margin::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.iterations == 0 || self.batch_triplets == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel training config must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for KernelTrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

#[derive(Debug, Clone)]
pub struct SiameseKernel {
    anchor_image: Tensor,
    anchor_class: usize,
    net: EmbeddingNetwork,
    sigma: f64,
    mapping: DistanceMapping,
    anchor_embedding: Vec<f64>,
}

impl SiameseKernel {
    pub fn new(
        anchor_image: Tensor,
        anchor_class: usize,
        net: EmbeddingNetwork,
        sigma: f64,
        mapping: DistanceMapping,
    ) -> Result<Self> {
        gaussian_rbf_with(0.0, sigma, mapping)?;
        let anchor_embedding = net.embed(&anchor_image)?;
        Ok(Self {
            anchor_image,
            anchor_class,
            net,
            sigma,
            mapping,
            anchor_embedding,
        })
    }

    /// Same kernel with a different RBF bandwidth or distance mapping.
    pub fn with_bandwidth(mut self, sigma: f64, mapping: DistanceMapping) -> Result<Self> {
        gaussian_rbf_with(0.0, sigma, mapping)?;
        self.sigma = sigma;
        self.mapping = mapping;
        Ok(self)
    }

    pub fn anchor_image(&self) -> &Tensor {
        &self.anchor_image
    }

    pub fn anchor_class(&self) -> usize {
        self.anchor_class
    }

    pub fn anchor_embedding(&self) -> &[f64] {
        &self.anchor_embedding
    }

    pub fn network(&self) -> &EmbeddingNetwork {
        &self.net
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mapping(&self) -> DistanceMapping {
        self.mapping
    }

    fn similarity_from_embedding(&self, e: &[f64]) -> f64 {
        let d = cosine_distance(e, &self.anchor_embedding);
        gaussian_rbf_with(d, self.sigma, self.mapping).expect("validated bandwidth")
    }

    /// `rbf(cosine_distance(embed(image), anchor_embedding))`, in `(0, 1]`.
    pub fn similarity(&self, image: &Tensor) -> Result<f64> {
        Ok(self.similarity_from_embedding(&self.net.embed(image)?))
    }

    /// Similarities for a batch `[N, H, W, C]`.
    pub fn similarities(&self, images: &Tensor) -> Result<Vec<f64>> {
        let emb = self.net.embed_batch(images)?;
        let d = self.net.embedding_dim();
        Ok(emb.data().chunks(d).map(|e| self.similarity_from_embedding(e)).collect())
    }

    pub(crate) fn to_parts(&self) -> Result<(Value, Vec<Tensor>)> {
        let descriptor = serde_json::json!({
            "backbone": self.net.config(),
            "anchor_class": self.anchor_class,
            "sigma": self.sigma,
            "mapping": self.mapping,
        });
        let mut tensors = vec![self.anchor_image.clone()];
        tensors.extend(self.net.param_values());
        Ok((descriptor, tensors))
    }

    pub(crate) fn from_parts(descriptor: &Value, mut tensors: Vec<Tensor>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Desc {
            backbone: BackboneConfig,
            anchor_class: usize,
            sigma: f64,
            mapping: DistanceMapping,
        }
        let d: Desc = serde_json::from_value(descriptor.clone())?;
        if tensors.is_empty() {
            return Err(Error::Container("kernel without anchor image".into()));
        }
        let anchor = tensors.remove(0);
        let net = EmbeddingNetwork::from_parts(d.backbone, tensors)?;
        Self::new(anchor, d.anchor_class, net, d.sigma, d.mapping)
    }

    /// Number of tensors `to_parts` emits.
    pub(crate) fn part_count(&self) -> usize {
        1 + self.net.network().params().len()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (descriptor, tensors) = self.to_parts()?;
        container::write_file(path, Kind::Kernel, &descriptor, &tensors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (descriptor, tensors) = container::read_file(path, Kind::Kernel)?;
        Self::from_parts(&descriptor, tensors)
    }
}

/// A trained kernel plus the mean triplet loss of every step.
#[derive(Debug, Clone)]
pub struct TrainedKernel {
    pub kernel: SiameseKernel,
    pub losses: Vec<f64>,
}

/// Trains a fresh embedding network around a fixed anchor.
///
/// Each step draws `batch_triplets` positives from the anchor's class (never
/// an exact copy of the anchor unless nothing else exists) and as many
/// negatives (class-uniform, then image-uniform), embeds anchor, positives and
/// negatives in one batch through the shared weights, mines one semi-hard
/// negative per positive, and takes an Adam step on the mean triplet loss.
pub fn train_kernel(
    anchor: &Tensor,
    anchor_class: usize,
    train_set: &LabeledDataset,
    backbone: &BackboneConfig,
    cfg: &KernelTrainConfig,
) -> Result<TrainedKernel> {
    cfg.validate()?;
    if anchor_class >= train_set.class_count() {
        return Err(Error::InvalidArgument(format!(
            "anchor class {anchor_class} outside [0, {})",
            train_set.class_count()
        )));
    }
    let same = train_set.class_indices(anchor_class);
    let mut positives: Vec<usize> = same
        .iter()
        .copied()
        .filter(|&i| !train_set.image(i).bitwise_eq(anchor))
        .collect();
    if positives.is_empty() {
        if same.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "training set has no images of class {anchor_class}"
            )));
        }
        positives = same;
    }
    let negative_classes: Vec<Vec<usize>> = (0..train_set.class_count())
        .filter(|&c| c != anchor_class)
        .map(|c| train_set.class_indices(c))
        .filter(|idx| !idx.is_empty())
        .collect();
    if negative_classes.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "training set has no images outside class {anchor_class}"
        )));
    }

    let mut net = EmbeddingNetwork::build(backbone.clone(), cfg.seed)?;
    let mut opt = Adam::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let b = cfg.batch_triplets;
    let dim = backbone.embedding_dim;
    let mut losses = Vec::with_capacity(cfg.iterations);

    for _ in 0..cfg.iterations {
        let mut batch: Vec<&Tensor> = Vec::with_capacity(1 + 2 * b);
        batch.push(anchor);
        for _ in 0..b {
            batch.push(train_set.image(positives[rng.gen_range(0..positives.len())]));
        }
        for _ in 0..b {
            let class = &negative_classes[rng.gen_range(0..negative_classes.len())];
            batch.push(train_set.image(class[rng.gen_range(0..class.len())]));
        }
        let x = Tensor::stack(&batch)?;
        let emb = net.forward(&x, Mode::Train)?;
        let rows: Vec<&[f64]> = emb.data().chunks(dim).collect();
        let a = rows[0];
        let d_ap: Vec<f64> = rows[1..=b].iter().map(|p| cosine_distance(a, p)).collect();
        let d_an: Vec<f64> = rows[b + 1..].iter().map(|n| cosine_distance(a, n)).collect();
        let mined = mine_semi_hard_distances(&d_ap, &d_an, cfg.margin)?;

        let mut grad = vec![0.0; emb.len()];
        let scale = 1.0 / mined.len() as f64;
        let mut loss = 0.0;
        for m in &mined {
            let (pi, ni) = (1 + m.positive, 1 + b + m.negative);
            let t = Triplet::new(a, rows[pi], rows[ni])?;
            let g = triplet_loss_grad(&t, cfg.margin);
            loss += g.loss * scale;
            for (row, gv) in [(0, &g.anchor), (pi, &g.positive), (ni, &g.negative)] {
                for (dst, v) in grad[row * dim..(row + 1) * dim].iter_mut().zip(gv) {
                    *dst += v * scale;
                }
            }
        }
        losses.push(loss);
        net.backward(&Tensor::new(emb.shape().to_vec(), grad)?)?;
        opt.step(&mut net.network_mut().params_mut())?;
    }

    let kernel = SiameseKernel::new(
        anchor.clone(),
        anchor_class,
        net,
        DEFAULT_SIGMA,
        DistanceMapping::Linear,
    )?;
    Ok(TrainedKernel { kernel, losses })
}

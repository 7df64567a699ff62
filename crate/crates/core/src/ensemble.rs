//! The full ensemble: `|C| * k` Siamese kernels feeding an MLP head.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{self, Kind};
use crate::data::{augment, AugmentationConfig, LabeledDataset, Provenance};
use crate::embedding::{BackboneConfig, Preset};
use crate::error::{Error, Result};
use crate::kernel::{train_kernel, KernelTrainConfig, SiameseKernel, TrainedKernel};
use crate::layers::{softmax, LayerSpec};
use crate::metric::{DistanceMapping, DEFAULT_SIGMA};
use crate::network::{Mode, Sequential};
use crate::optim::Adam;
use crate::tensor::Tensor;

/// Images embedded per forward call when computing similarity matrices.
const CHUNK: usize = 64;

const HEAD_WIDTH: usize = 50;
const HEAD_DEPTH: usize = 4;
const HEAD_DROPOUT: f64 = 0.1;
/// Output-layer weights are shrunk by this factor so the untrained head is
/// close to uniform.
const HEAD_OUTPUT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpTrainConfig {
    pub lr: f64,
    /// Gradient steps.
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl MlpTrainConfig {
    pub fn paper() -> Self {
        Self {
            lr: 1e-6,
            iterations: 1000,
            batch_size: 32,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            iterations: 2000,
            batch_size: 32,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "MLP training config must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

/// Everything `train_sbf` needs besides the data.
///
/// `seed` drives center selection, kernel `j` (trained with seed `seed ^ j`)
/// and the head; the `seed` fields of the nested kernel and MLP configs are
/// overwritten with derived values. Augmentation uses its own seed as given,
/// so other models can be trained on the identical augmented pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub centers_per_class: usize,
    pub sigma: f64,
    #[serde(default)]
    pub mapping: DistanceMapping,
    pub backbone: BackboneConfig,
    pub kernel: KernelTrainConfig,
    pub mlp: MlpTrainConfig,
    pub augmentation: AugmentationConfig,
    pub seed: u64,
    /// Worker threads for kernel training; 0 uses every available CPU.
    #[serde(default)]
    pub jobs: usize,
}

impl EnsembleConfig {
    pub fn paper(backbone: BackboneConfig) -> Self {
        Self {
            centers_per_class: 5,
            sigma: DEFAULT_SIGMA,
            mapping: DistanceMapping::Linear,
            backbone,
            kernel: KernelTrainConfig::paper(),
            mlp: MlpTrainConfig::paper(),
            augmentation: AugmentationConfig::default(),
            seed: 0,
            jobs: 0,
        }
    }

    pub fn desk(backbone: BackboneConfig) -> Self {
        Self {
            kernel: KernelTrainConfig::desk(),
            mlp: MlpTrainConfig::desk(),
            ..Self::paper(backbone)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers_per_class == 0 {
            return Err(Error::InvalidArgument("centers_per_class must be at least 1".into()));
        }
        crate::metric::gaussian_rbf_with(0.0, self.sigma, self.mapping)?;
        self.backbone.validate()?;
        self.kernel.validate()?;
        self.mlp.validate()?;
        self.augmentation.validate()
    }
}

/// Derives a sub-seed for one named stage.
fn stage_seed(seed: u64, stage: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5bf0 + stage);
    rand::Rng::gen(&mut rng)
}

const STAGE_CENTERS: u64 = 1;
const STAGE_HEAD: u64 = 2;

/// Picks `k` distinct images per class uniformly at random. Returns dataset
/// indices, class-major and ascending within a class.
pub fn select_centers(train_set: &LabeledDataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(train_set.class_count() * k);
    for class in 0..train_set.class_count() {
        let idx = train_set.class_indices(class);
        if idx.len() < k {
            return Err(Error::InsufficientClass {
                class,
                available: idx.len(),
                required: k,
            });
        }
        let mut picked: Vec<usize> = index::sample(&mut rng, idx.len(), k)
            .into_iter()
            .map(|i| idx[i])
            .collect();
        picked.sort_unstable();
        out.extend(picked);
    }
    Ok(out)
}

/// Runs `f` on a pool of `jobs` threads (0 = rayon default).
fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Stage 1: one kernel per center, trained on `pool` (normally the augmented
/// training set). Kernel `j` uses seed `cfg.seed ^ j`.
pub fn train_kernels(
    centers: &[(Tensor, usize)],
    pool: &LabeledDataset,
    cfg: &EnsembleConfig,
) -> Result<Vec<TrainedKernel>> {
    with_pool(cfg.jobs, || {
        centers
            .par_iter()
            .enumerate()
            .map(|(j, (image, class))| {
                let kcfg = KernelTrainConfig {
                    seed: cfg.seed ^ j as u64,
                    ..cfg.kernel.clone()
                };
                let trained = train_kernel(image, *class, pool, &cfg.backbone, &kcfg)?;
                Ok(TrainedKernel {
                    kernel: trained.kernel.with_bandwidth(cfg.sigma, cfg.mapping)?,
                    losses: trained.losses,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?
}

/// `[N, K]` matrix of kernel similarities for `images`.
pub fn similarity_matrix(kernels: &[SiameseKernel], images: &[Tensor]) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let columns: Vec<Vec<f64>> = kernels
        .par_iter()
        .map(|k| {
            let mut col = Vec::with_capacity(images.len());
            for chunk in images.chunks(CHUNK) {
                let refs: Vec<&Tensor> = chunk.iter().collect();
                col.extend(k.similarities(&Tensor::stack(&refs)?)?);
            }
            Ok(col)
        })
        .collect::<Result<_>>()?;
    let (n, m) = (images.len(), kernels.len());
    let mut data = vec![0.0; n * m];
    for (j, col) in columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            data[i * m + j] = *v;
        }
    }
    Tensor::new(vec![n, m], data)
}

/// Four `dense(50) + relu + dropout(0.1)` blocks and a `dense(|C|)` output;
/// softmax is applied on top of the logits.
#[derive(Debug, Clone)]
pub struct MlpHead {
    net: Sequential,
}

impl MlpHead {
    pub fn layer_specs(inputs: usize, classes: usize) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut width = inputs;
        for _ in 0..HEAD_DEPTH {
            specs.push(LayerSpec::dense(width, HEAD_WIDTH));
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::Dropout { rate: HEAD_DROPOUT });
            width = HEAD_WIDTH;
        }
        specs.push(LayerSpec::dense(width, classes));
        specs
    }

    pub fn new(inputs: usize, classes: usize, seed: u64) -> Result<Self> {
        let mut net = Sequential::new(&[inputs], Self::layer_specs(inputs, classes), seed)?;
        let mut params = net.params_mut();
        let out_weight = params.len() - 2;
        params[out_weight].value = params[out_weight].value.map(|w| w * HEAD_OUTPUT_SCALE);
        Ok(Self { net })
    }

    pub fn input_width(&self) -> usize {
        self.net.input_shape()[0]
    }

    pub fn class_count(&self) -> usize {
        self.net.output_shape()[0]
    }

    pub fn network(&self) -> &Sequential {
        &self.net
    }

    /// Class probabilities for one vector `[K]` or a batch `[N, K]`.
    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        softmax(&self.net.infer(x)?)
    }
}

/// Mean cross-entropy of `probs` rows against `labels`, and the gradient with
/// respect to the logits (`(p - onehot) / N`).
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let classes = probs.shape()[1];
    let n = labels.len() as f64;
    let mut grad = probs.clone();
    let mut loss = 0.0;
    for (row, &y) in grad.data_mut().chunks_mut(classes).zip(labels) {
        loss -= row[y].max(f64::MIN_POSITIVE).ln();
        row[y] -= 1.0;
        row.iter_mut().for_each(|g| *g /= n);
    }
    (loss / n, grad)
}

/// Loss trace of head training.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLog {
    /// Cross-entropy of the first mini-batch before any update.
    pub initial_loss: f64,
    pub losses: Vec<f64>,
}

/// Stage 2: trains a fresh head on precomputed similarity vectors with
/// cross-entropy and Adam over shuffled mini-batches.
pub fn train_head(
    features: &Tensor,
    labels: &[usize],
    classes: usize,
    cfg: &MlpTrainConfig,
) -> Result<(MlpHead, HeadLog)> {
    cfg.validate()?;
    let n = labels.len();
    if features.shape().len() != 2 || features.shape()[0] != n || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "features {:?} do not match {n} labels",
            features.shape()
        )));
    }
    let width = features.shape()[1];
    let mut head = MlpHead::new(width, classes, cfg.seed)?;
    let mut opt = Adam::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut initial_loss = None;

    for _ in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(n) {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let mut x = Vec::with_capacity(batch.len() * width);
        for &i in &batch {
            x.extend_from_slice(features.row(i));
        }
        let x = Tensor::new(vec![batch.len(), width], x)?;
        let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
        if initial_loss.is_none() {
            initial_loss = Some(cross_entropy(&head.probabilities(&x)?, &y).0);
        }
        let logits = head.net.forward(&x, Mode::Train)?;
        let (loss, grad) = cross_entropy(&softmax(&logits)?, &y);
        losses.push(loss);
        head.net.backward(&grad)?;
        opt.step(&mut head.net.params_mut())?;
    }
    let log = HeadLog {
        initial_loss: initial_loss.expect("at least one iteration"),
        losses,
    };
    Ok((head, log))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probabilities: Vec<f64>,
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `None` for classes absent from the evaluation set.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if truth.len() != predicted.len() {
            return Err(Error::InvalidArgument("prediction count mismatch".into()));
        }
        let mut confusion = vec![vec![0; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::InvalidArgument(format!("label outside [0, {classes})")));
            }
            confusion[t][p] += 1;
        }
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let total: usize = row.iter().sum();
                (total > 0).then(|| row[c] as f64 / total as f64)
            })
            .collect();
        Ok(Self {
            accuracy: correct as f64 / truth.len() as f64,
            per_class_accuracy,
            confusion,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SbfNet {
    kernels: Vec<SiameseKernel>,
    head: MlpHead,
    centers_per_class: usize,
    config: EnsembleConfig,
}

/// A trained network with its training traces.
#[derive(Debug, Clone)]
pub struct TrainedSbf {
    pub net: SbfNet,
    /// Dataset indices (into the raw training set) of the chosen centers.
    pub centers: Vec<usize>,
    pub kernel_losses: Vec<Vec<f64>>,
    pub head_log: HeadLog,
}

/// Selects centers, augments, trains every kernel, then trains the head on
/// similarity vectors of the unaugmented training images.
pub fn train_sbf(train_set: &LabeledDataset, cfg: &EnsembleConfig) -> Result<TrainedSbf> {
    cfg.validate()?;
    if train_set.provenance() == Provenance::Augmented {
        return Err(Error::InvalidArgument(
            "train_sbf expects raw data; augmentation is configured in EnsembleConfig".into(),
        ));
    }
    if train_set.class_count() < 2 {
        return Err(Error::InvalidArgument("at least two classes are required".into()));
    }
    let k = cfg.centers_per_class;
    let centers = select_centers(train_set, k, stage_seed(cfg.seed, STAGE_CENTERS))?;
    let anchors: Vec<(Tensor, usize)> = centers
        .iter()
        .map(|&i| (train_set.image(i).clone(), train_set.label(i)))
        .collect();
    let pool = augment(train_set, &cfg.augmentation)?;
    let trained = train_kernels(&anchors, &pool, cfg)?;
    let (kernels, kernel_losses): (Vec<_>, Vec<_>) =
        trained.into_iter().map(|t| (t.kernel, t.losses)).unzip();

    let features = similarity_matrix(&kernels, train_set.images())?;
    let mlp = MlpTrainConfig {
        seed: stage_seed(cfg.seed, STAGE_HEAD),
        ..cfg.mlp.clone()
    };
    let (head, head_log) = train_head(&features, train_set.labels(), train_set.class_count(), &mlp)?;
    Ok(TrainedSbf {
        net: SbfNet::new(kernels, head, k, cfg.clone())?,
        centers,
        kernel_losses,
        head_log,
    })
}

impl SbfNet {
    /// Assembles a network, checking the class-major kernel layout.
    pub fn new(kernels: Vec<SiameseKernel>, head: MlpHead, centers_per_class: usize, config: EnsembleConfig) -> Result<Self> {
        let classes = head.class_count();
        if kernels.len() != classes * centers_per_class || head.input_width() != kernels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} kernels and head width {} do not match {classes} classes x {centers_per_class} centers",
                kernels.len(),
                head.input_width()
            )));
        }
        for (j, kernel) in kernels.iter().enumerate() {
            if kernel.anchor_class() != j / centers_per_class {
                return Err(Error::InvalidArgument(format!(
                    "kernel {j} belongs to class {} but sits in the slot of class {}",
                    kernel.anchor_class(),
                    j / centers_per_class
                )));
            }
        }
        Ok(Self {
            kernels,
            head,
            centers_per_class,
            config,
        })
    }

    pub fn kernels(&self) -> &[SiameseKernel] {
        &self.kernels
    }

    pub fn head(&self) -> &MlpHead {
        &self.head
    }

    pub fn class_count(&self) -> usize {
        self.head.class_count()
    }

    pub fn centers_per_class(&self) -> usize {
        self.centers_per_class
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    /// Kernel similarities, class-major then center-minor.
    pub fn similarity_vector(&self, image: &Tensor) -> Result<Vec<f64>> {
        self.kernels.iter().map(|k| k.similarity(image)).collect()
    }

    pub fn similarity_matrix(&self, images: &[Tensor]) -> Result<Tensor> {
        similarity_matrix(&self.kernels, images)
    }

    pub fn predict(&self, image: &Tensor) -> Result<Prediction> {
        let s = Tensor::from_vec(self.similarity_vector(image)?)?;
        let p = self.head.probabilities(&s)?.into_data();
        Ok(Prediction {
            class: argmax(&p),
            probabilities: p,
        })
    }

    pub fn predict_batch(&self, images: &[Tensor]) -> Result<Vec<Prediction>> {
        let probs = self.head.probabilities(&self.similarity_matrix(images)?)?;
        let c = self.class_count();
        Ok(probs
            .data()
            .chunks(c)
            .map(|p| Prediction {
                class: argmax(p),
                probabilities: p.to_vec(),
            })
            .collect())
    }

    pub fn evaluate(&self, test_set: &LabeledDataset) -> Result<EvalReport> {
        if test_set.provenance() == Provenance::Augmented {
            return Err(Error::AugmentedEvaluation);
        }
        if test_set.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let predicted: Vec<usize> = self
            .predict_batch(test_set.images())?
            .into_iter()
            .map(|p| p.class)
            .collect();
        EvalReport::from_predictions(test_set.labels(), &predicted, self.class_count())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut kernel_descriptors = Vec::with_capacity(self.kernels.len());
        let mut counts = Vec::with_capacity(self.kernels.len());
        let mut tensors = Vec::new();
        for k in &self.kernels {
            let (d, t) = k.to_parts()?;
            kernel_descriptors.push(d);
            counts.push(t.len());
            tensors.extend(t);
        }
        tensors.extend(self.head.net.params().into_iter().map(|p| p.value.clone()));
        let descriptor = serde_json::json!({
            "config": self.config,
            "class_count": self.class_count(),
            "centers_per_class": self.centers_per_class,
            "kernels": kernel_descriptors,
            "kernel_tensor_counts": counts,
        });
        container::write_file(path, Kind::SbfNet, &descriptor, &tensors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Desc {
            config: EnsembleConfig,
            class_count: usize,
            centers_per_class: usize,
            kernels: Vec<serde_json::Value>,
            kernel_tensor_counts: Vec<usize>,
        }
        let (descriptor, tensors) = container::read_file(path, Kind::SbfNet)?;
        let d: Desc = serde_json::from_value(descriptor)?;
        if d.kernels.len() != d.kernel_tensor_counts.len() {
            return Err(Error::Container("kernel descriptor count mismatch".into()));
        }
        let mut rest = tensors.into_iter();
        let mut kernels = Vec::with_capacity(d.kernels.len());
        for (desc, &count) in d.kernels.iter().zip(&d.kernel_tensor_counts) {
            let parts: Vec<Tensor> = rest.by_ref().take(count).collect();
            if parts.len() != count {
                return Err(Error::Container("missing kernel tensors".into()));
            }
            let kernel = SiameseKernel::from_parts(desc, parts)?;
            debug_assert_eq!(kernel.part_count(), count);
            kernels.push(kernel);
        }
        let mut head = MlpHead::new(kernels.len(), d.class_count, 0)?;
        head.net.set_params(rest.collect())?;
        Self::new(kernels, head, d.centers_per_class, d.config)
    }
}

/// Default backbone for a dataset image shape: `small28` for 28x28x1,
/// `small32` for 32x32x3, otherwise an equivalent two-block custom stack.
pub fn backbone_for_shape(shape: [usize; 3]) -> BackboneConfig {
    for preset in [Preset::Small28, Preset::Small32, Preset::Vgg16_100] {
        if preset.input_shape() == Some(shape) {
            return BackboneConfig::preset(preset).expect("named preset");
        }
    }
    BackboneConfig::custom(shape, vec![vec![32], vec![64]], 100)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gaussian_blobs;
    use crate::metric::Margin;

    pub(crate) fn toy_config() -> EnsembleConfig {
        EnsembleConfig {
            centers_per_class: 2,
            sigma: DEFAULT_SIGMA,
            mapping: DistanceMapping::Linear,
            backbone: BackboneConfig::custom([8, 8, 1], vec![vec![4]], 8),
            kernel: KernelTrainConfig {
                lr: 1e-2,
                iterations: 30,
                batch_triplets: 8,
                margin: Margin::default(),
                seed: 0,
            },
            mlp: MlpTrainConfig {
                lr: 1e-2,
                iterations: 300,
                batch_size: 16,
                seed: 0,
            },
            augmentation: AugmentationConfig {
                copies: 1,
                ..AugmentationConfig::default()
            },
            seed: 11,
            jobs: 1,
        }
    }

    #[test]
    fn center_selection() {
        let ds = gaussian_blobs(2, 1, 8, 0);
        assert_eq!(select_centers(&ds, 1, 3).unwrap(), vec![0, 1]);
        let big = gaussian_blobs(6, 100, 4, 0);
        let c = select_centers(&big, 5, 1).unwrap();
        assert_eq!(c.len(), 30);
        for class in 0..6 {
            assert!(c[class * 5..(class + 1) * 5].iter().all(|&i| big.label(i) == class));
        }
        assert_eq!(c, select_centers(&big, 5, 1).unwrap());
        assert_ne!(c, select_centers(&big, 5, 2).unwrap());
        assert!(matches!(
            select_centers(&ds, 2, 0),
            Err(Error::InsufficientClass { class: 0, available: 1, required: 2 })
        ));
    }

    #[test]
    fn head_shape_and_initial_loss() {
        let head = MlpHead::new(30, 6, 0).unwrap();
        assert_eq!(head.input_width(), 30);
        assert_eq!(head.class_count(), 6);
        let x = Tensor::new(vec![4, 30], (0..120).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let (loss, _) = cross_entropy(&head.probabilities(&x).unwrap(), &[0, 1, 2, 3]);
        assert!((loss / 6f64.ln() - 1.0).abs() < 0.2);
    }

    #[test]
    fn eval_report_arithmetic() {
        let r = EvalReport::from_predictions(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.per_class_accuracy, vec![Some(0.5), Some(1.0)]);
        assert_eq!(r.confusion, vec![vec![1, 1], vec![0, 2]]);
        assert!(EvalReport::from_predictions(&[], &[], 2).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.25, 0.5, 0.5, 0.1]), 1);
    }

    #[test]
    fn end_to_end_toy() {
        let ds = gaussian_blobs(2, 12, 8, 4);
        let cfg = toy_config();
        let t = train_sbf(&ds, &cfg).unwrap();
        let net = &t.net;
        assert_eq!(net.kernels().len(), 4);
        assert_eq!(net.head().input_width(), 4);
        assert!((t.head_log.initial_loss / 2f64.ln() - 1.0).abs() < 0.2);
        assert!(net.evaluate(&ds).unwrap().accuracy >= 0.9);

        for (j, k) in net.kernels().iter().enumerate() {
            let s = net.similarity_vector(k.anchor_image()).unwrap();
            assert_eq!(s[j], 1.0);
            assert_eq!(net.predict(k.anchor_image()).unwrap().class, k.anchor_class());
        }
        let batch = net.predict_batch(ds.images()).unwrap();
        for (i, p) in batch.iter().enumerate() {
            let single = net.predict(ds.image(i)).unwrap();
            assert_eq!(p, &single);
            assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.sbf");
        net.save(&path).unwrap();
        let back = SbfNet::load(&path).unwrap();
        assert_eq!(back.predict_batch(ds.images()).unwrap(), batch);
        assert_eq!(back.config(), net.config());
    }
}

//! Plain CNN classifier used as the comparison model: the same backbone as
//! the kernels followed by `dense(|C|)` and softmax, trained end to end.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Provenance};
use crate::embedding::BackboneConfig;
use crate::ensemble::EvalReport;
use crate::error::{Error, Result};
use crate::layers::{softmax, LayerSpec};
use crate::network::{Mode, Sequential};
use crate::optim::Adam;
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub lr: f64,
    pub iterations: usize,
    pub batch_size: usize,
}

impl BaselineConfig {
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            iterations: 200,
            batch_size: 32,
        }
    }

    pub fn paper() -> Self {
        Self {
            lr: 1e-5,
            iterations: 5000,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineCnn {
    net: Sequential,
}

impl BaselineCnn {
    pub fn build(backbone: &BackboneConfig, classes: usize, seed: u64) -> Result<Self> {
        let mut specs = backbone.layer_specs()?;
        specs.push(LayerSpec::dense(backbone.embedding_dim, classes));
        Ok(Self {
            net: Sequential::new(&backbone.input_shape, specs, seed)?,
        })
    }

    pub fn class_count(&self) -> usize {
        self.net.output_shape()[0]
    }

    /// Class probabilities `[N, |C|]` for a batch `[N, H, W, C]`.
    pub fn probabilities(&self, images: &Tensor) -> Result<Tensor> {
        softmax(&self.net.infer(images)?)
    }

    pub fn predict_batch(&self, images: &[Tensor]) -> Result<Vec<usize>> {
        let c = self.class_count();
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EVAL_CHUNK) {
            let refs: Vec<&Tensor> = chunk.iter().collect();
            let p = self.probabilities(&Tensor::stack(&refs)?)?;
            for row in p.data().chunks(c) {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                out.push(best);
            }
        }
        Ok(out)
    }

    pub fn evaluate(&self, test_set: &LabeledDataset) -> Result<EvalReport> {
        if test_set.provenance() == Provenance::Augmented {
            return Err(Error::AugmentedEvaluation);
        }
        if test_set.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let predicted = self.predict_batch(test_set.images())?;
        EvalReport::from_predictions(test_set.labels(), &predicted, self.class_count())
    }
}

/// Cross-entropy / Adam training over shuffled mini-batches of `train_set`.
pub fn train_baseline(
    train_set: &LabeledDataset,
    backbone: &BackboneConfig,
    cfg: &BaselineConfig,
    seed: u64,
) -> Result<BaselineCnn> {
    if !(cfg.lr > 0.0) || cfg.iterations == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument(format!("invalid baseline config {cfg:?}")));
    }
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = train_set.class_count();
    let mut model = BaselineCnn::build(backbone, classes, seed)?;
    let mut opt = Adam::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
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
        let x = train_set.batch(&batch)?;
        let logits = model.net.forward(&x, Mode::Train)?;
        let mut grad = softmax(&logits)?;
        let scale = 1.0 / batch.len() as f64;
        for (row, &i) in grad.data_mut().chunks_mut(classes).zip(&batch) {
            row[train_set.label(i)] -= 1.0;
            row.iter_mut().for_each(|g| *g *= scale);
        }
        model.net.backward(&grad)?;
        opt.step(&mut model.net.params_mut())?;
    }
    Ok(model)
}

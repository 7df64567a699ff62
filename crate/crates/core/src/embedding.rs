//! Convolutional embedding backbones.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::container::{self, Kind};
use crate::error::{Error, Result};
use crate::layers::LayerSpec;
use crate::network::{Mode, Sequential};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// VGG16 conv stack on 200x200 inputs, ending at 6x6x512.
    Vgg16_100,
    /// Two conv/pool stages for 28x28x1 inputs.
    Small28,
    /// Two conv/pool stages for 32x32x3 inputs.
    Small32,
    /// Caller-supplied conv blocks and input shape.
    Custom,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Vgg16_100 => "vgg16_100",
            Preset::Small28 => "small28",
            Preset::Small32 => "small32",
            Preset::Custom => "custom",
        }
    }

    /// Native input shape; `None` for `Custom`.
    pub fn input_shape(self) -> Option<[usize; 3]> {
        match self {
            Preset::Vgg16_100 => Some([200, 200, 1]),
            Preset::Small28 => Some([28, 28, 1]),
            Preset::Small32 => Some([32, 32, 3]),
            Preset::Custom => None,
        }
    }

    /// Output channels of every conv layer, grouped into pooled blocks.
    pub fn conv_blocks(self) -> Option<Vec<Vec<usize>>> {
        match self {
            Preset::Vgg16_100 => Some(vec![
                vec![64, 64],
                vec![128, 128],
                vec![256, 256, 256],
                vec![512, 512, 512],
                vec![512, 512, 512],
            ]),
            Preset::Small28 | Preset::Small32 => Some(vec![vec![32], vec![64]]),
            Preset::Custom => None,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vgg16_100" => Ok(Preset::Vgg16_100),
            "small28" => Ok(Preset::Small28),
            "small32" => Ok(Preset::Small32),
            "custom" => Ok(Preset::Custom),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub preset: Preset,
    pub input_shape: [usize; 3],
    pub embedding_dim: usize,
    /// Conv channels per pooled block; only read for `Custom`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv_blocks: Option<Vec<Vec<usize>>>,
}

impl BackboneConfig {
    /// A named preset at its native input shape with 100-dim embeddings.
    pub fn preset(preset: Preset) -> Result<Self> {
        let input_shape = preset.input_shape().ok_or_else(|| {
            Error::InvalidArgument("the custom preset needs explicit conv blocks".into())
        })?;
        Ok(Self {
            preset,
            input_shape,
            embedding_dim: 100,
            conv_blocks: None,
        })
    }

    pub fn custom(input_shape: [usize; 3], conv_blocks: Vec<Vec<usize>>, embedding_dim: usize) -> Self {
        Self {
            preset: Preset::Custom,
            input_shape,
            embedding_dim,
            conv_blocks: Some(conv_blocks),
        }
    }

    fn blocks(&self) -> Result<Vec<Vec<usize>>> {
        match self.preset.conv_blocks() {
            Some(b) => Ok(b),
            None => self
                .conv_blocks
                .clone()
                .ok_or_else(|| Error::InvalidArgument("custom backbone without conv blocks".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "embedding_dim must be at least 2, got {}",
                self.embedding_dim
            )));
        }
        if let Some(native) = self.preset.input_shape() {
            if native != self.input_shape {
                return Err(Error::InvalidArgument(format!(
                    "preset {} expects input {:?}, got {:?}",
                    self.preset, native, self.input_shape
                )));
            }
        }
        Ok(())
    }

    /// Conv stack, flatten, then two `dense(embedding_dim) + relu` layers.
    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        self.validate()?;
        let mut specs = Vec::new();
        let [mut h, mut w, mut c] = self.input_shape;
        for block in self.blocks()? {
            for out in block {
                specs.push(LayerSpec::conv3x3(c, out));
                specs.push(LayerSpec::Relu);
                c = out;
            }
            specs.push(LayerSpec::pool2x2());
            h /= 2;
            w /= 2;
        }
        let d = self.embedding_dim;
        specs.extend([
            LayerSpec::Flatten,
            LayerSpec::dense(h * w * c, d),
            LayerSpec::Relu,
            LayerSpec::dense(d, d),
            LayerSpec::Relu,
        ]);
        Ok(specs)
    }
}

/// A backbone mapping `[H, W, C]` images to non-negative embeddings.
#[derive(Debug, Clone)]
pub struct EmbeddingNetwork {
    config: BackboneConfig,
    net: Sequential,
}

impl EmbeddingNetwork {
    pub fn build(config: BackboneConfig, seed: u64) -> Result<Self> {
        let specs = config.layer_specs()?;
        let net = Sequential::new(&config.input_shape, specs, seed)?;
        Ok(Self { config, net })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn network(&self) -> &Sequential {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Sequential {
        &mut self.net
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    /// Embedding of a single image (inference mode).
    pub fn embed(&self, image: &Tensor) -> Result<Vec<f64>> {
        self.check_image(image)?;
        Ok(self.net.infer(image)?.into_data())
    }

    /// Embeddings `[N, D]` of a batch `[N, H, W, C]` (inference mode).
    pub fn embed_batch(&self, images: &Tensor) -> Result<Tensor> {
        self.net.infer(images)
    }

    /// Forward pass in either mode; training mode caches for `backward`.
    pub fn forward(&mut self, images: &Tensor, mode: Mode) -> Result<Tensor> {
        self.net.forward(images, mode)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        self.net.backward(grad)
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        if image.shape() != self.config.input_shape {
            return Err(Error::ShapeMismatch {
                layer: 0,
                expected: self.config.input_shape.to_vec(),
                actual: image.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub(crate) fn param_values(&self) -> Vec<Tensor> {
        self.net.params().into_iter().map(|p| p.value.clone()).collect()
    }

    pub(crate) fn from_parts(config: BackboneConfig, params: Vec<Tensor>) -> Result<Self> {
        let mut net = Self::build(config, 0)?;
        net.net.set_params(params)?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let descriptor = serde_json::to_value(&self.config)?;
        container::write_file(path, Kind::Embedding, &descriptor, &self.param_values())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (descriptor, tensors) = container::read_file(path, Kind::Embedding)?;
        Self::from_parts(serde_json::from_value(descriptor)?, tensors)
    }
}

//! Siamese basis-function networks: one Siamese kernel per fixed center
//! image, a Gaussian RBF over embedding distances, and an MLP head over the
//! resulting similarity vector.

pub mod baseline;
pub mod container;
pub mod data;
pub mod embedding;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod layers;
mod linalg;
pub mod metric;
pub mod network;
pub mod optim;
pub mod tensor;

pub use data::LabeledDataset;
pub use embedding::{BackboneConfig, EmbeddingNetwork, Preset};
pub use ensemble::{train_sbf, EnsembleConfig, EvalReport, MlpTrainConfig, SbfNet};
pub use error::{Error, Result};
pub use kernel::{train_kernel, KernelTrainConfig, SiameseKernel};
pub use tensor::{Param, Tensor};

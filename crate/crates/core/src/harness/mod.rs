//! Experiment orchestration behind the `sbfnet` command line.

mod report;
mod run;

pub use report::{
    read_rows, render_report, summary_table, write_rows, Model, ReportWriter, ResultRow, CSV_HEADER,
};
pub use run::{
    cmd_baseline, cmd_eval, cmd_sweep, cmd_train, effective_centers, prepare_cell, run_baseline_cell, run_sbf_cell,
    CellData, SweepOutcome,
};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineConfig;
use crate::data::{
    cap_per_class, load_cifar10_bin, load_idx, load_image_dir, AugmentationConfig, ImageDirOptions,
    LabeledDataset, SampleSize,
};
use crate::embedding::{BackboneConfig, Preset};
use crate::ensemble::{backbone_for_shape, EnsembleConfig, MlpTrainConfig};
use crate::error::{Error, Result};
use crate::kernel::KernelTrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    MnistIdx,
    ImageDir,
    Cifar10Bin,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist-idx" => Ok(DatasetKind::MnistIdx),
            "image-dir" => Ok(DatasetKind::ImageDir),
            "cifar10-bin" => Ok(DatasetKind::Cifar10Bin),
            other => Err(Error::InvalidArgument(format!("unknown dataset kind `{other}`"))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::MnistIdx => "mnist-idx",
            DatasetKind::ImageDir => "image-dir",
            DatasetKind::Cifar10Bin => "cifar10-bin",
        })
    }
}

/// Hyperparameter family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunPreset {
    /// Values of the original experiments (slow on a CPU).
    Paper,
    /// Shortened schedules for single-machine runs.
    #[default]
    Desk,
}

impl FromStr for RunPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(RunPreset::Paper),
            "desk" => Ok(RunPreset::Desk),
            other => Err(Error::InvalidArgument(format!("unknown preset `{other}`"))),
        }
    }
}

fn default_samples() -> Vec<SampleSize> {
    [3, 5, 10, 20, 50, 100].into_iter().map(SampleSize::Count).collect()
}

fn default_centers() -> Vec<usize> {
    vec![5]
}

fn default_repeats() -> usize {
    5
}

fn default_test_fraction() -> f64 {
    0.25
}

/// One experiment, as read from a JSON config file (CLI flags override it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub dataset: DatasetKind,
    pub data_root: PathBuf,
    /// Label for the `dataset` report column; defaults to the root's file name.
    #[serde(default)]
    pub name: Option<String>,
    /// Backbone preset; chosen from the image shape when absent.
    #[serde(default)]
    pub backbone: Option<Preset>,
    /// Resize target `(height, width)` for image directories.
    #[serde(default)]
    pub image_size: Option<(usize, usize)>,
    #[serde(default = "default_samples")]
    pub samples: Vec<SampleSize>,
    #[serde(default = "default_centers")]
    pub centers: Vec<usize>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub preset: RunPreset,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Cap on images per class kept from the source before splitting.
    #[serde(default)]
    pub max_per_class: Option<usize>,
    #[serde(default)]
    pub jobs: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub model_out: Option<PathBuf>,
    /// Optional overrides of the preset's schedules.
    #[serde(default)]
    pub kernel: Option<KernelTrainConfig>,
    #[serde(default)]
    pub mlp: Option<MlpTrainConfig>,
    #[serde(default)]
    pub baseline: Option<BaselineConfig>,
    #[serde(default)]
    pub augmentation: Option<AugmentationConfig>,
}

impl ExperimentSpec {
    pub fn new(dataset: DatasetKind, data_root: impl Into<PathBuf>) -> Self {
        Self {
            dataset,
            data_root: data_root.into(),
            name: None,
            backbone: None,
            image_size: None,
            samples: default_samples(),
            centers: default_centers(),
            repeats: default_repeats(),
            preset: RunPreset::Desk,
            seed: 0,
            test_fraction: default_test_fraction(),
            max_per_class: None,
            jobs: 0,
            out: None,
            model_out: None,
            kernel: None,
            mlp: None,
            baseline: None,
            augmentation: None,
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() || self.centers.is_empty() {
            return Err(Error::InvalidArgument("samples and centers must be non-empty".into()));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidArgument("repeats must be at least 1".into()));
        }
        if self.centers.contains(&0) {
            return Err(Error::InvalidArgument("centers must be positive".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidArgument("test_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Name written to the `dataset` column.
    pub fn dataset_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.data_root
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| self.dataset.to_string())
        })
    }

    pub fn backbone_config(&self, image_shape: [usize; 3]) -> Result<BackboneConfig> {
        match self.backbone {
            Some(Preset::Custom) | None => Ok(backbone_for_shape(image_shape)),
            Some(p) => {
                let cfg = BackboneConfig::preset(p)?;
                cfg.validate()?;
                if cfg.input_shape != image_shape {
                    return Err(Error::InvalidArgument(format!(
                        "backbone {p} expects {:?} images but the dataset has {image_shape:?}",
                        cfg.input_shape
                    )));
                }
                Ok(cfg)
            }
        }
    }

    /// Ensemble settings for this spec, before per-cell seeds and `k`.
    pub fn ensemble_config(&self, backbone: BackboneConfig) -> EnsembleConfig {
        let mut cfg = match self.preset {
            RunPreset::Paper => EnsembleConfig::paper(backbone),
            RunPreset::Desk => EnsembleConfig::desk(backbone),
        };
        if let Some(k) = &self.kernel {
            cfg.kernel = k.clone();
        }
        if let Some(m) = &self.mlp {
            cfg.mlp = m.clone();
        }
        if let Some(a) = &self.augmentation {
            cfg.augmentation = a.clone();
        }
        cfg.jobs = self.jobs;
        cfg
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        self.baseline.clone().unwrap_or(match self.preset {
            RunPreset::Paper => BaselineConfig::paper(),
            RunPreset::Desk => BaselineConfig::desk(),
        })
    }

    /// Loads the source dataset and applies `max_per_class`.
    pub fn load_dataset(&self) -> Result<LabeledDataset> {
        let ds = match self.dataset {
            DatasetKind::MnistIdx => load_idx_dir(&self.data_root)?,
            DatasetKind::ImageDir => load_image_dir(
                &self.data_root,
                &ImageDirOptions {
                    size: self.image_size,
                    channels: None,
                },
            )?,
            DatasetKind::Cifar10Bin => load_cifar10_bin(&self.data_root)?,
        };
        Ok(match self.max_per_class {
            Some(max) => cap_per_class(&ds, max, derive_seed(self.seed, &[0xCA9])),
            None => ds,
        })
    }
}

/// Loads every `*idx3*` image file under `root` with its matching `*idx1*`
/// label file (same name with `images-idx3` replaced by `labels-idx1`) and
/// concatenates them in file-name order.
pub fn load_idx_dir(root: &Path) -> Result<LabeledDataset> {
    let mut image_files: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.contains("images-idx3"))
        })
        .collect();
    image_files.sort();
    if image_files.is_empty() {
        return Err(Error::Dataset {
            path: root.to_path_buf(),
            message: "no *images-idx3* files found".into(),
        });
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut classes = 0;
    for img in image_files {
        let name = img.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let lbl = img.with_file_name(name.replace("images-idx3", "labels-idx1"));
        let part = load_idx(&img, &lbl)?;
        classes = classes.max(part.class_count());
        images.extend(part.images().iter().cloned());
        labels.extend_from_slice(part.labels());
    }
    LabeledDataset::new(images, labels, classes)
}

/// Mixes `parts` into `base` (splitmix64 finalizer per step).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

//! Labeled image datasets: ingestion, splitting, subsampling and augmentation.

mod augment;
mod cache;
mod cifar;
mod idx;
mod image_dir;
mod imaging;
mod split;
mod synthetic;

pub use augment::{augment, augment_image, AugmentationConfig};
pub use cache::{read_cache, write_cache};
pub use cifar::load_cifar10_bin;
pub use idx::{load_idx, write_idx};
pub use image_dir::{load_image_dir, ImageDirOptions};
pub use imaging::clahe;
pub use synthetic::gaussian_blobs;
pub use split::{cap_per_class, split, subsample, subsample_per_class, SampleSize, Split};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Whether a dataset went through augmentation. Augmented data is never a
/// valid evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Raw,
    Augmented,
}

/// Images shaped `[H, W, C]` with values in `[0, 1]`, each with a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Vec<Tensor>,
    labels: Vec<usize>,
    class_count: usize,
    class_names: Vec<String>,
    provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {class_count})"
            )));
        }
        if let Some(first) = images.first() {
            if first.shape().len() != 3 {
                return Err(Error::InvalidArgument(format!(
                    "images must be [H, W, C], got {:?}",
                    first.shape()
                )));
            }
            if let Some(other) = images.iter().find(|t| t.shape() != first.shape()) {
                return Err(Error::InvalidArgument(format!(
                    "mixed image shapes {:?} and {:?}",
                    first.shape(),
                    other.shape()
                )));
            }
        }
        if images
            .iter()
            .any(|t| t.data().iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(Error::InvalidArgument(
                "pixel values must be normalized to [0, 1]".into(),
            ));
        }
        Ok(Self {
            images,
            labels,
            class_count,
            class_names: (0..class_count).map(|c| c.to_string()).collect(),
            provenance: Provenance::Raw,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.class_count {
            return Err(Error::InvalidArgument(format!(
                "{} class names for {} classes",
                names.len(),
                self.class_count
            )));
        }
        self.class_names = names;
        Ok(self)
    }

    pub(crate) fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &Tensor {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Shape shared by every image, `None` when empty.
    pub fn image_shape(&self) -> Option<&[usize]> {
        self.images.first().map(|t| t.shape())
    }

    /// Indices of the images labeled `class`, in dataset order.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Subset in the order given by `indices`.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            class_names: self.class_names.clone(),
            provenance: self.provenance,
        }
    }

    /// Stacks the selected images into an `[N, H, W, C]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = indices.iter().map(|&i| &self.images[i]).collect();
        Tensor::stack(&refs)
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants_enforced() {
        let img = Tensor::filled(&[2, 2, 1], 0.5);
        assert!(LabeledDataset::new(vec![img.clone()], vec![2], 2).is_err());
        assert!(LabeledDataset::new(vec![img.clone()], vec![], 2).is_err());
        assert!(LabeledDataset::new(
            vec![img.clone(), Tensor::filled(&[3, 2, 1], 0.5)],
            vec![0, 1],
            2
        )
        .is_err());
        assert!(LabeledDataset::new(vec![Tensor::filled(&[2, 2, 1], 1.5)], vec![0], 1).is_err());
        let ds = LabeledDataset::new(vec![img.clone(), img], vec![1, 0], 2).unwrap();
        assert_eq!(ds.class_indices(1), vec![0]);
        assert_eq!(ds.class_counts(), vec![1, 1]);
        assert_eq!(ds.provenance(), Provenance::Raw);
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{ColorType, DynamicImage};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const EXTENSIONS: &[&str] = &["png", "bmp", "jpg", "jpeg"];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImageDirOptions {
    /// Target `(height, width)`; images are resized bilinearly when set.
    pub size: Option<(usize, usize)>,
    /// Force 1 (grayscale) or 3 (RGB) channels. When unset, grayscale files
    /// stay single-channel and everything else becomes RGB.
    pub channels: Option<usize>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn to_tensor(img: DynamicImage, opts: &ImageDirOptions, path: &Path) -> Result<Tensor> {
    let channels = match opts.channels {
        Some(c @ (1 | 3)) => c,
        Some(c) => {
            return Err(Error::InvalidArgument(format!(
                "unsupported channel count {c}"
            )))
        }
        None => match img.color() {
            ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16 => 1,
            _ => 3,
        },
    };
    let img = match opts.size {
        Some((h, w)) if (img.height() as usize, img.width() as usize) != (h, w) => {
            img.resize_exact(w as u32, h as u32, FilterType::Triangle)
        }
        _ => img,
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = if channels == 1 {
        img.to_luma8().into_raw()
    } else {
        img.to_rgb8().into_raw()
    }
    .into_iter()
    .map(|b| f64::from(b) / 255.0)
    .collect();
    Tensor::new(vec![h, w, channels], data).map_err(|_| Error::Dataset {
        path: path.to_path_buf(),
        message: "empty image".into(),
    })
}

/// Loads `root/<class>/<image>` trees. Classes are the subdirectories in
/// lexicographic order, labeled `0..|C|`.
pub fn load_image_dir(root: impl AsRef<Path>, opts: &ImageDirOptions) -> Result<LabeledDataset> {
    let root = root.as_ref();
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if class_dirs.is_empty() {
        return Err(Error::Dataset {
            path: root.to_path_buf(),
            message: "no class subdirectories".into(),
        });
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut names = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let files: Vec<PathBuf> = sorted_entries(dir)?
            .into_iter()
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        if files.is_empty() {
            return Err(Error::Dataset {
                path: dir.clone(),
                message: "class directory contains no images".into(),
            });
        }
        for file in files {
            let img = image::open(&file).map_err(|source| Error::Image {
                path: file.clone(),
                source,
            })?;
            let t = to_tensor(img, opts, &file)?;
            if let Some(first) = images.first().map(|t: &Tensor| t.shape().to_vec()) {
                if t.shape() != first.as_slice() {
                    return Err(Error::Dataset {
                        path: file,
                        message: format!(
                            "shape {:?} differs from {:?}; set a target size or channel count",
                            t.shape(),
                            first
                        ),
                    });
                }
            }
            images.push(t);
            labels.push(label);
        }
        names.push(
            dir.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
    }
    LabeledDataset::new(images, labels, class_dirs.len())?.with_class_names(names)
}

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SIDE: usize = 32;
const RECORD: usize = 1 + 3 * SIDE * SIDE;

/// Loads every `*.bin` batch under `root` (sorted by file name) in the CIFAR-10
/// binary layout: one label byte followed by planar R, G and B 32x32 planes.
/// Class names come from `batches.meta.txt` when present.
pub fn load_cifar10_bin(root: impl AsRef<Path>) -> Result<LabeledDataset> {
    let root = root.as_ref();
    let mut batches: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "bin"))
        .collect();
    batches.sort();
    if batches.is_empty() {
        return Err(Error::Dataset {
            path: root.to_path_buf(),
            message: "no CIFAR-10 .bin batches found".into(),
        });
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in &batches {
        let bytes = fs::read(path)?;
        if bytes.len() % RECORD != 0 {
            return Err(Error::Format {
                path: path.clone(),
                offset: (bytes.len() - bytes.len() % RECORD) as u64,
                message: format!("trailing partial record ({} bytes)", bytes.len() % RECORD),
            });
        }
        for (r, rec) in bytes.chunks(RECORD).enumerate() {
            let label = rec[0] as usize;
            if label >= 10 {
                return Err(Error::Format {
                    path: path.clone(),
                    offset: (r * RECORD) as u64,
                    message: format!("label {label} out of range"),
                });
            }
            let planes = &rec[1..];
            let mut data = Vec::with_capacity(3 * SIDE * SIDE);
            for px in 0..SIDE * SIDE {
                for ch in 0..3 {
                    data.push(f64::from(planes[ch * SIDE * SIDE + px]) / 255.0);
                }
            }
            images.push(Tensor::new(vec![SIDE, SIDE, 3], data)?);
            labels.push(label);
        }
    }
    let ds = LabeledDataset::new(images, labels, 10)?;
    let meta = root.join("batches.meta.txt");
    if let Ok(text) = fs::read_to_string(meta) {
        let names: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        if names.len() == 10 {
            return ds.with_class_names(names);
        }
    }
    Ok(ds)
}

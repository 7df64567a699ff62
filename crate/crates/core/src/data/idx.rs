//! IDX container (MNIST): big-endian magic `0x00000803` for `u8` images with
//! `count, rows, cols` dimensions and `0x00000801` for `u8` labels with `count`.
//! Gzip-compressed files are detected by their magic bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                offset: 0,
                message: format!("gzip stream: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            message: "truncated header".into(),
        })
}

fn check_magic(bytes: &[u8], want: u32, path: &Path) -> Result<()> {
    let got = be_u32(bytes, 0, path)?;
    if got != want {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("bad magic {got:#010x}, expected {want:#010x}"),
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], offset: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    bytes.get(offset..offset + len).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: format!(
            "truncated payload: expected {len} bytes, found {}",
            bytes.len().saturating_sub(offset)
        ),
    })
}

/// Reads an IDX image/label file pair; pixels are scaled to `[0, 1]` and the
/// class count is one more than the largest label.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let ib = read_maybe_gz(ip)?;
    let lb = read_maybe_gz(lp)?;

    check_magic(&ib, IMAGES_MAGIC, ip)?;
    let count = be_u32(&ib, 4, ip)? as usize;
    let rows = be_u32(&ib, 8, ip)? as usize;
    let cols = be_u32(&ib, 12, ip)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format {
            path: ip.to_path_buf(),
            offset: 8,
            message: format!("degenerate image size {rows}x{cols}"),
        });
    }
    let pixels = payload(&ib, 16, count * rows * cols, ip)?;

    check_magic(&lb, LABELS_MAGIC, lp)?;
    let label_count = be_u32(&lb, 4, lp)? as usize;
    if label_count != count {
        return Err(Error::Format {
            path: lp.to_path_buf(),
            offset: 4,
            message: format!("{label_count} labels for {count} images"),
        });
    }
    let labels: Vec<usize> = payload(&lb, 8, count, lp)?.iter().map(|&b| b as usize).collect();

    let images = pixels
        .chunks(rows * cols)
        .map(|px| {
            Tensor::new(
                vec![rows, cols, 1],
                px.iter().map(|&b| f64::from(b) / 255.0).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let class_count = labels.iter().max().map_or(0, |&m| m + 1);
    LabeledDataset::new(images, labels, class_count)
}

fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(fs::File::create(path)?, Compression::default());
        enc.write_all(bytes)?;
        enc.finish()?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

/// Writes single-channel images and labels as an IDX pair, quantizing pixels
/// to bytes. Paths ending in `.gz` are gzip-compressed.
pub fn write_idx(
    dataset: &LabeledDataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let shape = dataset.image_shape().unwrap_or(&[1, 1, 1]).to_vec();
    if shape[2] != 1 {
        return Err(Error::InvalidArgument(
            "IDX export supports single-channel images only".into(),
        ));
    }
    if dataset.class_count() > 256 {
        return Err(Error::InvalidArgument("IDX labels are single bytes".into()));
    }
    let mut ib = Vec::with_capacity(16 + dataset.len() * shape[0] * shape[1]);
    ib.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    ib.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    ib.extend_from_slice(&(shape[0] as u32).to_be_bytes());
    ib.extend_from_slice(&(shape[1] as u32).to_be_bytes());
    for img in dataset.images() {
        ib.extend(img.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    let mut lb = Vec::with_capacity(8 + dataset.len());
    lb.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lb.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    lb.extend(dataset.labels().iter().map(|&l| l as u8));
    write_maybe_gz(images_path.as_ref(), &ib)?;
    write_maybe_gz(labels_path.as_ref(), &lb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    fn write_pair(dir: &Path, images: &[u8], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("img.idx");
        let lp = dir.join("lab.idx");
        fs::write(&ip, images).unwrap();
        fs::write(&lp, labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn parses_and_scales_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        let mut ib = header(IMAGES_MAGIC, &[2, 1, 2]);
        ib.extend_from_slice(&[0, 255, 51, 102]);
        let mut lb = header(LABELS_MAGIC, &[2]);
        lb.extend_from_slice(&[3, 1]);
        let (ip, lp) = write_pair(dir.path(), &ib, &lb);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.image(0).shape(), &[1, 2, 1]);
        assert_eq!(ds.image(0).data(), &[0.0, 1.0]);
        assert_eq!(ds.image(1).data(), &[0.2, 0.4]);
        assert_eq!(ds.labels(), &[3, 1]);
        assert_eq!(ds.class_count(), 4);
    }

    #[test]
    fn count_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut ib = header(IMAGES_MAGIC, &[2, 1, 1]);
        ib.extend_from_slice(&[0, 1]);
        let mut lb = header(LABELS_MAGIC, &[3]);
        lb.extend_from_slice(&[0, 0, 0]);
        let (ip, lp) = write_pair(dir.path(), &ib, &lb);
        match load_idx(&ip, &lp).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 4),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn bad_magic_and_truncation_report_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let mut lb = header(LABELS_MAGIC, &[1]);
        lb.push(0);

        let ib = header(LABELS_MAGIC, &[1, 1, 1]);
        let (ip, lp) = write_pair(dir.path(), &ib, &lb);
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { offset: 0, .. })));

        let ib = header(IMAGES_MAGIC, &[1, 2, 2]);
        let (ip, lp) = write_pair(dir.path(), &ib, &lb);
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { offset: 16, .. })));

        let (ip, lp) = write_pair(dir.path(), &[0, 0, 8], &lb);
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn gzip_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let images = (0..3)
            .map(|i| Tensor::new(vec![2, 2, 1], vec![i as f64 / 255.0, 1.0, 0.0, 0.5]).unwrap())
            .collect();
        let ds = LabeledDataset::new(images, vec![0, 2, 1], 3).unwrap();
        let ip = dir.path().join("i.gz");
        let lp = dir.path().join("l.gz");
        write_idx(&ds, &ip, &lp).unwrap();
        let back = load_idx(&ip, &lp).unwrap();
        assert_eq!(back.labels(), ds.labels());
        assert_eq!(back.image(1).data()[0], 1.0 / 255.0);
        assert_eq!(back.image(0).data()[3], 128.0 / 255.0);
    }
}

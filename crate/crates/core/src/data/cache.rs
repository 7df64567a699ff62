//! Binary cache of normalized datasets.
//!
//! Layout (little-endian): magic `SBFD`, `u32` version, `u8` provenance
//! (0 raw, 1 augmented), `u32` class count, class names as `u32` length +
//! UTF-8 bytes, `u32` image count, three `u32` image dims `H W C`, one `u32`
//! label per image, then every pixel as `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SBFD";
const VERSION: u32 = 1;

pub fn write_cache(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[match dataset.provenance() {
        Provenance::Raw => 0,
        Provenance::Augmented => 1,
    }])?;
    w.write_all(&(dataset.class_count() as u32).to_le_bytes())?;
    for name in dataset.class_names() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
    }
    w.write_all(&(dataset.len() as u32).to_le_bytes())?;
    let shape = dataset.image_shape().unwrap_or(&[1, 1, 1]).to_vec();
    for d in &shape {
        w.write_all(&(*d as u32).to_le_bytes())?;
    }
    for &l in dataset.labels() {
        w.write_all(&(l as u32).to_le_bytes())?;
    }
    for img in dataset.images() {
        for v in img.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<'p, R> {
    inner: R,
    offset: u64,
    path: &'p Path,
}

impl<R: Read> Reader<'_, R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner.read_exact(&mut buf).map_err(|_| Error::Format {
            path: self.path.to_path_buf(),
            offset: self.offset,
            message: format!("truncated: expected {n} more bytes"),
        })?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            path: self.path.to_path_buf(),
            offset: self.offset,
            message: message.into(),
        })
    }
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
        offset: 0,
        path,
    };
    if r.bytes(4)? != MAGIC {
        return r.fail("not a dataset cache");
    }
    let version = r.u32()?;
    if version != VERSION {
        return r.fail(format!("unsupported cache version {version}"));
    }
    let provenance = match r.bytes(1)?[0] {
        0 => Provenance::Raw,
        1 => Provenance::Augmented,
        other => return r.fail(format!("bad provenance tag {other}")),
    };
    let classes = r.u32()? as usize;
    let mut names = Vec::with_capacity(classes);
    for _ in 0..classes {
        let len = r.u32()? as usize;
        let raw = r.bytes(len)?;
        match String::from_utf8(raw) {
            Ok(s) => names.push(s),
            Err(_) => return r.fail("class name is not UTF-8"),
        }
    }
    let count = r.u32()? as usize;
    let shape = vec![r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        labels.push(r.u32()? as usize);
    }
    let per: usize = shape.iter().product();
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        let raw = r.bytes(per * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        images.push(Tensor::new(shape.clone(), data)?);
    }
    Ok(LabeledDataset::new(images, labels, classes)?
        .with_class_names(names)?
        .with_provenance(provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testing::constant_images;

    #[test]
    fn round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        let ds = constant_images(3, 2, [2, 3, 1]);
        write_cache(&ds, &path).unwrap();
        assert_eq!(read_cache(&path).unwrap(), ds);

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_cache(&path), Err(Error::Format { .. })));
    }
}

//! IDX image/label files and the in-memory labeled dataset.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Labeled images, each a `[1, rows, cols]` tensor with pixels in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    images: Vec<Tensor<T>>,
    labels: Vec<usize>,
    classes: usize,
    checksum: String,
}

impl<T: Real> Dataset<T> {
    /// Builds a dataset from raw bytes: `pixels` holds `count * rows * cols`
    /// values, one byte each.
    pub fn from_bytes(rows: usize, cols: usize, pixels: &[u8], labels: &[u8], classes: Option<usize>) -> Result<Self> {
        let size = rows * cols;
        if size == 0 || labels.is_empty() {
            return Err(Error::Dataset("dataset is empty".into()));
        }
        if pixels.len() != labels.len() * size {
            return Err(Error::Dataset(format!(
                "{} labels but {} pixel bytes ({} per image)",
                labels.len(),
                pixels.len(),
                size
            )));
        }
        let max = *labels.iter().max().expect("non-empty") as usize;
        let classes = classes.unwrap_or(max + 1);
        if max >= classes {
            return Err(Error::Dataset(format!("label {max} outside [0, {classes})")));
        }
        let scale = T::of(255.0);
        let images = pixels
            .chunks_exact(size)
            .map(|c| Tensor::from_parts(vec![1, rows, cols], c.iter().map(|&p| T::of(p as f64) / scale).collect()))
            .collect();
        let mut h = Sha256::new();
        h.update((rows as u64).to_le_bytes());
        h.update((cols as u64).to_le_bytes());
        h.update(pixels);
        h.update(labels);
        Ok(Dataset {
            images,
            labels: labels.iter().map(|&l| l as usize).collect(),
            classes,
            checksum: hex::encode(h.finalize()),
        })
    }

    /// Builds a dataset from ready tensors of one common shape, e.g. synthetic
    /// Gaussian feature maps.
    pub fn from_tensors(images: Vec<Tensor<T>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.is_empty() || images.len() != labels.len() {
            return Err(Error::Dataset(format!("{} images for {} labels", images.len(), labels.len())));
        }
        let shape = images[0].shape().to_vec();
        if let Some(bad) = images.iter().find(|t| t.shape() != shape.as_slice()) {
            return Err(Error::ShapeMismatch { expected: shape, actual: bad.shape().to_vec() });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Dataset(format!("label {l} outside [0, {classes})")));
        }
        let mut h = Sha256::new();
        for d in &shape {
            h.update((*d as u64).to_le_bytes());
        }
        for t in &images {
            for v in t.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        for &l in &labels {
            h.update((l as u64).to_le_bytes());
        }
        Ok(Dataset { images, labels, classes, checksum: hex::encode(h.finalize()) })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn image_shape(&self) -> &[usize] {
        self.images[0].shape()
    }

    pub fn image(&self, i: usize) -> &Tensor<T> {
        &self.images[i]
    }

    pub fn images(&self) -> &[Tensor<T>] {
        &self.images
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// SHA-256 over dimensions, pixels and labels.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// First `n` samples (or all, if fewer).
    pub fn head(&self, n: usize) -> Self {
        self.select(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut h = Sha256::new();
        h.update(self.checksum.as_bytes());
        for &i in indices {
            h.update((i as u64).to_le_bytes());
        }
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            checksum: hex::encode(h.finalize()),
        }
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Dataset("truncated IDX header".into()))
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Dataset(format!("image file magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let payload = &bytes[16..];
    if payload.len() != n * rows * cols {
        return Err(Error::Dataset(format!(
            "image payload is {} bytes, header promises {n} x {rows} x {cols}",
            payload.len()
        )));
    }
    Ok((n, rows, cols, payload))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Dataset(format!("label file magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(Error::Dataset(format!("label payload is {} bytes, header promises {n}", payload.len())));
    }
    Ok(payload)
}

pub fn load_idx_dataset<T: Real>(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset<T>> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let ib = std::fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lb = std::fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let (n, rows, cols, pixels) = parse_idx_images(&ib)?;
    let labels = parse_idx_labels(&lb)?;
    if labels.len() != n {
        return Err(Error::Dataset(format!("{n} images but {} labels", labels.len())));
    }
    Dataset::from_bytes(rows, cols, pixels, labels, None)
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols).max(1);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx_pair(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    pixels: &[u8],
    labels: &[u8],
) -> Result<()> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    std::fs::write(ip, encode_idx_images(rows, cols, pixels)).map_err(|e| Error::io(ip, e))?;
    std::fs::write(lp, encode_idx_labels(labels)).map_err(|e| Error::io(lp, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx_pair(&ip, &lp, 28, 28, &vec![0u8; 3 * 784], &[0, 1, 2]).unwrap();
        let ds: Dataset<f32> = load_idx_dataset(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.image_shape(), &[1, 28, 28]);
        assert!(ds.images().iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert_eq!(ds.classes(), 3);
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx_pair(&ip, &lp, 2, 2, &[0u8; 8], &[0, 1, 1]).unwrap();
        assert!(matches!(load_idx_dataset::<f32>(&ip, &lp), Err(Error::Dataset(_))));
    }

    #[test]
    fn wrong_magic_rejected() {
        let mut b = encode_idx_images(2, 2, &[7u8; 4]);
        b[3] = 0x01;
        assert!(parse_idx_images(&b).is_err());
        assert!(parse_idx_labels(&encode_idx_images(1, 1, &[1])).is_err());
    }

    #[test]
    fn pixels_scaled() {
        let ds: Dataset<f64> = Dataset::from_bytes(1, 2, &[255, 51], &[0], Some(10)).unwrap();
        assert_eq!(ds.image(0).data(), &[1.0, 0.2]);
        assert_eq!(ds.classes(), 10);
    }
}

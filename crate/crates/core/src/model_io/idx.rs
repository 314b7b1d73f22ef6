use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// A batch of `[n, 1, rows, cols]` images in `[0, 1]` with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSlice {
    images: Tensor,
    labels: Vec<usize>,
}

impl DatasetSlice {
    /// `images` has the batch as its leading dimension.
    pub fn new(images: Tensor, labels: Vec<usize>) -> Result<Self> {
        let n = images.shape()[0];
        if images.shape().len() < 2 {
            return Err(Error::InvalidArgument(
                "images need a batch dimension and a sample shape".into(),
            ));
        }
        if n != labels.len() {
            return Err(Error::CountMismatch {
                images: n,
                labels: labels.len(),
            });
        }
        if let Some(i) = images.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "pixel {i} is outside [0, 1]"
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Shape of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    pub(crate) fn sample_data(&self, i: usize) -> &[f64] {
        let d = self.sample_len();
        &self.images.data()[i * d..(i + 1) * d]
    }

    pub fn image(&self, i: usize) -> Result<Tensor> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                dim: self.len(),
            });
        }
        Ok(Tensor::from_parts(
            self.sample_shape().to_vec(),
            self.sample_data(i).to_vec(),
        ))
    }

    pub fn label(&self, i: usize) -> Result<usize> {
        self.labels.get(i).copied().ok_or(Error::IndexOutOfRange {
            index: i,
            dim: self.len(),
        })
    }

    /// The first `n` samples (or all of them if fewer).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len()).max(1);
        let mut shape = self.images.shape().to_vec();
        shape[0] = n;
        Self {
            images: Tensor::from_parts(shape, self.images.data()[..n * self.sample_len()].to_vec()),
            labels: self.labels[..n].to_vec(),
        }
    }
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::MalformedIdx(format!("{what} header is truncated")))
}

fn parse_images(bytes: &[u8]) -> Result<Tensor> {
    let magic = read_u32(bytes, 0, "image")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IMAGES_MAGIC,
        });
    }
    let n = read_u32(bytes, 4, "image")? as usize;
    let rows = read_u32(bytes, 8, "image")? as usize;
    let cols = read_u32(bytes, 12, "image")? as usize;
    let body = &bytes[16..];
    let need = n * rows * cols;
    if body.len() < need {
        return Err(Error::MalformedIdx(format!(
            "image file holds {} bytes of pixels, header promises {need}",
            body.len()
        )));
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::MalformedIdx("image file is empty".into()));
    }
    let data = body[..need].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Tensor::from_parts(vec![n, 1, rows, cols], data))
}

fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, "label")?;
    if magic != LABELS_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: LABELS_MAGIC,
        });
    }
    let n = read_u32(bytes, 4, "label")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::MalformedIdx(format!(
            "label file holds {} labels, header promises {n}",
            body.len()
        )));
    }
    Ok(body[..n].iter().map(|&b| usize::from(b)).collect())
}

/// Reads an IDX image file; pixels are scaled to `[0, 1]`.
pub fn load_idx_images(images_path: &Path) -> Result<Tensor> {
    parse_images(&fs::read(images_path)?)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<DatasetSlice> {
    let labels = parse_labels(&fs::read(labels_path)?)?;
    let images = load_idx_images(images_path)?;
    DatasetSlice::new(images, labels)
}

//! Model persistence (JSON manifest plus raw little-endian `f64` blob),
//! IDX dataset loading, and a small fixture trainer.

mod idx;
mod train;

pub use idx::{load_idx, load_idx_images, DatasetSlice};
pub use train::{train_fixture, LayerSpec, NetConfig, TrainOptions, TrainReport};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Layer, Network, Padding};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

/// Location of one parameter tensor inside the blob, in `f64` elements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRef {
    pub shape: Vec<usize>,
    pub offset: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerDescriptor {
    Dense {
        weights: BlobRef,
        bias: BlobRef,
    },
    Conv2d {
        kernels: BlobRef,
        bias: BlobRef,
        stride: usize,
        padding: Padding,
    },
    Relu,
    Maxpool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub input_shape: Vec<usize>,
    pub class_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_index: Option<usize>,
    pub layers: Vec<LayerDescriptor>,
}

impl ModelManifest {
    /// Manifest and blob contents describing `net`.
    pub fn describe(net: &Network) -> (Self, Vec<f64>) {
        let mut blob = Vec::with_capacity(net.parameter_count());
        let mut push = |t: &Tensor| {
            let r = BlobRef {
                shape: t.shape().to_vec(),
                offset: blob.len(),
                count: t.len(),
            };
            blob.extend_from_slice(t.data());
            r
        };
        let layers = net
            .layers()
            .iter()
            .map(|layer| match layer {
                Layer::Dense { weights, bias } => LayerDescriptor::Dense {
                    weights: push(weights),
                    bias: push(bias),
                },
                Layer::Conv2d {
                    kernels,
                    bias,
                    stride,
                    padding,
                } => LayerDescriptor::Conv2d {
                    kernels: push(kernels),
                    bias: push(bias),
                    stride: *stride,
                    padding: *padding,
                },
                Layer::Relu => LayerDescriptor::Relu,
                Layer::MaxPool2d { window, stride } => LayerDescriptor::Maxpool2d {
                    window: *window,
                    stride: *stride,
                },
                Layer::Flatten => LayerDescriptor::Flatten,
                Layer::Softmax => LayerDescriptor::Softmax,
            })
            .collect();
        let manifest = Self {
            format_version: FORMAT_VERSION,
            input_shape: net.input_shape().to_vec(),
            class_count: net.class_count(),
            split_index: net.split_index(),
            layers,
        };
        (manifest, blob)
    }

    fn refs(&self) -> Vec<&BlobRef> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                LayerDescriptor::Dense { weights, bias } => vec![weights, bias],
                LayerDescriptor::Conv2d { kernels, bias, .. } => vec![kernels, bias],
                _ => vec![],
            })
            .collect()
    }

    /// Builds the network from a blob of `f64` values.
    pub fn build(&self, blob: &[f64]) -> Result<Network> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let mut refs = self.refs();
        for r in &refs {
            if r.shape.iter().product::<usize>() != r.count {
                return Err(Error::ManifestShape(format!(
                    "shape {:?} does not hold {} values",
                    r.shape, r.count
                )));
            }
        }
        refs.sort_by_key(|r| r.offset);
        for pair in refs.windows(2) {
            if pair[0].offset + pair[0].count > pair[1].offset {
                return Err(Error::ManifestShape(format!(
                    "parameter ranges at offsets {} and {} overlap",
                    pair[0].offset, pair[1].offset
                )));
            }
        }
        let needed = refs.last().map_or(0, |r| r.offset + r.count);
        if needed > blob.len() {
            return Err(Error::TruncatedBlob {
                needed,
                available: blob.len(),
            });
        }
        let take =
            |r: &BlobRef| Tensor::new(r.shape.clone(), blob[r.offset..r.offset + r.count].to_vec());
        let layers = self
            .layers
            .iter()
            .map(|d| {
                Ok(match d {
                    LayerDescriptor::Dense { weights, bias } => Layer::Dense {
                        weights: take(weights)?,
                        bias: take(bias)?,
                    },
                    LayerDescriptor::Conv2d {
                        kernels,
                        bias,
                        stride,
                        padding,
                    } => Layer::Conv2d {
                        kernels: take(kernels)?,
                        bias: take(bias)?,
                        stride: *stride,
                        padding: *padding,
                    },
                    LayerDescriptor::Relu => Layer::Relu,
                    LayerDescriptor::Maxpool2d { window, stride } => Layer::MaxPool2d {
                        window: *window,
                        stride: *stride,
                    },
                    LayerDescriptor::Flatten => Layer::Flatten,
                    LayerDescriptor::Softmax => Layer::Softmax,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut net = Network::new(layers, self.input_shape.clone())
            .map_err(|e| Error::ManifestShape(e.to_string()))?;
        if net.class_count() != self.class_count {
            return Err(Error::ManifestShape(format!(
                "manifest declares {} classes, layers produce {}",
                self.class_count,
                net.class_count()
            )));
        }
        if let Some(split) = self.split_index {
            net = net.with_split_index(split)?;
        }
        Ok(net)
    }
}

/// Blob path paired with a manifest: same stem, `.bin` extension.
pub fn default_blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn load_model(manifest_path: &Path, blob_path: &Path) -> Result<Network> {
    let manifest: ModelManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    let bytes = fs::read(blob_path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::TruncatedBlob {
            needed: bytes.len().div_ceil(8),
            available: bytes.len() / 8,
        });
    }
    let blob: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    manifest.build(&blob)
}

/// Writes manifest and blob. Existing files are only replaced when
/// `overwrite` is set.
pub fn save_model(
    net: &Network,
    manifest_path: &Path,
    blob_path: &Path,
    overwrite: bool,
) -> Result<()> {
    if !overwrite {
        for p in [manifest_path, blob_path] {
            if p.exists() {
                return Err(Error::AlreadyExists(p.to_path_buf()));
            }
        }
    }
    let (manifest, blob) = ModelManifest::describe(net);
    let bytes: Vec<u8> = blob.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(blob_path, bytes)?;
    fs::write(
        manifest_path,
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

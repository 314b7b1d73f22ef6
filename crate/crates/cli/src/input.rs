use std::fs;
use std::path::{Path, PathBuf};

use eva_core::model_io::{default_blob_path, load_idx_images};
use eva_core::{load_idx, load_model, DatasetSlice, Network, Tensor};

use crate::args::{InputArgs, ModelArgs};
use crate::error::{CliError, CliResult};

pub fn blob_path(m: &ModelArgs) -> PathBuf {
    m.blob
        .clone()
        .unwrap_or_else(|| default_blob_path(&m.model))
}

pub fn network(m: &ModelArgs) -> CliResult<Network> {
    load_model(&m.model, &blob_path(m)).map_err(CliError::load(&m.model))
}

pub fn dataset(images: &Path, labels: &Path) -> CliResult<DatasetSlice> {
    load_idx(images, labels).map_err(CliError::load(images))
}

/// One input sample, reshaped to the network's input shape.
pub struct Sample {
    pub x: Tensor,
    pub label: Option<usize>,
    /// Dataset index when read from an IDX file.
    pub index: Option<usize>,
}

pub fn sample(input: &InputArgs, net: &Network) -> CliResult<Sample> {
    let (data, label, index) = match &input.data {
        Some(images) => {
            let index = match &input.image {
                None => 0,
                Some(s) => s.parse::<usize>().map_err(|_| {
                    CliError::Config(format!("--image must be an index into --data, got `{s}`"))
                })?,
            };
            let (data, label) = match &input.labels {
                Some(labels) => {
                    let set = dataset(images, labels)?;
                    (set.image(index)?.into_data(), Some(set.label(index)?))
                }
                None => {
                    let all = load_idx_images(images).map_err(CliError::load(images))?;
                    let n = all.shape()[0];
                    if index >= n {
                        return Err(CliError::Config(format!(
                            "--image {index} is out of range for {n} images"
                        )));
                    }
                    let d = all.len() / n;
                    (all.data()[index * d..(index + 1) * d].to_vec(), None)
                }
            };
            (data, label, Some(index))
        }
        None => {
            let path = input.image.as_ref().ok_or_else(|| {
                CliError::Config("give --data (with --image <index>) or --image <file.pgm>".into())
            })?;
            (read_pgm(Path::new(path))?, None, None)
        }
    };
    let x = Tensor::new(net.input_shape().to_vec(), data).map_err(|_| {
        CliError::Data(format!(
            "input does not fit the model's input shape {:?}",
            net.input_shape()
        ))
    })?;
    Ok(Sample { x, label, index })
}

/// Grayscale PGM (`P2` or `P5`, 8-bit) scaled to `[0, 1]`.
pub fn read_pgm(path: &Path) -> CliResult<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| CliError::Load {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    parse_pgm(&bytes).map_err(|m| CliError::Data(format!("{}: {m}", path.display())))
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        let b = self.bytes;
        loop {
            while self.pos < b.len() && b[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < b.len() && b[self.pos] == b'#' {
                while self.pos < b.len() && b[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return;
            }
        }
    }

    fn token(&mut self) -> Result<&str, String> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err("unexpected end of file".into());
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| "non-ASCII header".into())
    }

    fn number(&mut self) -> Result<usize, String> {
        let t = self.token()?;
        t.parse().map_err(|_| format!("bad number `{t}`"))
    }
}

fn parse_pgm(bytes: &[u8]) -> Result<Vec<f64>, String> {
    let mut r = Header { bytes, pos: 0 };
    let magic = r.token()?.to_string();
    if magic != "P2" && magic != "P5" {
        return Err(format!("not a PGM file (magic `{magic}`)"));
    }
    let (w, h, max) = (r.number()?, r.number()?, r.number()?);
    if max == 0 || max > 255 {
        return Err(format!("unsupported maximum value {max}"));
    }
    let n = w * h;
    let raw: Vec<usize> = if magic == "P5" {
        // A single whitespace byte separates the header from the raster.
        let body = &bytes[(r.pos + 1).min(bytes.len())..];
        if body.len() < n {
            return Err(format!("expected {n} pixels, found {}", body.len()));
        }
        body[..n].iter().map(|&b| usize::from(b)).collect()
    } else {
        (0..n).map(|_| r.number()).collect::<Result<_, _>>()?
    };
    if let Some(v) = raw.iter().find(|&&v| v > max) {
        return Err(format!("pixel value {v} exceeds maximum {max}"));
    }
    Ok(raw.into_iter().map(|v| v as f64 / max as f64).collect())
}

//! Minibatch SGD with softmax cross-entropy, enough to produce fixtures.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::DatasetSlice;
use crate::error::{Error, Result};
use crate::linalg::{gemm, gemm_at, gemm_bt};
use crate::network::{Layer, Network, Padding};
use crate::rng::{derive_seed, seeded};
use crate::tensor::{argmax, softmax, Tensor};

/// Architecture without weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense {
        units: usize,
    },
    Conv2d {
        filters: usize,
        kernel: usize,
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
pub struct NetConfig {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetConfig {
    /// Flatten, then `Dense → ReLU` per hidden width, then a linear head.
    pub fn mlp(input_shape: &[usize], hidden: &[usize], classes: usize) -> Self {
        let mut layers = vec![LayerSpec::Flatten];
        for &units in hidden {
            layers.push(LayerSpec::Dense { units });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Dense { units: classes });
        Self {
            input_shape: input_shape.to_vec(),
            layers,
        }
    }

    /// 784-256-128-64-32-10 on `[1, 28, 28]` images.
    pub fn mnist_mlp() -> Self {
        Self::mlp(&[1, 28, 28], &[256, 128, 64, 32], 10)
    }

    /// `3×3 same conv → ReLU → 2×2 max-pool` per filter count, then a
    /// linear head.
    pub fn small_cnn(input_shape: &[usize], filters: &[usize], classes: usize) -> Self {
        let mut layers = Vec::new();
        for &f in filters {
            layers.push(LayerSpec::Conv2d {
                filters: f,
                kernel: 3,
                stride: 1,
                padding: Padding::Same,
            });
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::Maxpool2d {
                window: 2,
                stride: 2,
            });
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Dense { units: classes });
        Self {
            input_shape: input_shape.to_vec(),
            layers,
        }
    }

    /// He-uniform weights and zero biases.
    pub fn init(&self, seed: u64) -> Result<Network> {
        let mut rng = seeded(derive_seed(seed, 0));
        let mut shape = self.input_shape.clone();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (index, spec) in self.layers.iter().enumerate() {
            let mut uniform = |n: usize, fan_in: usize| -> Vec<f64> {
                let a = (6.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-a..a)).collect()
            };
            let layer = match *spec {
                LayerSpec::Dense { units } => {
                    let fan_in: usize = shape.iter().product();
                    Layer::Dense {
                        weights: Tensor::new(vec![units, fan_in], uniform(units * fan_in, fan_in))?,
                        bias: Tensor::zeros(&[units])?,
                    }
                }
                LayerSpec::Conv2d {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => {
                    let channels = *shape.first().ok_or_else(|| Error::InvalidLayer {
                        index,
                        reason: "conv needs a [c, h, w] input".into(),
                    })?;
                    let fan_in = channels * kernel * kernel;
                    Layer::Conv2d {
                        kernels: Tensor::new(
                            vec![filters, channels, kernel, kernel],
                            uniform(filters * fan_in, fan_in),
                        )?,
                        bias: Tensor::zeros(&[filters])?,
                        stride,
                        padding,
                    }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Maxpool2d { window, stride } => Layer::MaxPool2d { window, stride },
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Softmax => Layer::Softmax,
            };
            shape = layer.output_shape(index, &shape)?;
            layers.push(layer);
        }
        Network::new(layers, self.input_shape.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 0.05,
            seed: 0,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub network: Network,
    /// Accuracy on the training data after the last epoch.
    pub accuracy: f64,
    /// Mean cross-entropy of the last epoch (`NaN` when no epoch ran).
    pub loss: f64,
}

/// Trains a freshly initialized network. Bit-reproducible per seed.
pub fn train_fixture(
    config: &NetConfig,
    data: &DatasetSlice,
    options: &TrainOptions,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training data is empty".into()));
    }
    if options.batch_size == 0 || !(options.lr > 0.0) {
        return Err(Error::InvalidArgument(
            "batch size and learning rate must be positive".into(),
        ));
    }
    let mut net = config.init(options.seed)?;
    if data.sample_shape() != net.input_shape() {
        return Err(Error::ShapeMismatch {
            expected: net.input_shape().to_vec(),
            actual: data.sample_shape().to_vec(),
        });
    }
    if let Some(&bad) = data.labels().iter().find(|&&l| l >= net.class_count()) {
        return Err(Error::ClassOutOfRange {
            index: bad,
            classes: net.class_count(),
        });
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = seeded(derive_seed(options.seed, 1));
    let mut loss = f64::NAN;
    for epoch in 0..options.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(options.batch_size) {
            let batch_loss = sgd_step(&mut net, data, batch, options.lr);
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            total += batch_loss * batch.len() as f64;
        }
        loss = total / data.len() as f64;
        let finite = net.layers().iter().all(|l| match l {
            Layer::Dense { weights, bias }
            | Layer::Conv2d {
                kernels: weights,
                bias,
                ..
            } => weights
                .data()
                .iter()
                .chain(bias.data())
                .all(|v| v.is_finite()),
            _ => true,
        });
        if !finite {
            return Err(Error::Diverged { epoch });
        }
    }
    let accuracy = accuracy(&net, data);
    Ok(TrainReport {
        network: net,
        accuracy,
        loss,
    })
}

/// Fraction of samples whose argmax logit equals the label.
pub(crate) fn accuracy(net: &Network, data: &DatasetSlice) -> f64 {
    let idx: Vec<usize> = (0..data.len()).collect();
    let correct: usize = idx
        .chunks(256)
        .map(|chunk| {
            let acts = forward_batch(net, data, chunk);
            let out = acts.last().expect("output");
            let c = net.class_count();
            chunk
                .iter()
                .enumerate()
                .filter(|(r, &i)| argmax(&out[r * c..(r + 1) * c]) == data.labels()[i])
                .count()
        })
        .sum();
    correct as f64 / data.len() as f64
}

/// Activations of every layer for a batch, each `batch × len` row-major.
fn forward_batch(net: &Network, data: &DatasetSlice, batch: &[usize]) -> Vec<Vec<f64>> {
    let b = batch.len();
    let mut acts = vec![batch
        .iter()
        .flat_map(|&i| data.sample_data(i).iter().copied())
        .collect::<Vec<f64>>()];
    for (i, layer) in net.layers().iter().enumerate() {
        let input = acts.last().expect("input");
        let next = match layer {
            Layer::Dense { weights, bias } => {
                let (rows, cols) = (weights.shape()[0], weights.shape()[1]);
                let mut y = vec![0.0; b * rows];
                gemm_bt(b, cols, rows, input, weights.data(), 0.0, &mut y);
                for row in y.chunks_exact_mut(rows) {
                    for (v, bi) in row.iter_mut().zip(bias.data()) {
                        *v += bi;
                    }
                }
                y
            }
            Layer::Softmax => input.clone(),
            _ => {
                let len = input.len() / b;
                input
                    .chunks_exact(len)
                    .flat_map(|row| net.layer_forward(i, row))
                    .collect()
            }
        };
        acts.push(next);
    }
    acts
}

/// One minibatch update; returns the mean loss of the batch before the step.
fn sgd_step(net: &mut Network, data: &DatasetSlice, batch: &[usize], lr: f64) -> f64 {
    let b = batch.len();
    let acts = forward_batch(net, data, batch);
    let c = net.class_count();
    let logits = acts.last().expect("output");
    let mut loss = 0.0;
    let mut grad = vec![0.0; b * c];
    for (r, &i) in batch.iter().enumerate() {
        let p = softmax(&logits[r * c..(r + 1) * c]);
        let y = data.labels()[i];
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        for (j, g) in grad[r * c..(r + 1) * c].iter_mut().enumerate() {
            *g = (p[j] - if j == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }

    let mut updates: Vec<(usize, Vec<f64>, Vec<f64>)> = Vec::new();
    for i in (0..net.layers().len()).rev() {
        let input = &acts[i];
        let in_len = input.len() / b;
        let need_input_grad = i > 0;
        grad = match &net.layers()[i] {
            Layer::Dense { weights, .. } => {
                let (rows, cols) = (weights.shape()[0], weights.shape()[1]);
                let mut dw = vec![0.0; rows * cols];
                gemm_at(rows, b, cols, &grad, input, 0.0, &mut dw);
                let mut db = vec![0.0; rows];
                for row in grad.chunks_exact(rows) {
                    for (d, g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                let mut dx = vec![0.0; if need_input_grad { b * cols } else { 0 }];
                if need_input_grad {
                    gemm(b, rows, cols, &grad, weights.data(), 0.0, &mut dx);
                }
                updates.push((i, dw, db));
                dx
            }
            Layer::Conv2d {
                kernels,
                bias,
                stride,
                padding,
            } => {
                let geo = net.conv_geometry(i, kernels, *stride, *padding);
                let out_len = geo.out_len();
                let k = kernels.data();
                let mut dk = vec![0.0; kernels.len()];
                let mut db = vec![0.0; bias.len()];
                let mut dx = vec![0.0; if need_input_grad { b * in_len } else { 0 }];
                for r in 0..b {
                    let x = &input[r * in_len..(r + 1) * in_len];
                    let g = &grad[r * out_len..(r + 1) * out_len];
                    for (o, &go) in g.iter().enumerate() {
                        db[geo.out_channel(o)] += go;
                    }
                    if need_input_grad {
                        let dxr = &mut dx[r * in_len..(r + 1) * in_len];
                        geo.for_each_tap(|o, inp, ki| {
                            dk[ki] += g[o] * x[inp];
                            dxr[inp] += g[o] * k[ki];
                        });
                    } else {
                        geo.for_each_tap(|o, inp, ki| dk[ki] += g[o] * x[inp]);
                    }
                }
                updates.push((i, dk, db));
                dx
            }
            Layer::Softmax => grad,
            _ => {
                let out_len = grad.len() / b;
                (0..b)
                    .flat_map(|r| {
                        net.layer_backward(
                            i,
                            &input[r * in_len..(r + 1) * in_len],
                            &grad[r * out_len..(r + 1) * out_len],
                        )
                    })
                    .collect()
            }
        };
    }

    let layers = net.layers_mut();
    for (i, dw, db) in updates {
        if let Layer::Dense { weights, bias }
        | Layer::Conv2d {
            kernels: weights,
            bias,
            ..
        } = &mut layers[i]
        {
            for (w, d) in weights.data_mut().iter_mut().zip(&dw) {
                *w -= lr * d;
            }
            for (v, d) in bias.data_mut().iter_mut().zip(&db) {
                *v -= lr * d;
            }
        }
    }
    loss / b as f64
}

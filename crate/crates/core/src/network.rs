//! Layer vocabulary, shape checking, inference and reverse-mode gradients.
//!
//! Images use channel-first layout `[channels, height, width]`. Dense layers
//! store their weights as `[out, in]`; convolution kernels as
//! `[out_channels, in_channels, kernel_h, kernel_w]`.

use crate::error::{Error, Result};
use crate::linalg::{matvec, matvec_t};
use crate::tensor::{softmax, Tensor};

/// Convolution padding mode. `Same` follows the usual convention: output
/// size is `ceil(input / stride)` and any odd padding goes to the bottom/right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense {
        weights: Tensor,
        bias: Tensor,
    },
    Conv2d {
        kernels: Tensor,
        bias: Tensor,
        stride: usize,
        padding: Padding,
    },
    Relu,
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
    /// Only allowed as the final layer; skipped by [`Network::forward`].
    Softmax,
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::Flatten => "flatten",
            Layer::Softmax => "softmax",
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Dense { weights, bias } => weights.len() + bias.len(),
            Layer::Conv2d { kernels, bias, .. } => kernels.len() + bias.len(),
            _ => 0,
        }
    }

    /// Output shape for a given input shape.
    pub(crate) fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let invalid = |reason: String| Error::InvalidLayer { index, reason };
        match self {
            Layer::Dense { weights, bias } => {
                let ws = weights.shape();
                if ws.len() != 2 {
                    return Err(invalid(format!("dense weights must be 2-D, got {ws:?}")));
                }
                if bias.shape() != [ws[0]] {
                    return Err(invalid(format!(
                        "dense bias {:?} does not match {} outputs",
                        bias.shape(),
                        ws[0]
                    )));
                }
                if input != [ws[1]] {
                    return Err(invalid(format!(
                        "dense layer expects input [{}], got {input:?}",
                        ws[1]
                    )));
                }
                Ok(vec![ws[0]])
            }
            Layer::Conv2d {
                kernels,
                bias,
                stride,
                padding,
            } => {
                let ks = kernels.shape();
                if ks.len() != 4 {
                    return Err(invalid(format!("conv kernels must be 4-D, got {ks:?}")));
                }
                if bias.shape() != [ks[0]] {
                    return Err(invalid(format!(
                        "conv bias {:?} does not match {} filters",
                        bias.shape(),
                        ks[0]
                    )));
                }
                if *stride == 0 {
                    return Err(invalid("conv stride must be positive".into()));
                }
                if input.len() != 3 || input[0] != ks[1] {
                    return Err(invalid(format!(
                        "conv expects input [{}, h, w], got {input:?}",
                        ks[1]
                    )));
                }
                let geo = ConvGeometry::new(input, ks, *stride, *padding)
                    .ok_or_else(|| invalid(format!("kernel {ks:?} larger than input {input:?}")))?;
                Ok(vec![geo.out_c, geo.out_h, geo.out_w])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2d { window, stride } => {
                if *window == 0 || *stride == 0 {
                    return Err(invalid("pool window and stride must be positive".into()));
                }
                if input.len() != 3 || input[1] < *window || input[2] < *window {
                    return Err(invalid(format!(
                        "maxpool window {window} needs a [c, h, w] input at least that large, got {input:?}"
                    )));
                }
                let geo = PoolGeometry::new(input, *window, *stride);
                Ok(vec![geo.channels, geo.out_h, geo.out_w])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Softmax => {
                if input.len() != 1 {
                    return Err(invalid(format!(
                        "softmax expects a 1-D input, got {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
        }
    }
}

/// Index bookkeeping for a 2-D convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, padding: Padding) -> Option<Self> {
        let (in_c, in_h, in_w) = (input[0], input[1], input[2]);
        let (out_c, kh, kw) = (kernel[0], kernel[2], kernel[3]);
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Valid => {
                if kh > in_h || kw > in_w {
                    return None;
                }
                ((in_h - kh) / stride + 1, (in_w - kw) / stride + 1, 0, 0)
            }
            Padding::Same => {
                let out_h = in_h.div_ceil(stride);
                let out_w = in_w.div_ceil(stride);
                let pad_h = ((out_h - 1) * stride + kh).saturating_sub(in_h);
                let pad_w = ((out_w - 1) * stride + kw).saturating_sub(in_w);
                (out_h, out_w, pad_h / 2, pad_w / 2)
            }
        };
        Some(Self {
            in_c,
            in_h,
            in_w,
            out_c,
            out_h,
            out_w,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
        })
    }

    pub fn out_len(&self) -> usize {
        self.out_c * self.out_h * self.out_w
    }

    /// Calls `f(out_index, in_index, kernel_index)` for every multiply in the
    /// convolution. Taps falling into padding are skipped.
    pub fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for o in 0..self.out_c {
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let out = (o * self.out_h + oy) * self.out_w + ox;
                    for c in 0..self.in_c {
                        for ki in 0..self.kh {
                            let iy = (oy * self.stride + ki) as isize - self.pad_top as isize;
                            if iy < 0 || iy >= self.in_h as isize {
                                continue;
                            }
                            for kj in 0..self.kw {
                                let ix = (ox * self.stride + kj) as isize - self.pad_left as isize;
                                if ix < 0 || ix >= self.in_w as isize {
                                    continue;
                                }
                                let input = (c * self.in_h + iy as usize) * self.in_w + ix as usize;
                                let k = ((o * self.in_c + c) * self.kh + ki) * self.kw + kj;
                                f(out, input, k);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Index of the output channel owning a flat output index.
    pub fn out_channel(&self, out: usize) -> usize {
        out / (self.out_h * self.out_w)
    }
}

/// Index bookkeeping for max pooling (valid padding).
#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolGeometry {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub window: usize,
    pub stride: usize,
}

impl PoolGeometry {
    pub fn new(input: &[usize], window: usize, stride: usize) -> Self {
        Self {
            channels: input[0],
            in_h: input[1],
            in_w: input[2],
            out_h: (input[1] - window) / stride + 1,
            out_w: (input[2] - window) / stride + 1,
            window,
            stride,
        }
    }

    /// Input indices of every pooling window in output order; each window is
    /// listed in row-major scan order.
    pub fn windows(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(self.channels * self.out_h * self.out_w);
        for c in 0..self.channels {
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let mut w = Vec::with_capacity(self.window * self.window);
                    for ki in 0..self.window {
                        for kj in 0..self.window {
                            let y = oy * self.stride + ki;
                            let x = ox * self.stride + kj;
                            w.push((c * self.in_h + y) * self.in_w + x);
                        }
                    }
                    out.push(w);
                }
            }
        }
        out
    }
}

/// First maximal element in scan order.
fn window_argmax(input: &[f64], window: &[usize]) -> usize {
    let mut best = window[0];
    for &i in &window[1..] {
        if input[i] > input[best] {
            best = i;
        }
    }
    best
}

/// A feedforward network: an ordered list of layers with validated shapes.
///
/// Immutable after construction and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    /// `shapes[i]` is the input shape of layer `i`; the last entry is the output.
    shapes: Vec<Vec<usize>>,
    class_count: usize,
    split_index: Option<usize>,
}

impl Network {
    pub fn new(layers: Vec<Layer>, input_shape: Vec<usize>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidNetwork(format!(
                "input shape {input_shape:?} must be non-empty with positive dimensions"
            )));
        }
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("network has no layers".into()));
        }
        let mut shapes = vec![input_shape.clone()];
        for (i, layer) in layers.iter().enumerate() {
            if matches!(layer, Layer::Softmax) && i + 1 != layers.len() {
                return Err(Error::InvalidLayer {
                    index: i,
                    reason: "softmax may only appear as the final layer".into(),
                });
            }
            let next = layer.output_shape(i, &shapes[i])?;
            shapes.push(next);
        }
        let out = shapes.last().expect("at least one shape");
        if out.len() != 1 {
            return Err(Error::InvalidNetwork(format!(
                "network output must be 1-D logits, got shape {out:?}"
            )));
        }
        let class_count = out[0];
        Ok(Self {
            layers,
            input_shape,
            shapes,
            class_count,
            split_index: None,
        })
    }

    /// Records a default split point for `f = g ∘ h`; must lie strictly inside
    /// the layer list.
    pub fn with_split_index(mut self, split: usize) -> Result<Self> {
        if split == 0 || split >= self.layers.len() {
            return Err(Error::InvalidSplit {
                index: split,
                layers: self.layers.len(),
            });
        }
        self.split_index = Some(split);
        Ok(self)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Parameter values may change; shapes must not.
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split_index(&self) -> Option<usize> {
        self.split_index
    }

    /// Input shape of layer `index` (`index == layers.len()` gives the output shape).
    pub fn shape_at(&self, index: usize) -> &[usize] {
        &self.shapes[index]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        x.expect_shape(&self.input_shape)
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.class_count {
            return Err(Error::ClassOutOfRange {
                index: class,
                classes: self.class_count,
            });
        }
        Ok(())
    }

    /// Pre-softmax logits.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let out = self.run(x.data(), 0, self.layers.len());
        Ok(Tensor::from_parts(vec![self.class_count], out))
    }

    /// Softmax probabilities.
    pub fn forward_probs(&self, x: &Tensor) -> Result<Tensor> {
        let logits = self.forward(x)?;
        Ok(Tensor::from_parts(
            vec![self.class_count],
            softmax(logits.data()),
        ))
    }

    /// Output of the layer prefix `[0, split)`; `split == 0` returns `x`.
    pub fn activation_at(&self, x: &Tensor, split: usize) -> Result<Tensor> {
        self.check_input(x)?;
        self.check_split(split)?;
        let out = self.run(x.data(), 0, split);
        Ok(Tensor::from_parts(self.shapes[split].clone(), out))
    }

    /// Logits of the layer suffix `[split, len)` applied to an activation
    /// of shape `shape_at(split)`.
    pub fn forward_from(&self, split: usize, activation: &Tensor) -> Result<Tensor> {
        self.check_split(split)?;
        activation.expect_shape(&self.shapes[split])?;
        let out = self.run(activation.data(), split, self.layers.len());
        Ok(Tensor::from_parts(vec![self.class_count], out))
    }

    pub(crate) fn check_split(&self, split: usize) -> Result<()> {
        if split > self.layers.len() {
            return Err(Error::InvalidSplit {
                index: split,
                layers: self.layers.len(),
            });
        }
        Ok(())
    }

    /// Runs layers `[from, to)` on a flat activation (softmax skipped).
    pub(crate) fn run(&self, input: &[f64], from: usize, to: usize) -> Vec<f64> {
        let mut act = input.to_vec();
        for i in from..to {
            act = self.layer_forward(i, &act);
        }
        act
    }

    /// Flat logits of a flat input. The caller guarantees the length.
    pub(crate) fn logits(&self, input: &[f64]) -> Vec<f64> {
        self.run(input, 0, self.layers.len())
    }

    /// Activations `[x, out_0, out_1, ...]` for layers `[0, to)`.
    fn run_recording(&self, input: &[f64], to: usize) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(to + 1);
        acts.push(input.to_vec());
        for i in 0..to {
            let next = self.layer_forward(i, &acts[i]);
            acts.push(next);
        }
        acts
    }

    pub(crate) fn layer_forward(&self, i: usize, input: &[f64]) -> Vec<f64> {
        match &self.layers[i] {
            Layer::Dense { weights, bias } => {
                let (rows, cols) = (weights.shape()[0], weights.shape()[1]);
                let mut y = matvec(rows, cols, weights.data(), input);
                for (yi, bi) in y.iter_mut().zip(bias.data()) {
                    *yi += bi;
                }
                y
            }
            Layer::Conv2d {
                kernels,
                bias,
                stride,
                padding,
            } => {
                let geo = self.conv_geometry(i, kernels, *stride, *padding);
                let per_channel = geo.out_h * geo.out_w;
                let mut y: Vec<f64> = (0..geo.out_len())
                    .map(|o| bias.data()[o / per_channel])
                    .collect();
                let k = kernels.data();
                geo.for_each_tap(|o, inp, ki| y[o] += k[ki] * input[inp]);
                y
            }
            Layer::Relu => input.iter().map(|&v| v.max(0.0)).collect(),
            Layer::MaxPool2d { window, stride } => {
                let geo = PoolGeometry::new(&self.shapes[i], *window, *stride);
                geo.windows()
                    .iter()
                    .map(|w| input[window_argmax(input, w)])
                    .collect()
            }
            Layer::Flatten | Layer::Softmax => input.to_vec(),
        }
    }

    pub(crate) fn conv_geometry(
        &self,
        i: usize,
        kernels: &Tensor,
        stride: usize,
        padding: Padding,
    ) -> ConvGeometry {
        ConvGeometry::new(&self.shapes[i], kernels.shape(), stride, padding)
            .expect("validated at construction")
    }

    /// Gradient of the loss w.r.t. the input of layer `i`, given the input
    /// activation and the gradient w.r.t. the layer output.
    pub(crate) fn layer_backward(&self, i: usize, input: &[f64], grad_out: &[f64]) -> Vec<f64> {
        match &self.layers[i] {
            Layer::Dense { weights, .. } => {
                let (rows, cols) = (weights.shape()[0], weights.shape()[1]);
                matvec_t(rows, cols, weights.data(), grad_out)
            }
            Layer::Conv2d {
                kernels,
                stride,
                padding,
                ..
            } => {
                let geo = self.conv_geometry(i, kernels, *stride, *padding);
                let mut g = vec![0.0; input.len()];
                let k = kernels.data();
                geo.for_each_tap(|o, inp, ki| g[inp] += k[ki] * grad_out[o]);
                g
            }
            // subgradient 0 at exactly 0
            Layer::Relu => input
                .iter()
                .zip(grad_out)
                .map(|(&z, &g)| if z > 0.0 { g } else { 0.0 })
                .collect(),
            Layer::MaxPool2d { window, stride } => {
                let geo = PoolGeometry::new(&self.shapes[i], *window, *stride);
                let mut g = vec![0.0; input.len()];
                for (w, &go) in geo.windows().iter().zip(grad_out) {
                    g[window_argmax(input, w)] += go;
                }
                g
            }
            Layer::Flatten | Layer::Softmax => grad_out.to_vec(),
        }
    }

    /// Seed gradient on the logits for a class score.
    fn output_seed(&self, logits: &[f64], class: usize, wrt_probs: bool) -> Vec<f64> {
        let mut seed = vec![0.0; self.class_count];
        if wrt_probs {
            let p = softmax(logits);
            for (j, s) in seed.iter_mut().enumerate() {
                let kron = if j == class { 1.0 } else { 0.0 };
                *s = p[class] * (kron - p[j]);
            }
        } else {
            seed[class] = 1.0;
        }
        seed
    }

    /// Gradient of a class logit (or probability) with respect to the input.
    pub fn gradient(&self, x: &Tensor, class: usize, wrt_probs: bool) -> Result<Tensor> {
        self.check_input(x)?;
        self.check_class(class)?;
        Ok(Tensor::from_parts(
            self.input_shape.clone(),
            self.gradient_flat(x.data(), class, wrt_probs),
        ))
    }

    pub(crate) fn gradient_flat(&self, x: &[f64], class: usize, wrt_probs: bool) -> Vec<f64> {
        let n = self.layers.len();
        let acts = self.run_recording(x, n);
        let mut grad = self.output_seed(&acts[n], class, wrt_probs);
        for i in (0..n).rev() {
            grad = self.layer_backward(i, &acts[i], &grad);
        }
        grad
    }

    /// Gradient of an arbitrary linear functional `seed · logits` w.r.t. the input.
    pub(crate) fn vjp_flat(&self, x: &[f64], seed: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.layers.len();
        let acts = self.run_recording(x, n);
        let mut grad = seed.to_vec();
        for i in (0..n).rev() {
            grad = self.layer_backward(i, &acts[i], &grad);
        }
        (acts[n].clone(), grad)
    }

    /// Output maps `A` of a convolution layer together with the gradient of
    /// the class logit with respect to them.
    pub fn feature_maps_and_grads(
        &self,
        x: &Tensor,
        class: usize,
        conv_layer: usize,
    ) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        self.check_class(class)?;
        if !matches!(self.layers.get(conv_layer), Some(Layer::Conv2d { .. })) {
            return Err(Error::NotConvolution { index: conv_layer });
        }
        let n = self.layers.len();
        let acts = self.run_recording(x.data(), n);
        let mut grad = self.output_seed(&acts[n], class, false);
        for i in (conv_layer + 1..n).rev() {
            grad = self.layer_backward(i, &acts[i], &grad);
        }
        let shape = self.shapes[conv_layer + 1].clone();
        Ok((
            Tensor::from_parts(shape.clone(), acts[conv_layer + 1].clone()),
            Tensor::from_parts(shape, grad),
        ))
    }

    /// Index of the last convolution layer, if any.
    pub fn last_conv_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| matches!(l, Layer::Conv2d { .. }))
    }

    /// Predicted class (lowest index on ties).
    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.forward(x)?.argmax())
    }
}

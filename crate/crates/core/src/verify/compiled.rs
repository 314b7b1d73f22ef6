//! Lowering of a network (or a suffix of it) into the three primitive
//! operations bound propagation understands.

use crate::network::{Layer, Network, PoolGeometry};

pub(crate) enum Op {
    /// `z' = W z + b`, `W` row-major `rows × cols`. Convolutions are lowered
    /// to their equivalent dense matrix.
    Affine {
        rows: usize,
        cols: usize,
        w: Vec<f64>,
        /// `W⁻` stacked over `W⁺`, `2·rows × cols`.
        w_split: Vec<f64>,
        w_abs: Vec<f64>,
        bias: Vec<f64>,
    },
    Relu,
    MaxPool {
        windows: Vec<Vec<usize>>,
    },
}

impl Op {
    pub fn is_nonlinear(&self) -> bool {
        !matches!(self, Op::Affine { .. })
    }

    fn output_len(&self, input_len: usize) -> usize {
        match self {
            Op::Affine { rows, .. } => *rows,
            Op::Relu => input_len,
            Op::MaxPool { windows } => windows.len(),
        }
    }
}

pub(crate) struct CompiledNet {
    pub ops: Vec<Op>,
    /// Activation length at the input of each op, plus the final output.
    pub lens: Vec<usize>,
}

impl CompiledNet {
    /// Lowers layers `[from, len)`; flatten and softmax disappear.
    pub fn new(net: &Network, from: usize) -> Self {
        let input_len: usize = net.shape_at(from).iter().product();
        let mut ops = Vec::new();
        for i in from..net.layers().len() {
            match &net.layers()[i] {
                Layer::Dense { weights, bias } => {
                    let (rows, cols) = (weights.shape()[0], weights.shape()[1]);
                    ops.push(affine(
                        rows,
                        cols,
                        weights.data().to_vec(),
                        bias.data().to_vec(),
                    ));
                }
                Layer::Conv2d {
                    kernels,
                    bias,
                    stride,
                    padding,
                } => {
                    let geo = net.conv_geometry(i, kernels, *stride, *padding);
                    let cols: usize = net.shape_at(i).iter().product();
                    let rows = geo.out_len();
                    let mut w = vec![0.0; rows * cols];
                    let k = kernels.data();
                    geo.for_each_tap(|o, inp, ki| w[o * cols + inp] += k[ki]);
                    let b = (0..rows).map(|o| bias.data()[geo.out_channel(o)]).collect();
                    ops.push(affine(rows, cols, w, b));
                }
                Layer::Relu => ops.push(Op::Relu),
                Layer::MaxPool2d { window, stride } => {
                    let geo = PoolGeometry::new(net.shape_at(i), *window, *stride);
                    ops.push(Op::MaxPool {
                        windows: geo.windows(),
                    });
                }
                Layer::Flatten | Layer::Softmax => {}
            }
        }
        let mut lens = vec![input_len];
        for op in &ops {
            let next = op.output_len(*lens.last().expect("non-empty"));
            lens.push(next);
        }
        Self { ops, lens }
    }

    pub fn output_len(&self) -> usize {
        *self.lens.last().expect("non-empty")
    }

    pub fn has_maxpool(&self) -> bool {
        self.ops.iter().any(|op| matches!(op, Op::MaxPool { .. }))
    }
}

fn affine(rows: usize, cols: usize, w: Vec<f64>, bias: Vec<f64>) -> Op {
    let w_split = w
        .iter()
        .map(|&v| v.min(0.0))
        .chain(w.iter().map(|&v| v.max(0.0)))
        .collect();
    let w_abs = w.iter().map(|&v| v.abs()).collect();
    Op::Affine {
        rows,
        cols,
        w,
        w_split,
        w_abs,
        bias,
    }
}

/// Per-neuron linear relaxation of `ReLU` over a pre-activation interval
/// `[l, u]`: `lower_slope · z ≤ relu(z) ≤ upper_slope · z + upper_intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ReluRelaxation {
    pub upper_slope: f64,
    pub upper_intercept: f64,
    pub lower_slope: f64,
}

impl ReluRelaxation {
    pub fn new(l: f64, u: f64) -> Self {
        if u <= 0.0 {
            Self {
                upper_slope: 0.0,
                upper_intercept: 0.0,
                lower_slope: 0.0,
            }
        } else if l >= 0.0 {
            Self {
                upper_slope: 1.0,
                upper_intercept: 0.0,
                lower_slope: 1.0,
            }
        } else {
            let s = u / (u - l);
            Self {
                upper_slope: s,
                upper_intercept: -s * l,
                lower_slope: if u >= -l { 1.0 } else { 0.0 },
            }
        }
    }
}

//! Certified output bounds over a [`PerturbBox`]: interval propagation,
//! forward affine relaxation, backward linear relaxation and combinations.

mod backward;
mod compiled;
mod forward;
mod ibp;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::perturbation::PerturbBox;
use crate::tensor::Tensor;

use compiled::CompiledNet;

pub(crate) type Interval = (Vec<f64>, Vec<f64>);

/// Elementwise lower and upper bounds of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBounds {
    lower: Tensor,
    upper: Tensor,
}

impl IntervalBounds {
    pub fn new(lower: Tensor, upper: Tensor) -> Result<Self> {
        upper.expect_shape(lower.shape())?;
        if let Some(i) = lower
            .data()
            .iter()
            .zip(upper.data())
            .position(|(l, u)| l > u)
        {
            return Err(Error::InvalidArgument(format!(
                "lower bound exceeds upper bound at {i}"
            )));
        }
        Ok(Self { lower, upper })
    }

    fn from_interval(shape: &[usize], (lower, upper): Interval) -> Self {
        Self {
            lower: Tensor::from_parts(shape.to_vec(), lower),
            upper: Tensor::from_parts(shape.to_vec(), upper),
        }
    }

    fn to_interval(&self) -> Interval {
        (self.lower.data().to_vec(), self.upper.data().to_vec())
    }

    pub fn lower(&self) -> &Tensor {
        &self.lower
    }

    pub fn upper(&self) -> &Tensor {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Mean of `upper - lower`.
    pub fn mean_gap(&self) -> f64 {
        let total: f64 = self
            .lower
            .data()
            .iter()
            .zip(self.upper.data())
            .map(|(l, u)| u - l)
            .sum();
        total / self.len() as f64
    }

    /// Whether `other` lies inside `self`, up to `tol`.
    pub fn contains(&self, other: &IntervalBounds, tol: f64) -> bool {
        self.lower.shape() == other.lower.shape()
            && self
                .lower
                .data()
                .iter()
                .zip(other.lower.data())
                .all(|(a, b)| *b >= a - tol)
            && self
                .upper
                .data()
                .iter()
                .zip(other.upper.data())
                .all(|(a, b)| *b <= a + tol)
    }
}

/// Affine bounds `A_l·δ + b_l ≤ z(x + δ) ≤ A_u·δ + b_u` on the output.
/// Coefficient matrices are `outputs × input_dim`; frozen coordinates
/// carry zero coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineBounds {
    pub lower_coeffs: Tensor,
    pub lower_offset: Tensor,
    pub upper_coeffs: Tensor,
    pub upper_offset: Tensor,
}

/// Pre-activation bounds of every ReLU and max-pool (flattened, in layer
/// order) together with the output bounds of the pass that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBoundsTrace {
    entries: Vec<IntervalBounds>,
    output: IntervalBounds,
}

impl LayerBoundsTrace {
    fn from_parts(entries: Vec<Interval>, output: IntervalBounds) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|iv| {
                    let n = iv.0.len();
                    IntervalBounds::from_interval(&[n], iv)
                })
                .collect(),
            output,
        }
    }

    pub fn entries(&self) -> &[IntervalBounds] {
        &self.entries
    }

    pub fn output(&self) -> &IntervalBounds {
        &self.output
    }

    fn intervals(&self) -> Vec<Interval> {
        self.entries
            .iter()
            .map(IntervalBounds::to_interval)
            .collect()
    }

    /// Elementwise intersection of two traces over the same network.
    pub fn combine(&self, other: &LayerBoundsTrace) -> Result<Self> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::InvalidArgument(format!(
                "traces have {} and {} entries",
                self.entries.len(),
                other.entries.len()
            )));
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| combine_bounds(&[a.clone(), b.clone()]))
            .collect::<Result<_>>()?;
        let output = combine_bounds(&[self.output.clone(), other.output.clone()])?;
        Ok(Self { entries, output })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundMethod {
    #[serde(rename = "ibp")]
    Ibp,
    #[serde(rename = "forward")]
    Forward,
    #[serde(rename = "backward")]
    Backward,
    #[serde(rename = "ibp+fo")]
    IbpForward,
    #[serde(rename = "ibp+fo+ba")]
    IbpForwardBackward,
}

impl BoundMethod {
    pub const ALL: [BoundMethod; 5] = [
        BoundMethod::Ibp,
        BoundMethod::Forward,
        BoundMethod::Backward,
        BoundMethod::IbpForward,
        BoundMethod::IbpForwardBackward,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundMethod::Ibp => "ibp",
            BoundMethod::Forward => "forward",
            BoundMethod::Backward => "backward",
            BoundMethod::IbpForward => "ibp+fo",
            BoundMethod::IbpForwardBackward => "ibp+fo+ba",
        }
    }
}

impl fmt::Display for BoundMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoundMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BoundMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown bound method `{s}`")))
    }
}

/// Norm of the perturbation ball. Only the final step of the backward pass
/// distinguishes them; every other stage works on the enclosing box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Linf,
    L1,
    L2,
}

impl Norm {
    pub fn name(self) -> &'static str {
        match self {
            Norm::Linf => "linf",
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linf" | "inf" => Ok(Norm::Linf),
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            _ => Err(Error::InvalidArgument(format!("unknown norm `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub method: BoundMethod,
    pub norm: Norm,
}

impl From<BoundMethod> for BoundConfig {
    fn from(method: BoundMethod) -> Self {
        Self {
            method,
            norm: Norm::Linf,
        }
    }
}

/// Result of a backward pass. `fell_back` is set when a max-pool blocked
/// the relaxation and the trace's output bounds were returned instead.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardBounds {
    pub bounds: IntervalBounds,
    pub fell_back: bool,
}

/// A network (or the suffix starting at some layer) lowered once for
/// repeated bound computations over many boxes.
pub struct Verifier {
    compiled: CompiledNet,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
}

impl Verifier {
    pub fn new(net: &Network) -> Self {
        Self::build(net, 0)
    }

    /// Verifier for the layers from `split` onward; boxes live in the
    /// activation space at `split`.
    pub fn suffix(net: &Network, split: usize) -> Result<Self> {
        net.check_split(split)?;
        Ok(Self::build(net, split))
    }

    fn build(net: &Network, from: usize) -> Self {
        Self {
            compiled: CompiledNet::new(net, from),
            input_shape: net.shape_at(from).to_vec(),
            output_shape: vec![net.class_count()],
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    fn check_box(&self, b: &PerturbBox) -> Result<()> {
        b.center().expect_shape(&self.input_shape)
    }

    fn output(&self, iv: Interval) -> IntervalBounds {
        let (lower, upper) = iv;
        // Rounding in combined bounds may cross by an ulp; keep the invariant.
        let (lower, upper) = lower
            .into_iter()
            .zip(upper)
            .map(|(l, u)| {
                if l > u {
                    ((l + u) / 2.0, (l + u) / 2.0)
                } else {
                    (l, u)
                }
            })
            .unzip();
        IntervalBounds::from_interval(&self.output_shape, (lower, upper))
    }

    pub fn ibp(&self, b: &PerturbBox) -> Result<(IntervalBounds, LayerBoundsTrace)> {
        self.check_box(b)?;
        let (out, trace) = ibp::propagate(&self.compiled, b.lower_corner(), b.upper_corner());
        let out = self.output(out);
        Ok((out.clone(), LayerBoundsTrace::from_parts(trace, out)))
    }

    pub fn forward_affine(
        &self,
        b: &PerturbBox,
    ) -> Result<(IntervalBounds, LayerBoundsTrace, AffineBounds)> {
        self.check_box(b)?;
        let pass = forward::propagate(
            &self.compiled,
            b.center().data(),
            b.lo().data(),
            b.hi().data(),
        );
        let out = self.output(pass.output);
        let dim = b.dim();
        let f = &pass.forms;
        let (a_lo, a_hi) = f.materialize();
        let expand = |a: &[f64]| {
            let mut full = vec![0.0; f.n * dim];
            for j in 0..f.n {
                for (k, &i) in pass.free.iter().enumerate() {
                    full[j * dim + i] = a[j * f.d + k];
                }
            }
            Tensor::from_parts(vec![f.n, dim], full)
        };
        let affine = AffineBounds {
            lower_coeffs: expand(&a_lo),
            lower_offset: Tensor::from_parts(vec![f.n], f.b_lo.clone()),
            upper_coeffs: expand(&a_hi),
            upper_offset: Tensor::from_parts(vec![f.n], f.b_hi.clone()),
        };
        Ok((
            out.clone(),
            LayerBoundsTrace::from_parts(pass.trace, out),
            affine,
        ))
    }

    fn forward_only(&self, b: &PerturbBox) -> (IntervalBounds, LayerBoundsTrace) {
        let pass = forward::propagate(
            &self.compiled,
            b.center().data(),
            b.lo().data(),
            b.hi().data(),
        );
        let out = self.output(pass.output);
        (out.clone(), LayerBoundsTrace::from_parts(pass.trace, out))
    }

    pub fn backward(
        &self,
        b: &PerturbBox,
        trace: &LayerBoundsTrace,
        norm: Norm,
    ) -> Result<BackwardBounds> {
        self.check_box(b)?;
        let expected = self
            .compiled
            .ops
            .iter()
            .filter(|op| op.is_nonlinear())
            .count();
        if trace.entries.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "trace has {} entries, network has {expected} nonlinearities",
                trace.entries.len()
            )));
        }
        let mut k = 0;
        for (i, op) in self.compiled.ops.iter().enumerate() {
            if op.is_nonlinear() {
                if trace.entries[k].len() != self.compiled.lens[i] {
                    return Err(Error::InvalidArgument(format!(
                        "trace entry {k} has length {}, expected {}",
                        trace.entries[k].len(),
                        self.compiled.lens[i]
                    )));
                }
                k += 1;
            }
        }
        let result = backward::propagate(
            &self.compiled,
            b.center().data(),
            b.lo().data(),
            b.hi().data(),
            &trace.intervals(),
            norm,
        );
        Ok(match result {
            Some(iv) => BackwardBounds {
                bounds: self.output(iv),
                fell_back: false,
            },
            None => BackwardBounds {
                bounds: trace.output.clone(),
                fell_back: true,
            },
        })
    }

    /// Output bounds for `b` under the configured method.
    pub fn bounds(&self, b: &PerturbBox, config: impl Into<BoundConfig>) -> Result<IntervalBounds> {
        let BoundConfig { method, norm } = config.into();
        self.check_box(b)?;
        match method {
            BoundMethod::Ibp => Ok(self.ibp(b)?.0),
            BoundMethod::Forward => Ok(self.forward_only(b).0),
            BoundMethod::Backward => {
                let (_, trace) = self.ibp(b)?;
                Ok(self.backward(b, &trace, norm)?.bounds)
            }
            BoundMethod::IbpForward => {
                let (i, _) = self.ibp(b)?;
                let (f, _) = self.forward_only(b);
                combine_bounds(&[i, f])
            }
            BoundMethod::IbpForwardBackward => {
                let (i, ti) = self.ibp(b)?;
                let (f, tf) = self.forward_only(b);
                let trace = ti.combine(&tf)?;
                let back = self.backward(b, &trace, norm)?.bounds;
                combine_bounds(&[i, f, back])
            }
        }
    }
}

pub fn ibp_bounds(net: &Network, b: &PerturbBox) -> Result<(IntervalBounds, LayerBoundsTrace)> {
    Verifier::new(net).ibp(b)
}

pub fn forward_affine_bounds(
    net: &Network,
    b: &PerturbBox,
) -> Result<(IntervalBounds, LayerBoundsTrace, AffineBounds)> {
    Verifier::new(net).forward_affine(b)
}

pub fn backward_bounds(
    net: &Network,
    b: &PerturbBox,
    trace: &LayerBoundsTrace,
    norm: Norm,
) -> Result<BackwardBounds> {
    Verifier::new(net).backward(b, trace, norm)
}

/// Elementwise intersection: max of lowers, min of uppers.
pub fn combine_bounds(list: &[IntervalBounds]) -> Result<IntervalBounds> {
    let (first, rest) = list
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("nothing to combine".into()))?;
    let mut lower = first.lower.data().to_vec();
    let mut upper = first.upper.data().to_vec();
    for b in rest {
        b.lower.expect_shape(first.lower.shape())?;
        for (l, v) in lower.iter_mut().zip(b.lower.data()) {
            *l = l.max(*v);
        }
        for (u, v) in upper.iter_mut().zip(b.upper.data()) {
            *u = u.min(*v);
        }
    }
    for (l, u) in lower.iter_mut().zip(upper.iter_mut()) {
        if *l > *u {
            let mid = (*l + *u) / 2.0;
            *l = mid;
            *u = mid;
        }
    }
    Ok(IntervalBounds::from_interval(
        first.lower.shape(),
        (lower, upper),
    ))
}

pub fn bounds(
    net: &Network,
    b: &PerturbBox,
    config: impl Into<BoundConfig>,
) -> Result<IntervalBounds> {
    Verifier::new(net).bounds(b, config)
}

/// Bounds of the layers from `split` onward over a box in activation space.
pub fn bounds_from_activation(
    net: &Network,
    split: usize,
    activation_box: &PerturbBox,
    config: impl Into<BoundConfig>,
) -> Result<IntervalBounds> {
    Verifier::suffix(net, split)?.bounds(activation_box, config)
}

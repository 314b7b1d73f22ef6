//! Forward affine relaxation. Forms are kept over the free coordinates of
//! the box only; frozen coordinates never move and carry no coefficient.

use std::borrow::Cow;

use super::compiled::{CompiledNet, Op, ReluRelaxation};
use super::ibp::pool_interval;
use super::Interval;
use crate::linalg::{dot, gemm, matvec};
use crate::scratch;

/// Coefficient matrices of the lower and upper forms, each `n × d`
/// row-major.
enum Coeffs<'a> {
    /// Both forms share `a`.
    Shared(Cow<'a, [f64]>),
    /// `a_lo = diag(lo)·base`, `a_hi = diag(hi)·base` with `lo, hi ≥ 0`.
    Scaled {
        base: Cow<'a, [f64]>,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// `a_lo` stacked over `a_hi`.
    Split(Vec<f64>),
}

/// `a_lo·δ + b_lo ≤ z ≤ a_hi·δ + b_hi` for `n` neurons over `d` free
/// coordinates.
pub(crate) struct Forms<'a> {
    pub n: usize,
    pub d: usize,
    coeffs: Coeffs<'a>,
    pub b_lo: Vec<f64>,
    pub b_hi: Vec<f64>,
}

impl Drop for Forms<'_> {
    fn drop(&mut self) {
        match std::mem::replace(&mut self.coeffs, Coeffs::Split(Vec::new())) {
            Coeffs::Shared(Cow::Owned(a))
            | Coeffs::Scaled {
                base: Cow::Owned(a),
                ..
            }
            | Coeffs::Split(a) => scratch::recycle(a),
            _ => {}
        }
    }
}

fn scale_rows(a: &mut [f64], d: usize, s: &[f64]) {
    if d > 0 {
        for (row, &k) in a.chunks_exact_mut(d).zip(s) {
            row.iter_mut().for_each(|v| *v *= k);
        }
    }
}

/// `Σ |a_i| r_i`.
fn abs_dot(a: &[f64], r: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ac, rc) = (a.chunks_exact(8), r.chunks_exact(8));
    let tail: f64 = ac
        .remainder()
        .iter()
        .zip(rc.remainder())
        .map(|(x, y)| x.abs() * y)
        .sum();
    for (x, y) in ac.zip(rc) {
        for k in 0..8 {
            acc[k] += x[k].abs() * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Columns `cols` of a row-major `rows × n` matrix.
fn gather_cols<'m>(m: &'m [f64], rows: usize, n: usize, cols: &[usize]) -> Cow<'m, [f64]> {
    if cols.len() == n {
        return Cow::Borrowed(m);
    }
    let mut out = scratch::take(rows * cols.len());
    for row in m.chunks_exact(n).take(rows) {
        out.extend(cols.iter().map(|&j| row[j]));
    }
    Cow::Owned(out)
}

/// Rows `rows` of a row-major matrix with `d` columns.
fn gather_rows<'m>(m: &'m [f64], d: usize, rows: &[usize]) -> Cow<'m, [f64]> {
    if rows.len() * d == m.len() {
        return Cow::Borrowed(m);
    }
    let mut out = scratch::take(rows.len() * d);
    for &j in rows {
        out.extend_from_slice(&m[j * d..(j + 1) * d]);
    }
    Cow::Owned(out)
}

fn release(c: Cow<'_, [f64]>) {
    if let Cow::Owned(v) = c {
        scratch::recycle(v);
    }
}

/// Indices of the rows of `m` holding a nonzero entry.
fn nonzero_rows(m: &[f64], rows: usize, d: usize) -> Vec<usize> {
    (0..rows)
        .filter(|&j| m[j * d..(j + 1) * d].iter().any(|&v| v != 0.0))
        .collect()
}

impl<'a> Forms<'a> {
    fn identity(center: &[f64], free: &[usize]) -> Self {
        let d = free.len();
        let n = center.len();
        let mut a = scratch::zeros(n * d);
        for (k, &i) in free.iter().enumerate() {
            a[i * d + k] = 1.0;
        }
        Self {
            n,
            d,
            coeffs: Coeffs::Shared(Cow::Owned(a)),
            b_lo: center.to_vec(),
            b_hi: center.to_vec(),
        }
    }

    fn constant(d: usize, (lower, upper): Interval) -> Self {
        Self {
            n: lower.len(),
            d,
            coeffs: Coeffs::Shared(Cow::Owned(scratch::zeros(lower.len() * d))),
            b_lo: lower,
            b_hi: upper,
        }
    }

    /// Explicit `(a_lo, a_hi)`.
    pub fn materialize(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.coeffs {
            Coeffs::Shared(a) => (a.to_vec(), a.to_vec()),
            Coeffs::Scaled { base, lo, hi } => {
                let (mut a_lo, mut a_hi) = (base.to_vec(), base.to_vec());
                scale_rows(&mut a_lo, self.d, lo);
                scale_rows(&mut a_hi, self.d, hi);
                (a_lo, a_hi)
            }
            Coeffs::Split(both) => {
                let (lo, hi) = both.split_at(self.n * self.d);
                (lo.to_vec(), hi.to_vec())
            }
        }
    }

    /// Concrete interval of every neuron over the box with per-coordinate
    /// midpoint `mid` and radius `rad` (free coordinates only).
    pub fn concretize(&self, mid: &[f64], rad: &[f64]) -> Interval {
        let (n, d) = (self.n, self.d);
        let row = |a: &[f64], j: usize| {
            let r = &a[j * d..(j + 1) * d];
            (dot(r, mid), abs_dot(r, rad))
        };
        let (mut lower, mut upper) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for j in 0..n {
            let ((cl, rl), (ch, rh)) = match &self.coeffs {
                Coeffs::Shared(a) => {
                    let v = row(a, j);
                    (v, v)
                }
                Coeffs::Scaled { base, lo, hi } => {
                    let (c, r) = row(base, j);
                    ((lo[j] * c, lo[j] * r), (hi[j] * c, hi[j] * r))
                }
                Coeffs::Split(both) => (row(both, j), row(both, n + j)),
            };
            lower.push(self.b_lo[j] + cl - rl);
            upper.push(self.b_hi[j] + ch + rh);
        }
        (lower, upper)
    }

    fn affine(&self, rows: usize, w: &[f64], w_split: &[f64], bias: &[f64]) -> Forms<'a> {
        let (n, d) = (self.n, self.d);
        let (w_neg, w_pos) = w_split.split_at(rows * n);
        let combine = |p: &[f64], q: &[f64]| -> Vec<f64> {
            let mut out = matvec(rows, n, w_pos, p);
            for (o, (v, b)) in out
                .iter_mut()
                .zip(matvec(rows, n, w_neg, q).iter().zip(bias))
            {
                *o += v + b;
            }
            out
        };
        let b_lo = combine(&self.b_lo, &self.b_hi);
        let b_hi = combine(&self.b_hi, &self.b_lo);
        let coeffs = match &self.coeffs {
            Coeffs::Shared(a) => {
                let mut out = scratch::scratch(rows * d);
                gemm(rows, n, d, w, a, 0.0, &mut out);
                Coeffs::Shared(Cow::Owned(out))
            }
            Coeffs::Scaled { base, lo, hi } => {
                // [a_lo'; a_hi'] = [W⁺ diag(lo) + W⁻ diag(hi); W⁺ diag(hi) + W⁻ diag(lo)]·base
                let mut c = scratch::scratch(2 * rows * n);
                let (c_lo, c_hi) = c.split_at_mut(rows * n);
                for r in 0..rows {
                    for j in 0..n {
                        let (p, q) = (w_pos[r * n + j], w_neg[r * n + j]);
                        c_lo[r * n + j] = p * lo[j] + q * hi[j];
                        c_hi[r * n + j] = p * hi[j] + q * lo[j];
                    }
                }
                let mut out = scratch::scratch(2 * rows * d);
                gemm(2 * rows, n, d, &c, base, 0.0, &mut out);
                scratch::recycle(c);
                Coeffs::Split(out)
            }
            Coeffs::Split(both) => {
                // With D = a_hi - a_lo: a_lo' = W a_lo + W⁻ D and
                // a_hi' = W a_lo + W⁺ D. Zero rows of a_lo and rows where the
                // forms agree are skipped.
                let (lo, hi) = both.split_at(n * d);
                let mut diff = scratch::take(n * d);
                diff.extend(hi.iter().zip(lo).map(|(h, l)| h - l));
                let live = nonzero_rows(lo, n, d);
                let differ = nonzero_rows(&diff, n, d);

                let mut base = if live.is_empty() {
                    scratch::zeros(rows * d)
                } else {
                    scratch::scratch(rows * d)
                };
                if !live.is_empty() {
                    let wk = gather_cols(w, rows, n, &live);
                    let lk = gather_rows(lo, d, &live);
                    gemm(rows, live.len(), d, &wk, &lk, 0.0, &mut base);
                    release(wk);
                    release(lk);
                }
                let coeffs = if differ.is_empty() {
                    Coeffs::Shared(Cow::Owned(base))
                } else {
                    let ws = gather_cols(w_split, 2 * rows, n, &differ);
                    let dk = gather_rows(&diff, d, &differ);
                    let mut out = scratch::scratch(2 * rows * d);
                    gemm(2 * rows, differ.len(), d, &ws, &dk, 0.0, &mut out);
                    release(ws);
                    release(dk);
                    let (lo, hi) = out.split_at_mut(rows * d);
                    for ((l, h), b) in lo.iter_mut().zip(hi.iter_mut()).zip(&base) {
                        *l += b;
                        *h += b;
                    }
                    scratch::recycle(base);
                    Coeffs::Split(out)
                };
                scratch::recycle(diff);
                coeffs
            }
        };
        Forms {
            n: rows,
            d,
            coeffs,
            b_lo,
            b_hi,
        }
    }

    fn relu(&mut self, l: &[f64], u: &[f64]) {
        let relax: Vec<ReluRelaxation> = l
            .iter()
            .zip(u)
            .map(|(&l, &u)| ReluRelaxation::new(l, u))
            .collect();
        let lo_s: Vec<f64> = relax.iter().map(|r| r.lower_slope).collect();
        let hi_s: Vec<f64> = relax.iter().map(|r| r.upper_slope).collect();
        for (j, r) in relax.iter().enumerate() {
            self.b_lo[j] *= r.lower_slope;
            self.b_hi[j] = r.upper_slope * self.b_hi[j] + r.upper_intercept;
        }
        let (n, d) = (self.n, self.d);
        match &mut self.coeffs {
            Coeffs::Shared(a) => {
                let base = std::mem::take(a);
                self.coeffs = Coeffs::Scaled {
                    base,
                    lo: lo_s,
                    hi: hi_s,
                };
            }
            Coeffs::Scaled { lo, hi, .. } => {
                lo.iter_mut().zip(&lo_s).for_each(|(a, b)| *a *= b);
                hi.iter_mut().zip(&hi_s).for_each(|(a, b)| *a *= b);
            }
            Coeffs::Split(both) => {
                let (lo, hi) = both.split_at_mut(n * d);
                scale_rows(lo, d, &lo_s);
                scale_rows(hi, d, &hi_s);
            }
        }
    }
}

pub(crate) struct ForwardPass<'a> {
    pub output: Interval,
    pub trace: Vec<Interval>,
    pub forms: Forms<'a>,
    pub free: Vec<usize>,
}

pub(crate) fn propagate<'a>(
    net: &'a CompiledNet,
    center: &[f64],
    lo: &[f64],
    hi: &[f64],
) -> ForwardPass<'a> {
    let free: Vec<usize> = (0..center.len()).filter(|&i| lo[i] < hi[i]).collect();
    let fmid: Vec<f64> = free.iter().map(|&i| 0.5 * (lo[i] + hi[i])).collect();
    let frad: Vec<f64> = free.iter().map(|&i| 0.5 * (hi[i] - lo[i])).collect();
    let d = free.len();

    // `None` stands for the identity form, materialized only when needed.
    let mut forms: Option<Forms> = None;
    let mut trace = Vec::new();
    for op in &net.ops {
        match op {
            Op::Affine {
                rows,
                cols,
                w,
                w_split,
                bias,
                ..
            } => {
                forms = Some(match forms.take() {
                    Some(f) => f.affine(*rows, w, w_split, bias),
                    None => first_affine(*rows, *cols, w, bias, center, &free),
                });
            }
            Op::Relu => {
                let mut f = forms
                    .take()
                    .unwrap_or_else(|| Forms::identity(center, &free));
                let (l, u) = f.concretize(&fmid, &frad);
                f.relu(&l, &u);
                trace.push((l, u));
                forms = Some(f);
            }
            Op::MaxPool { windows } => {
                let f = forms
                    .take()
                    .unwrap_or_else(|| Forms::identity(center, &free));
                let (l, u) = f.concretize(&fmid, &frad);
                let pooled = pool_interval(windows, &l, &u);
                trace.push((l, u));
                forms = Some(Forms::constant(d, pooled));
            }
        }
    }
    let forms = forms.unwrap_or_else(|| Forms::identity(center, &free));
    ForwardPass {
        output: forms.concretize(&fmid, &frad),
        trace,
        forms,
        free,
    }
}

/// Affine map applied to the identity form: coefficients are the weight
/// columns of the free coordinates, offsets are exact.
fn first_affine<'a>(
    rows: usize,
    cols: usize,
    w: &'a [f64],
    bias: &[f64],
    center: &[f64],
    free: &[usize],
) -> Forms<'a> {
    let mut b = matvec(rows, cols, w, center);
    for (v, bi) in b.iter_mut().zip(bias) {
        *v += bi;
    }
    Forms {
        n: rows,
        d: free.len(),
        coeffs: Coeffs::Shared(gather_cols(w, rows, cols, free)),
        b_lo: b.clone(),
        b_hi: b,
    }
}

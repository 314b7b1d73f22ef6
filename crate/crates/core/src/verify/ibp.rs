use super::compiled::{CompiledNet, Op};
use super::Interval;
use crate::linalg::matvec;

/// Interval propagation through every op; returns output bounds and the
/// pre-activation interval of each nonlinearity.
pub(crate) fn propagate(
    net: &CompiledNet,
    lo: Vec<f64>,
    hi: Vec<f64>,
) -> (Interval, Vec<Interval>) {
    let mut cur = (lo, hi);
    let mut trace = Vec::new();
    for op in &net.ops {
        cur = match op {
            Op::Affine {
                rows,
                cols,
                w,
                w_abs,
                bias,
                ..
            } => {
                // Midpoint-radius form: two products instead of four.
                let (l, u) = &cur;
                let mid: Vec<f64> = l.iter().zip(u).map(|(a, b)| 0.5 * (a + b)).collect();
                let rad: Vec<f64> = l.iter().zip(u).map(|(a, b)| 0.5 * (b - a)).collect();
                let c = matvec(*rows, *cols, w, &mid);
                let r = matvec(*rows, *cols, w_abs, &rad);
                let lower = (0..*rows).map(|j| c[j] + bias[j] - r[j]).collect();
                let upper = (0..*rows).map(|j| c[j] + bias[j] + r[j]).collect();
                (lower, upper)
            }
            Op::Relu => {
                trace.push(cur.clone());
                let (l, u) = cur;
                (
                    l.into_iter().map(|v| v.max(0.0)).collect(),
                    u.into_iter().map(|v| v.max(0.0)).collect(),
                )
            }
            Op::MaxPool { windows } => {
                trace.push(cur.clone());
                let (l, u) = &cur;
                pool_interval(windows, l, u)
            }
        };
    }
    (cur, trace)
}

pub(crate) fn pool_interval(windows: &[Vec<usize>], l: &[f64], u: &[f64]) -> Interval {
    let max_over =
        |v: &[f64], w: &[usize]| w.iter().map(|&i| v[i]).fold(f64::NEG_INFINITY, f64::max);
    (
        windows.iter().map(|w| max_over(l, w)).collect(),
        windows.iter().map(|w| max_over(u, w)).collect(),
    )
}

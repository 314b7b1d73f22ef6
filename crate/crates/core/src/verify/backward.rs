use super::compiled::{CompiledNet, Op, ReluRelaxation};
use super::{Interval, Norm};
use crate::linalg::{gemm, matvec};
use crate::scratch;

/// Linear bounds on each output, propagated from the output back to the
/// input. `None` when a max-pool sits on the path.
pub(crate) fn propagate(
    net: &CompiledNet,
    center: &[f64],
    lo: &[f64],
    hi: &[f64],
    trace: &[Interval],
    norm: Norm,
) -> Option<Interval> {
    if net.has_maxpool() {
        return None;
    }
    let m = net.output_len();
    let mut width = m;
    // Upper rows `[0, m)` and lower rows `[m, 2m)` share every product.
    let mut lam = identity(m);
    lam.extend(identity(m));
    let mut off = vec![0.0; 2 * m];
    let mut k = trace.len();

    for op in net.ops.iter().rev() {
        match op {
            Op::Affine {
                rows,
                cols,
                w,
                bias,
                ..
            } => {
                debug_assert_eq!(*rows, width);
                for (o, v) in off.iter_mut().zip(matvec(2 * m, *rows, &lam, bias)) {
                    *o += v;
                }
                let mut next = scratch::scratch(2 * m * cols);
                gemm(2 * m, *rows, *cols, &lam, w, 0.0, &mut next);
                scratch::recycle(std::mem::replace(&mut lam, next));
                width = *cols;
            }
            Op::Relu => {
                k -= 1;
                let (l, u) = &trace[k];
                let relax: Vec<ReluRelaxation> = l
                    .iter()
                    .zip(u)
                    .map(|(&l, &u)| ReluRelaxation::new(l, u))
                    .collect();
                for r in 0..2 * m {
                    let upper = r < m;
                    let row = &mut lam[r * width..(r + 1) * width];
                    for (c, rl) in row.iter_mut().zip(&relax) {
                        if (*c >= 0.0) == upper {
                            off[r] += *c * rl.upper_intercept;
                            *c *= rl.upper_slope;
                        } else {
                            *c *= rl.lower_slope;
                        }
                    }
                }
            }
            Op::MaxPool { .. } => unreachable!("rejected above"),
        }
    }
    let (lam_u, lam_l) = lam.split_at(m * width);
    let (off_u, off_l) = off.split_at(m);

    let d = width;
    let free: Vec<usize> = (0..d).filter(|&i| lo[i] < hi[i]).collect();
    let radius = lo.iter().chain(hi).fold(0.0f64, |a, v| a.max(v.abs()));
    let mut lower = Vec::with_capacity(m);
    let mut upper = Vec::with_capacity(m);
    for r in 0..m {
        let row_u = &lam_u[r * d..(r + 1) * d];
        let row_l = &lam_l[r * d..(r + 1) * d];
        let at_center_u: f64 = row_u.iter().zip(center).map(|(a, x)| a * x).sum();
        let at_center_l: f64 = row_l.iter().zip(center).map(|(a, x)| a * x).sum();
        let (spread_u, spread_l) = match norm {
            Norm::Linf => (
                row_u
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .map(|(&a, (&l, &h))| if a >= 0.0 { a * h } else { a * l })
                    .sum::<f64>(),
                row_l
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .map(|(&a, (&l, &h))| if a >= 0.0 { a * l } else { a * h })
                    .sum::<f64>(),
            ),
            Norm::L1 | Norm::L2 => (
                radius * dual_norm(row_u, &free, norm),
                -radius * dual_norm(row_l, &free, norm),
            ),
        };
        upper.push(off_u[r] + at_center_u + spread_u);
        lower.push(off_l[r] + at_center_l + spread_l);
    }
    scratch::recycle(lam);
    Some((lower, upper))
}

fn identity(m: usize) -> Vec<f64> {
    let mut a = vec![0.0; m * m];
    for i in 0..m {
        a[i * m + i] = 1.0;
    }
    a
}

/// `‖a_free‖_q` with `q` dual to the ball norm.
fn dual_norm(a: &[f64], free: &[usize], norm: Norm) -> f64 {
    match norm {
        Norm::L1 => free.iter().fold(0.0, |acc, &i| acc.max(a[i].abs())),
        Norm::L2 => free.iter().map(|&i| a[i] * a[i]).sum::<f64>().sqrt(),
        Norm::Linf => free.iter().map(|&i| a[i].abs()).sum(),
    }
}

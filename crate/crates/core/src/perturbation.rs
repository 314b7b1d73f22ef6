//! Perturbation sets: L∞ boxes, masked boxes, sign-restricted boxes, grid
//! partitions of an image, and uniform sampling.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

/// Pixel range used when clipping is enabled.
pub const PIXEL_RANGE: (f64, f64) = (0.0, 1.0);

/// An axis-aligned perturbation set around `center`: every `δ` with
/// `lo ≤ δ ≤ hi` elementwise, where `lo ≤ 0 ≤ hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbBox {
    center: Tensor,
    lo: Tensor,
    hi: Tensor,
    clip: Option<(f64, f64)>,
}

impl PerturbBox {
    /// Builds a box from explicit offsets.
    pub fn new(center: Tensor, lo: Tensor, hi: Tensor, clip: Option<(f64, f64)>) -> Result<Self> {
        lo.expect_shape(center.shape())?;
        hi.expect_shape(center.shape())?;
        for (i, (&l, &h)) in lo.data().iter().zip(hi.data()).enumerate() {
            if l > 0.0 || h < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "offsets at {i} must satisfy lo <= 0 <= hi, got [{l}, {h}]"
                )));
            }
        }
        if let Some((cmin, cmax)) = clip {
            if cmin > cmax {
                return Err(Error::InvalidArgument(format!(
                    "clip range [{cmin}, {cmax}] is empty"
                )));
            }
            let tol = 1e-12;
            for (i, ((&c, &l), &h)) in center
                .data()
                .iter()
                .zip(lo.data())
                .zip(hi.data())
                .enumerate()
            {
                if c + l < cmin - tol || c + h > cmax + tol {
                    return Err(Error::InvalidArgument(format!(
                        "coordinate {i} leaves the clip range [{cmin}, {cmax}]"
                    )));
                }
            }
        }
        Ok(Self {
            center,
            lo,
            hi,
            clip,
        })
    }

    /// The box `{0}` around `center`.
    pub fn point(center: Tensor) -> Self {
        let zeros = Tensor::from_parts(center.shape().to_vec(), vec![0.0; center.len()]);
        Self {
            center,
            lo: zeros.clone(),
            hi: zeros,
            clip: None,
        }
    }

    pub(crate) fn from_parts(
        center: Tensor,
        lo: Vec<f64>,
        hi: Vec<f64>,
        clip: Option<(f64, f64)>,
    ) -> Self {
        let shape = center.shape().to_vec();
        Self {
            lo: Tensor::from_parts(shape.clone(), lo),
            hi: Tensor::from_parts(shape, hi),
            center,
            clip,
        }
    }

    pub fn center(&self) -> &Tensor {
        &self.center
    }

    pub fn lo(&self) -> &Tensor {
        &self.lo
    }

    pub fn hi(&self) -> &Tensor {
        &self.hi
    }

    pub fn clip(&self) -> Option<(f64, f64)> {
        self.clip
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo.data().iter().all(|&v| v == 0.0) && self.hi.data().iter().all(|&v| v == 0.0)
    }

    /// Coordinates that are free to move.
    pub fn free_coordinates(&self) -> impl Iterator<Item = usize> + '_ {
        self.lo
            .data()
            .iter()
            .zip(self.hi.data())
            .enumerate()
            .filter(|(_, (&l, &h))| l < h)
            .map(|(i, _)| i)
    }

    /// Largest absolute offset in the box.
    pub fn radius(&self) -> f64 {
        self.lo
            .data()
            .iter()
            .chain(self.hi.data())
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Absolute lower corner `center + lo`.
    pub fn lower_corner(&self) -> Vec<f64> {
        self.center
            .data()
            .iter()
            .zip(self.lo.data())
            .map(|(c, l)| c + l)
            .collect()
    }

    /// Absolute upper corner `center + hi`.
    pub fn upper_corner(&self) -> Vec<f64> {
        self.center
            .data()
            .iter()
            .zip(self.hi.data())
            .map(|(c, h)| c + h)
            .collect()
    }

    pub fn contains_offset(&self, delta: &[f64], tol: f64) -> bool {
        delta.len() == self.dim()
            && delta
                .iter()
                .zip(self.lo.data().iter().zip(self.hi.data()))
                .all(|(&d, (&l, &h))| d >= l - tol && d <= h + tol)
    }
}

/// L∞ ball of radius `eps` around `x`, optionally clipped to `clip`.
pub fn linf_ball(x: &Tensor, eps: f64, clip: Option<(f64, f64)>) -> Result<PerturbBox> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "radius must be positive and finite, got {eps}"
        )));
    }
    let (lo, hi): (Vec<f64>, Vec<f64>) = match clip {
        Some((cmin, cmax)) => {
            if let Some(i) = x.data().iter().position(|&v| v < cmin || v > cmax) {
                return Err(Error::InvalidArgument(format!(
                    "center coordinate {i} lies outside the clip range [{cmin}, {cmax}]"
                )));
            }
            x.data()
                .iter()
                .map(|&v| ((-eps).max(cmin - v).min(0.0), eps.min(cmax - v).max(0.0)))
                .unzip()
        }
        None => (vec![-eps; x.len()], vec![eps; x.len()]),
    };
    Ok(PerturbBox::from_parts(x.clone(), lo, hi, clip))
}

/// Sorted set of distinct coordinate indices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash)]
pub struct VariableSet(Vec<usize>);

impl VariableSet {
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = indices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn all(dim: usize) -> Self {
        Self((0..dim).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn union(&self, other: &VariableSet) -> VariableSet {
        VariableSet::new(self.0.iter().chain(&other.0).copied())
    }

    /// Errors if any index is `>= dim`.
    pub fn check(&self, dim: usize) -> Result<()> {
        match self.0.last() {
            Some(&index) if index >= dim => Err(Error::IndexOutOfRange { index, dim }),
            _ => Ok(()),
        }
    }
}

impl FromIterator<usize> for VariableSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        VariableSet::new(iter)
    }
}

/// Freezes the coordinates in `u`: `lo = hi = 0` there, unchanged elsewhere.
pub fn mask_ball(b: &PerturbBox, u: &VariableSet) -> Result<PerturbBox> {
    u.check(b.dim())?;
    let mut lo = b.lo.data().to_vec();
    let mut hi = b.hi.data().to_vec();
    for &i in u.indices() {
        lo[i] = 0.0;
        hi[i] = 0.0;
    }
    Ok(PerturbBox::from_parts(b.center.clone(), lo, hi, b.clip))
}

/// Splits a box into its non-negative part `{δ ≥ 0}` and non-positive part `{δ ≤ 0}`.
pub fn sign_split(b: &PerturbBox) -> (PerturbBox, PerturbBox) {
    let zeros = vec![0.0; b.dim()];
    let plus = PerturbBox::from_parts(
        b.center.clone(),
        zeros.clone(),
        b.hi.data().to_vec(),
        b.clip,
    );
    let minus = PerturbBox::from_parts(b.center.clone(), b.lo.data().to_vec(), zeros, b.clip);
    (plus, minus)
}

/// Partition of a `[channels, height, width]` image into `side × side`
/// cells (a single row of `side` cells for flat inputs).
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    channels: usize,
    height: usize,
    width: usize,
    side: usize,
    cell_rows: usize,
    row_edges: Vec<usize>,
    col_edges: Vec<usize>,
    cells: Vec<VariableSet>,
}

impl CellGrid {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Number of coordinates covered (`channels · height · width`).
    pub fn dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Number of cell rows: `side`, or 1 for flat inputs.
    pub fn cell_rows(&self) -> usize {
        self.cell_rows
    }

    /// Cells in row-major order; cell `(i, j)` is `cells()[i * side + j]`.
    pub fn cells(&self) -> &[VariableSet] {
        &self.cells
    }

    pub fn row_edges(&self) -> &[usize] {
        &self.row_edges
    }

    pub fn col_edges(&self) -> &[usize] {
        &self.col_edges
    }

    /// Cell index owning a flat coordinate.
    pub fn cell_of(&self, coordinate: usize) -> usize {
        let plane = self.height * self.width;
        let p = coordinate % plane;
        let (r, c) = (p / self.width, p % self.width);
        let i = self.row_edges.partition_point(|&e| e <= r) - 1;
        let j = self.col_edges.partition_point(|&e| e <= c) - 1;
        i * self.side + j
    }
}

/// `round(i · n / side)` with ties rounded up, in exact integer arithmetic.
fn edges(n: usize, side: usize) -> Vec<usize> {
    (0..=side)
        .map(|i| (2 * i * n + side) / (2 * side))
        .collect()
}

/// Grid of `g × g` cells over an image; every channel of a pixel belongs to
/// the pixel's cell.
pub fn grid_cells(height: usize, width: usize, channels: usize, g: usize) -> Result<CellGrid> {
    if g == 0 {
        return Err(Error::InvalidArgument(
            "grid side must be at least 1".into(),
        ));
    }
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::InvalidArgument(
            "image dimensions must be positive".into(),
        ));
    }
    if g > height.min(width) {
        return Err(Error::InvalidArgument(format!(
            "grid side {g} exceeds image size {height}x{width}"
        )));
    }
    Ok(build(channels, height, width, g, g))
}

fn build(channels: usize, height: usize, width: usize, cell_rows: usize, side: usize) -> CellGrid {
    let row_edges = edges(height, cell_rows);
    let col_edges = edges(width, side);
    let mut cells = Vec::with_capacity(cell_rows * side);
    for i in 0..cell_rows {
        for j in 0..side {
            let mut idx = Vec::new();
            for ch in 0..channels {
                for r in row_edges[i]..row_edges[i + 1] {
                    for c in col_edges[j]..col_edges[j + 1] {
                        idx.push((ch * height + r) * width + c);
                    }
                }
            }
            cells.push(VariableSet::new(idx));
        }
    }
    CellGrid {
        channels,
        height,
        width,
        side,
        cell_rows,
        row_edges,
        col_edges,
        cells,
    }
}

/// Grid for an input tensor shape: `[c, h, w]`, `[h, w]`, or `[d]` (a
/// strip of `g` contiguous runs).
pub fn grid_for_shape(shape: &[usize], g: usize) -> Result<CellGrid> {
    match *shape {
        [c, h, w] => grid_cells(h, w, c, g),
        [h, w] => grid_cells(h, w, 1, g),
        [d] => {
            if g == 0 || g > d {
                return Err(Error::InvalidArgument(format!(
                    "grid side {g} must lie in 1..={d} for a flat input"
                )));
            }
            Ok(build(1, 1, d, 1, g))
        }
        _ => Err(Error::InvalidArgument(format!(
            "cannot lay a grid over shape {shape:?}"
        ))),
    }
}

/// `n` perturbations drawn independently and uniformly from the box.
/// Frozen coordinates (`lo = hi`) are exactly `lo`.
pub fn sample_uniform(b: &PerturbBox, n: usize, seed: u64) -> Result<Vec<Tensor>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    let mut rng = seeded(seed);
    let shape = b.center.shape().to_vec();
    Ok((0..n)
        .map(|_| Tensor::from_parts(shape.clone(), draw(b, &mut rng)))
        .collect())
}

pub(crate) fn draw(b: &PerturbBox, rng: &mut crate::rng::Rng) -> Vec<f64> {
    b.lo.data()
        .iter()
        .zip(b.hi.data())
        .map(|(&l, &h)| {
            if l == h {
                l
            } else {
                l + rng.random::<f64>() * (h - l)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(vec![v]).unwrap()
    }

    #[test]
    fn linf_ball_examples() {
        let b = linf_ball(&scalar(0.5), 0.5, Some(PIXEL_RANGE)).unwrap();
        assert_eq!((b.lo().data()[0], b.hi().data()[0]), (-0.5, 0.5));
        let b = linf_ball(&scalar(0.9), 0.5, Some(PIXEL_RANGE)).unwrap();
        assert_eq!(b.lo().data()[0], -0.5);
        assert!((b.hi().data()[0] - 0.1).abs() < 1e-15);
        let b = linf_ball(&scalar(0.9), 0.5, None).unwrap();
        assert_eq!(b.hi().data()[0], 0.5);
        assert!(linf_ball(&scalar(0.0), 0.0, None).is_err());
        assert!(linf_ball(&scalar(0.0), -1.0, None).is_err());
    }

    #[test]
    fn mask_ball_examples() {
        let x = Tensor::from_vec(vec![0.0, 0.0]).unwrap();
        let b = linf_ball(&x, 1.0, None).unwrap();
        let m = mask_ball(&b, &VariableSet::new([1])).unwrap();
        assert_eq!(m.lo().data(), &[-1.0, 0.0]);
        assert_eq!(m.hi().data(), &[1.0, 0.0]);
        assert_eq!(mask_ball(&b, &VariableSet::empty()).unwrap(), b);
        assert!(mask_ball(&b, &VariableSet::all(2)).unwrap().is_degenerate());
        assert!(matches!(
            mask_ball(&b, &VariableSet::new([2])),
            Err(Error::IndexOutOfRange { index: 2, dim: 2 })
        ));
    }

    #[test]
    fn sign_split_examples() {
        let b = linf_ball(&scalar(0.0), 0.3, None).unwrap();
        let (p, m) = sign_split(&b);
        assert_eq!((p.lo().data()[0], p.hi().data()[0]), (0.0, 0.3));
        assert_eq!((m.lo().data()[0], m.hi().data()[0]), (-0.3, 0.0));

        // a box that only extends upwards splits into itself and a point
        let pos = linf_ball(&scalar(0.0), 0.3, Some(PIXEL_RANGE)).unwrap();
        let (p, m) = sign_split(&pos);
        assert_eq!(p, pos);
        assert!(m.is_degenerate());

        // clipped offsets carry over
        let b = linf_ball(&scalar(0.9), 0.5, Some(PIXEL_RANGE)).unwrap();
        let (p, m) = sign_split(&b);
        assert!((p.hi().data()[0] - 0.1).abs() < 1e-15);
        assert_eq!(m.lo().data()[0], -0.5);
        assert_eq!(p.clip(), Some(PIXEL_RANGE));
    }

    #[test]
    fn grid_examples() {
        let g = grid_cells(4, 4, 1, 2).unwrap();
        assert_eq!(g.cell_count(), 4);
        assert_eq!(g.cells()[0].indices(), &[0, 1, 4, 5]);
        assert_eq!(g.cells()[3].indices(), &[10, 11, 14, 15]);

        let g = grid_cells(28, 28, 1, 12).unwrap();
        let widths: Vec<usize> = g.row_edges().windows(2).map(|w| w[1] - w[0]).collect();
        assert!(widths.iter().all(|&w| w == 2 || w == 3));
        assert!(widths.contains(&2) && widths.contains(&3));
        assert_eq!(widths.iter().sum::<usize>(), 28);

        let g = grid_cells(5, 7, 3, 1).unwrap();
        assert_eq!(g.cells()[0].len(), 105);

        assert!(grid_cells(4, 4, 1, 5).is_err());
        assert!(grid_cells(4, 4, 1, 0).is_err());
    }

    #[test]
    fn channels_follow_their_pixel() {
        let g = grid_cells(2, 2, 3, 2).unwrap();
        assert_eq!(g.cells()[1].indices(), &[1, 5, 9]);
        assert_eq!(g.cell_of(9), 1);
    }

    #[test]
    fn sampling_examples() {
        let x = Tensor::from_vec(vec![0.2, 0.4]).unwrap();
        let point = PerturbBox::point(x.clone());
        for s in sample_uniform(&point, 5, 1).unwrap() {
            assert_eq!(s.data(), &[0.0, 0.0]);
        }

        let b = linf_ball(&scalar(0.0), 1.0, None).unwrap();
        let samples = sample_uniform(&b, 100_000, 3).unwrap();
        let vals: Vec<f64> = samples.iter().map(|s| s.data()[0]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(mean.abs() < 0.02);
        assert!(min < -0.95 && max > 0.95);

        let masked = mask_ball(&linf_ball(&x, 0.1, None).unwrap(), &VariableSet::new([0])).unwrap();
        for s in sample_uniform(&masked, 200, 9).unwrap() {
            assert_eq!(s.data()[0], 0.0);
        }
        assert_eq!(
            sample_uniform(&b, 10, 42).unwrap(),
            sample_uniform(&b, 10, 42).unwrap()
        );
        assert!(sample_uniform(&b, 0, 42).is_err());
    }
}

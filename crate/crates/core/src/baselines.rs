//! Reference attribution methods, and the PGD attack used to probe
//! robustness.
//!
//! Every map has the shape of the input. Gradients are taken of the class
//! logit.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::perturbation::VariableSet;
use crate::rng::{derive_seed, seeded};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineMethod {
    #[serde(rename = "saliency")]
    Saliency,
    #[serde(rename = "gradient-input")]
    GradientInput,
    #[serde(rename = "integrated-gradients")]
    IntegratedGradients,
    #[serde(rename = "smoothgrad")]
    SmoothGrad,
    #[serde(rename = "vargrad")]
    VarGrad,
    #[serde(rename = "gradcam")]
    GradCam,
    #[serde(rename = "gradcam++")]
    GradCamPlusPlus,
    #[serde(rename = "occlusion")]
    Occlusion,
    #[serde(rename = "rise")]
    Rise,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 9] = [
        BaselineMethod::Saliency,
        BaselineMethod::GradientInput,
        BaselineMethod::IntegratedGradients,
        BaselineMethod::SmoothGrad,
        BaselineMethod::VarGrad,
        BaselineMethod::GradCam,
        BaselineMethod::GradCamPlusPlus,
        BaselineMethod::Occlusion,
        BaselineMethod::Rise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::Saliency => "saliency",
            BaselineMethod::GradientInput => "gradient-input",
            BaselineMethod::IntegratedGradients => "integrated-gradients",
            BaselineMethod::SmoothGrad => "smoothgrad",
            BaselineMethod::VarGrad => "vargrad",
            BaselineMethod::GradCam => "gradcam",
            BaselineMethod::GradCamPlusPlus => "gradcam++",
            BaselineMethod::Occlusion => "occlusion",
            BaselineMethod::Rise => "rise",
        }
    }

    /// Whether the method needs a convolution layer.
    pub fn needs_conv(self) -> bool {
        matches!(
            self,
            BaselineMethod::GradCam | BaselineMethod::GradCamPlusPlus
        )
    }
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown baseline `{s}`")))
    }
}

/// Hyperparameters of a baseline. Fields a method does not use are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    /// Noisy samples (SmoothGrad, VarGrad), path points (Integrated
    /// Gradients) or masks (RISE).
    pub samples: usize,
    pub sigma: f64,
    pub patch: usize,
    pub stride: usize,
    pub mask_grid: usize,
    pub density: f64,
    pub seed: u64,
}

impl BaselineConfig {
    /// Defaults for an input of the given shape: 100 samples, σ = 0.2 of
    /// the pixel range, occlusion patches of a seventh of the image side,
    /// 6000 RISE masks on a 7 × 7 grid with density 0.5.
    pub fn new(method: BaselineMethod, input_shape: &[usize]) -> Self {
        let side = spatial(input_shape).0.max(spatial(input_shape).1);
        let patch = side.div_ceil(7).max(1);
        let samples = if method == BaselineMethod::Rise {
            6000
        } else {
            100
        };
        Self {
            method,
            samples,
            sigma: 0.2,
            patch,
            stride: patch,
            mask_grid: 7,
            density: 0.5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.samples == 0 {
            return bad("sample count must be positive");
        }
        if self.method == BaselineMethod::IntegratedGradients && self.samples < 2 {
            return bad("integrated gradients needs at least two path points");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be a finite non-negative number");
        }
        if self.patch == 0 || self.stride == 0 || self.mask_grid == 0 {
            return bad("patch, stride and mask grid must be positive");
        }
        if !(self.density > 0.0 && self.density < 1.0) {
            return bad("mask density must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Runs the configured baseline.
pub fn explain_baseline(
    net: &Network,
    x: &Tensor,
    class: usize,
    config: &BaselineConfig,
) -> Result<Tensor> {
    config.validate()?;
    let c = config;
    match c.method {
        BaselineMethod::Saliency => saliency(net, x, class),
        BaselineMethod::GradientInput => gradient_input(net, x, class),
        BaselineMethod::IntegratedGradients => integrated_gradients(net, x, class, c.samples, None),
        BaselineMethod::SmoothGrad => smoothgrad(net, x, class, c.samples, c.sigma, c.seed),
        BaselineMethod::VarGrad => vargrad(net, x, class, c.samples, c.sigma, c.seed),
        BaselineMethod::GradCam => gradcam(net, x, class, None),
        BaselineMethod::GradCamPlusPlus => gradcampp(net, x, class, None),
        BaselineMethod::Occlusion => occlusion(net, x, class, c.patch, c.stride),
        BaselineMethod::Rise => rise(net, x, class, c.samples, c.mask_grid, c.density, c.seed),
    }
}

/// `(height, width)` of an input; flat inputs are a single row.
fn spatial(shape: &[usize]) -> (usize, usize) {
    match *shape {
        [_, h, w] | [h, w] => (h, w),
        [d] => (1, d),
        _ => (1, shape.iter().product()),
    }
}

fn grad(net: &Network, x: &[f64], class: usize) -> Vec<f64> {
    net.gradient_flat(x, class, false)
}

fn check(net: &Network, x: &Tensor, class: usize) -> Result<()> {
    x.expect_shape(net.input_shape())?;
    if class >= net.class_count() {
        return Err(Error::ClassOutOfRange {
            index: class,
            classes: net.class_count(),
        });
    }
    Ok(())
}

/// `|∇f|`.
pub fn saliency(net: &Network, x: &Tensor, class: usize) -> Result<Tensor> {
    check(net, x, class)?;
    x.with_data(grad(net, x.data(), class).iter().map(|g| g.abs()).collect())
}

/// `x ⊙ |∇f|`.
pub fn gradient_input(net: &Network, x: &Tensor, class: usize) -> Result<Tensor> {
    check(net, x, class)?;
    let g = grad(net, x.data(), class);
    x.with_data(x.data().iter().zip(&g).map(|(v, g)| v * g.abs()).collect())
}

/// `(x - x₀) ⊙ ∫₀¹ ∇f(x₀ + α(x - x₀)) dα` by the trapezoidal rule on
/// `points` evenly spaced path points. The baseline defaults to zero.
pub fn integrated_gradients(
    net: &Network,
    x: &Tensor,
    class: usize,
    points: usize,
    baseline: Option<&Tensor>,
) -> Result<Tensor> {
    check(net, x, class)?;
    if points < 2 {
        return Err(Error::InvalidArgument(
            "integrated gradients needs at least two path points".into(),
        ));
    }
    let zero = vec![0.0; x.len()];
    let x0 = match baseline {
        Some(b) => {
            b.expect_shape(x.shape())?;
            b.data()
        }
        None => &zero,
    };
    let diff: Vec<f64> = x.data().iter().zip(x0).map(|(a, b)| a - b).collect();
    let mut avg = vec![0.0; x.len()];
    let last = points - 1;
    for k in 0..points {
        let alpha = k as f64 / last as f64;
        let p: Vec<f64> = x0.iter().zip(&diff).map(|(b, d)| b + alpha * d).collect();
        let weight = if k == 0 || k == last { 0.5 } else { 1.0 } / last as f64;
        for (a, g) in avg.iter_mut().zip(grad(net, &p, class)) {
            *a += weight * g;
        }
    }
    x.with_data(avg.iter().zip(&diff).map(|(a, d)| a * d).collect())
}

/// The `m` points `x + N(0, σ²I)` that [`smoothgrad`] and [`vargrad`]
/// evaluate for this seed.
pub fn gaussian_samples(x: &Tensor, m: usize, sigma: f64, seed: u64) -> Result<Vec<Tensor>> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be positive".into(),
        ));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "invalid noise level {sigma}"
        )));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = seeded(seed);
    (0..m)
        .map(|_| {
            x.with_data(
                x.data()
                    .iter()
                    .map(|v| v + normal.sample(&mut rng))
                    .collect(),
            )
        })
        .collect()
}

fn noisy_gradients(
    net: &Network,
    x: &Tensor,
    class: usize,
    m: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check(net, x, class)?;
    Ok(gaussian_samples(x, m, sigma, seed)?
        .iter()
        .map(|p| grad(net, p.data(), class))
        .collect())
}

/// Mean gradient over `m` samples of `x + N(0, σ²I)`.
pub fn smoothgrad(
    net: &Network,
    x: &Tensor,
    class: usize,
    m: usize,
    sigma: f64,
    seed: u64,
) -> Result<Tensor> {
    let grads = noisy_gradients(net, x, class, m, sigma, seed)?;
    x.with_data(mean(&grads))
}

/// Variance (over samples, divided by `m`) of the gradient under the same
/// noise as [`smoothgrad`].
pub fn vargrad(
    net: &Network,
    x: &Tensor,
    class: usize,
    m: usize,
    sigma: f64,
    seed: u64,
) -> Result<Tensor> {
    let grads = noisy_gradients(net, x, class, m, sigma, seed)?;
    let mu = mean(&grads);
    let mut var = vec![0.0; mu.len()];
    for g in &grads {
        for ((v, gi), m) in var.iter_mut().zip(g).zip(&mu) {
            *v += (gi - m) * (gi - m);
        }
    }
    let m = grads.len() as f64;
    x.with_data(var.into_iter().map(|v| v / m).collect())
}

fn mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    out.into_iter().map(|v| v / n).collect()
}

/// Resize a row-major `sh × sw` map to `dh × dw` with bilinear
/// interpolation at pixel centers (edges clamp).
pub fn bilinear_resize(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    let coord = |d: usize, s: usize, n: usize| {
        let v = ((d as f64 + 0.5) * s as f64 / n as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let i = (v.floor() as usize).min(s - 1);
        (i, (i + 1).min(s - 1), v - i as f64)
    };
    let mut out = Vec::with_capacity(dh * dw);
    for r in 0..dh {
        let (r0, r1, fr) = coord(r, sh, dh);
        for c in 0..dw {
            let (c0, c1, fc) = coord(c, sw, dw);
            let top = src[r0 * sw + c0] * (1.0 - fc) + src[r0 * sw + c1] * fc;
            let bottom = src[r1 * sw + c0] * (1.0 - fc) + src[r1 * sw + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

/// Broadcast a spatial `h × w` map over every channel of the input shape.
fn spread(x: &Tensor, plane: &[f64]) -> Result<Tensor> {
    let reps = x.len() / plane.len();
    x.with_data(
        plane
            .iter()
            .cycle()
            .take(reps * plane.len())
            .copied()
            .collect(),
    )
}

fn cam_layer(net: &Network, layer: Option<usize>) -> Result<usize> {
    match layer {
        Some(l) => Ok(l),
        None => net.last_conv_layer().ok_or_else(|| {
            Error::Unsupported("class activation maps need a convolution layer".into())
        }),
    }
}

/// Class activation map from per-channel weights over the feature maps.
fn cam(
    net: &Network,
    x: &Tensor,
    class: usize,
    layer: Option<usize>,
    weights: impl Fn(&[f64], &[f64]) -> f64,
) -> Result<Tensor> {
    check(net, x, class)?;
    let layer = cam_layer(net, layer)?;
    let (a, g) = net.feature_maps_and_grads(x, class, layer)?;
    let (k, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let plane = h * w;
    let mut map = vec![0.0; plane];
    for ch in 0..k {
        let ak = &a.data()[ch * plane..(ch + 1) * plane];
        let gk = &g.data()[ch * plane..(ch + 1) * plane];
        let wk = weights(ak, gk);
        for (m, v) in map.iter_mut().zip(ak) {
            *m += wk * v;
        }
    }
    map.iter_mut().for_each(|v| *v = v.max(0.0));
    let (ih, iw) = spatial(x.shape());
    spread(x, &bilinear_resize(&map, h, w, ih, iw))
}

/// Grad-CAM on the given convolution layer (the last one by default).
/// The feature maps are the convolution's output.
pub fn gradcam(net: &Network, x: &Tensor, class: usize, layer: Option<usize>) -> Result<Tensor> {
    cam(net, x, class, layer, |_, g| {
        g.iter().sum::<f64>() / g.len() as f64
    })
}

/// Grad-CAM++ with the usual closed form for piecewise-linear networks:
/// `α = g² / (2g² + Σ A g³)` and channel weight `Σ α · relu(g)`.
pub fn gradcampp(net: &Network, x: &Tensor, class: usize, layer: Option<usize>) -> Result<Tensor> {
    cam(net, x, class, layer, |a, g| {
        let s: f64 = a.iter().sum();
        g.iter()
            .map(|&gi| {
                let (g2, g3) = (gi * gi, gi * gi * gi);
                let denom = 2.0 * g2 + s * g3;
                let alpha = if denom != 0.0 { g2 / denom } else { 0.0 };
                alpha * gi.max(0.0)
            })
            .sum()
    })
}

/// Start positions of windows of size `patch` with step `stride` that
/// together cover `0..n`.
fn window_starts(n: usize, patch: usize, stride: usize) -> Vec<usize> {
    if patch >= n {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..=n - patch).step_by(stride).collect();
    if starts.last().map(|&s| s + patch) != Some(n) {
        starts.push(n - patch);
    }
    starts
}

/// `f(x) - f(x with the patch zeroed)`, averaged over the patches that
/// cover each pixel. Patches span every channel.
pub fn occlusion(
    net: &Network,
    x: &Tensor,
    class: usize,
    patch: usize,
    stride: usize,
) -> Result<Tensor> {
    check(net, x, class)?;
    if patch == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "patch and stride must be positive".into(),
        ));
    }
    let (h, w) = spatial(x.shape());
    let channels = x.len() / (h * w);
    let base = net.logits(x.data())[class];
    let mut total = vec![0.0; h * w];
    let mut count = vec![0usize; h * w];
    for r0 in window_starts(h, patch.min(h), stride) {
        for c0 in window_starts(w, patch.min(w), stride) {
            let rows = r0..(r0 + patch).min(h);
            let cols = c0..(c0 + patch).min(w);
            let mut occluded = x.data().to_vec();
            for ch in 0..channels {
                for r in rows.clone() {
                    for c in cols.clone() {
                        occluded[(ch * h + r) * w + c] = 0.0;
                    }
                }
            }
            let drop = base - net.logits(&occluded)[class];
            for r in rows.clone() {
                for c in cols.clone() {
                    total[r * w + c] += drop;
                    count[r * w + c] += 1;
                }
            }
        }
    }
    let plane: Vec<f64> = total
        .iter()
        .zip(&count)
        .map(|(t, &n)| t / n as f64)
        .collect();
    spread(x, &plane)
}

/// RISE: `(1 / (p N)) Σ f(x ⊙ mᵢ) mᵢ` over `n` masks. Each mask is a
/// `grid × grid` Bernoulli(`density`) pattern, bilinearly upsampled to one
/// cell beyond the image and cropped at a random offset.
pub fn rise(
    net: &Network,
    x: &Tensor,
    class: usize,
    n: usize,
    grid: usize,
    density: f64,
    seed: u64,
) -> Result<Tensor> {
    check(net, x, class)?;
    if n == 0 || grid == 0 {
        return Err(Error::InvalidArgument(
            "mask count and grid must be positive".into(),
        ));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "invalid mask density {density}"
        )));
    }
    let (h, w) = spatial(x.shape());
    let channels = x.len() / (h * w);
    let (gh, gw) = (grid.min(h), grid.min(w));
    let (cell_h, cell_w) = (h.div_ceil(gh), w.div_ceil(gw));
    let (up_h, up_w) = ((gh + 1) * cell_h, (gw + 1) * cell_w);
    let mut rng = seeded(seed);
    let mut acc = vec![0.0; h * w];
    let mut masked = vec![0.0; x.len()];
    for _ in 0..n {
        let low: Vec<f64> = (0..gh * gw)
            .map(|_| if rng.random_bool(density) { 1.0 } else { 0.0 })
            .collect();
        let up = bilinear_resize(&low, gh, gw, up_h, up_w);
        let (dy, dx) = (rng.random_range(0..cell_h), rng.random_range(0..cell_w));
        let mask: Vec<f64> = (0..h)
            .flat_map(|r| (0..w).map(move |c| (r, c)))
            .map(|(r, c)| up[(r + dy) * up_w + c + dx])
            .collect();
        for ch in 0..channels {
            for p in 0..h * w {
                masked[ch * h * w + p] = x.data()[ch * h * w + p] * mask[p];
            }
        }
        let score = net.logits(&masked)[class];
        for (a, m) in acc.iter_mut().zip(&mask) {
            *a += score * m;
        }
    }
    let scale = 1.0 / (density * n as f64);
    spread(x, &acc.iter().map(|v| v * scale).collect::<Vec<_>>())
}

/// Projected gradient ascent on `max_{c' != c} f_{c'} - f_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub steps: usize,
    /// Defaults to a tenth of the radius.
    pub step_size: Option<f64>,
    pub restarts: usize,
    pub seed: u64,
    /// Valid input range; `x + δ` is projected back into it.
    pub clip: Option<(f64, f64)>,
    /// Bisection steps of [`min_adv_radius`].
    pub search_steps: usize,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            step_size: None,
            restarts: 3,
            seed: 0,
            clip: Some((0.0, 1.0)),
            search_steps: 12,
        }
    }
}

/// Outcome of an attack. `success` holds exactly when `margin > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvResult {
    pub delta: Tensor,
    pub success: bool,
    /// `‖δ‖∞`.
    pub radius: f64,
    /// `max_{c' != c} f_{c'}(x + δ) - f_c(x + δ)`.
    pub margin: f64,
    pub iterations: usize,
}

fn margin_and_rival(z: &[f64], class: usize) -> (f64, usize) {
    let (rival, best) = z.iter().enumerate().filter(|&(j, _)| j != class).fold(
        (usize::MAX, f64::NEG_INFINITY),
        |acc, (j, &v)| {
            if v > acc.1 {
                (j, v)
            } else {
                acc
            }
        },
    );
    (best - z[class], rival)
}

/// PGD inside the L∞ ball of `radius`, restricted to the coordinates in
/// `allowed` (every coordinate when `None`). Restart 0 starts at `δ = 0`,
/// the others at uniform points of the feasible box; the best iterate over
/// all restarts is returned, ties to the earliest.
pub fn pgd_attack(
    net: &Network,
    x: &Tensor,
    class: usize,
    radius: f64,
    allowed: Option<&VariableSet>,
    config: &PgdConfig,
) -> Result<AdvResult> {
    check(net, x, class)?;
    if net.class_count() < 2 {
        return Err(Error::InvalidArgument(
            "attack needs at least two classes".into(),
        ));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "attack radius must be positive, got {radius}"
        )));
    }
    if let Some(u) = allowed {
        u.check(x.len())?;
    }
    let step = config.step_size.unwrap_or(radius / 10.0);
    let xd = x.data();
    // Feasible offsets per coordinate.
    let bounds: Vec<(f64, f64)> = (0..x.len())
        .map(|i| {
            if allowed.is_some_and(|u| !u.contains(i)) {
                return (0.0, 0.0);
            }
            let (mut lo, mut hi) = (-radius, radius);
            if let Some((cmin, cmax)) = config.clip {
                lo = lo.max(cmin - xd[i]).min(0.0);
                hi = hi.min(cmax - xd[i]).max(0.0);
            }
            (lo, hi)
        })
        .collect();
    let evaluate = |delta: &[f64]| {
        let p: Vec<f64> = xd.iter().zip(delta).map(|(a, b)| a + b).collect();
        let z = net.logits(&p);
        let (m, rival) = margin_and_rival(&z, class);
        (m, rival, p)
    };

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut iterations = 0;
    for restart in 0..config.restarts.max(1) {
        let mut rng = seeded(derive_seed(config.seed, restart as u64));
        let mut delta: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| {
                if restart == 0 || lo == hi {
                    0.0
                } else {
                    lo + rng.random::<f64>() * (hi - lo)
                }
            })
            .collect();
        for it in 0..=config.steps {
            let (m, rival, p) = evaluate(&delta);
            if best.as_ref().is_none_or(|(bm, _)| m > *bm) {
                best = Some((m, delta.clone()));
            }
            iterations += 1;
            if m > 0.0 || it == config.steps {
                break;
            }
            let mut seed = vec![0.0; net.class_count()];
            seed[rival] = 1.0;
            seed[class] = -1.0;
            let (_, g) = net.vjp_flat(&p, &seed);
            for ((d, gi), &(lo, hi)) in delta.iter_mut().zip(&g).zip(&bounds) {
                if lo < hi {
                    *d = (*d + step * gi.signum()).clamp(lo, hi);
                }
            }
        }
        if best.as_ref().is_some_and(|(m, _)| *m > 0.0) {
            break;
        }
    }
    let (margin, delta) = best.expect("at least one evaluation");
    let r = delta.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(AdvResult {
        delta: x.with_data(delta)?,
        success: margin > 0.0,
        radius: r,
        margin,
        iterations,
    })
}

/// Estimate of the smallest attack radius, found by bisection with PGD as
/// the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusEstimate {
    /// Smallest `‖δ‖∞` of a successful attack, or `r_hi` when censored.
    pub radius: f64,
    /// No attack succeeded even at `r_hi`.
    pub censored: bool,
    /// Final bracket `[lo, hi]`.
    pub lower: f64,
    pub upper: f64,
}

/// Bisection on `[r_lo, r_hi]` until the bracket is narrower than `tol` or
/// `config.search_steps` halvings have run.
pub fn min_adv_radius(
    net: &Network,
    x: &Tensor,
    class: usize,
    allowed: Option<&VariableSet>,
    r_lo: f64,
    r_hi: f64,
    tol: f64,
    config: &PgdConfig,
) -> Result<RadiusEstimate> {
    if !(r_lo >= 0.0 && r_lo < r_hi && r_hi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "invalid radius bracket [{r_lo}, {r_hi}]"
        )));
    }
    let top = pgd_attack(net, x, class, r_hi, allowed, config)?;
    if !top.success {
        return Ok(RadiusEstimate {
            radius: r_hi,
            censored: true,
            lower: r_lo,
            upper: r_hi,
        });
    }
    let (mut lo, mut hi) = (r_lo, r_hi);
    let mut found = top.radius;
    for _ in 0..config.search_steps {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= 0.0 {
            break;
        }
        let res = pgd_attack(net, x, class, mid, allowed, config)?;
        if res.success {
            hi = mid;
            found = found.min(res.radius);
        } else {
            lo = mid;
        }
    }
    Ok(RadiusEstimate {
        radius: found.min(hi),
        censored: false,
        lower: lo,
        upper: hi,
    })
}

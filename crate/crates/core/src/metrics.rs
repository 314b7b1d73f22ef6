//! Fidelity and robustness metrics for attribution maps, the tightness of
//! a bound method, and an empirical check of the stability bound.
//!
//! Maps are given per input coordinate (see
//! [`AttributionMap::pixel_scores`](crate::eva::AttributionMap::pixel_scores)).
//! Variables are ranked by descending score, ties to the lower index.
//! "Baselined" variables take the value of a uniform noise image drawn once
//! per call from the metric's seed; see [`noise_baseline`].

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines::{min_adv_radius, PgdConfig};
use crate::error::{Error, Result};
use crate::eva::{ao_upper, eva_score};
use crate::network::Network;
use crate::perturbation::{PerturbBox, VariableSet, PIXEL_RANGE};
use crate::rng::seeded;
use crate::tensor::{softmax, Tensor};
use crate::verify::{BoundConfig, Norm};

/// What the curves read off the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// Softmax probability of the class.
    #[default]
    Probability,
    Logit,
}

fn score(net: &Network, x: &[f64], class: usize, kind: ScoreKind) -> f64 {
    let z = net.logits(x);
    match kind {
        ScoreKind::Probability => softmax(&z)[class],
        ScoreKind::Logit => z[class],
    }
}

/// The noise image a metric call with this seed uses as its baseline:
/// independent `U(0, 1)` values.
pub fn noise_baseline(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    (0..len)
        .map(|_| rng.random_range(PIXEL_RANGE.0..PIXEL_RANGE.1))
        .collect()
}

/// Coordinates sorted by descending score, ties to the lower index.
pub fn ranking(map: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..map.len()).collect();
    order.sort_by(|&a, &b| map[b].total_cmp(&map[a]).then(a.cmp(&b)));
    order
}

fn check(net: &Network, x: &Tensor, class: usize, map: &[f64]) -> Result<()> {
    x.expect_shape(net.input_shape())?;
    if class >= net.class_count() {
        return Err(Error::ClassOutOfRange {
            index: class,
            classes: net.class_count(),
        });
    }
    if map.len() != x.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![x.len()],
            actual: vec![map.len()],
        });
    }
    if let Some(index) = map.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(())
}

/// Trapezoidal area under `(x, y)` points sorted by `x`.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveConfig {
    /// Number of evenly spaced removal steps; the curve has `steps + 1`
    /// points.
    pub steps: usize,
    pub seed: u64,
    pub score: ScoreKind,
}

impl CurveConfig {
    pub fn new(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            seed,
            score: ScoreKind::Probability,
        }
    }
}

/// Scores at evenly spaced fractions of variables replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub fractions: Vec<f64>,
    pub scores: Vec<f64>,
    pub auc: f64,
}

fn replacement_curve(
    net: &Network,
    x: &Tensor,
    class: usize,
    map: &[f64],
    config: &CurveConfig,
    deletion: bool,
) -> Result<Curve> {
    check(net, x, class, map)?;
    if config.steps == 0 {
        return Err(Error::InvalidArgument(
            "curve needs at least one step".into(),
        ));
    }
    let d = x.len();
    let noise = noise_baseline(d, config.seed);
    let (start, fill) = if deletion {
        (x.data().to_vec(), &noise[..])
    } else {
        (noise.clone(), x.data())
    };
    let order = ranking(map);
    let mut img = start;
    let mut done = 0;
    let mut fractions = Vec::with_capacity(config.steps + 1);
    let mut scores = Vec::with_capacity(config.steps + 1);
    for j in 0..=config.steps {
        let k = (j * d + config.steps / 2) / config.steps;
        for &i in &order[done..k] {
            img[i] = fill[i];
        }
        done = k;
        fractions.push(j as f64 / config.steps as f64);
        scores.push(score(net, &img, class, config.score));
    }
    let auc = trapezoid(&fractions, &scores);
    Ok(Curve {
        fractions,
        scores,
        auc,
    })
}

/// Score as the top-ranked variables are progressively replaced by noise.
/// Lower area means the map found the variables the class depends on.
pub fn deletion_curve(
    net: &Network,
    x: &Tensor,
    class: usize,
    map: &[f64],
    config: &CurveConfig,
) -> Result<Curve> {
    replacement_curve(net, x, class, map, config, true)
}

/// Score as the top-ranked variables are progressively restored into a
/// noise image. Higher is better.
pub fn insertion_curve(
    net: &Network,
    x: &Tensor,
    class: usize,
    map: &[f64],
    config: &CurveConfig,
) -> Result<Curve> {
    replacement_curve(net, x, class, map, config, false)
}

/// Area under the deletion curve of softmax probabilities.
pub fn deletion_auc(
    net: &Network,
    x: &Tensor,
    class: usize,
    map: &[f64],
    steps: usize,
    seed: u64,
) -> Result<f64> {
    Ok(deletion_curve(net, x, class, map, &CurveConfig::new(steps, seed))?.auc)
}

/// Area under the insertion curve of softmax probabilities.
pub fn insertion_auc(
    net: &Network,
    x: &Tensor,
    class: usize,
    map: &[f64],
    steps: usize,
    seed: u64,
) -> Result<f64> {
    Ok(insertion_curve(net, x, class, map, &CurveConfig::new(steps, seed))?.auc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityConfig {
    pub subset_fraction: f64,
    pub subsets: usize,
    pub seed: u64,
    pub score: ScoreKind,
}

impl Default for FidelityConfig {
    fn default() -> Self {
        Self {
            subset_fraction: 0.2,
            subsets: 200,
            seed: 0,
            score: ScoreKind::Probability,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    /// Pearson correlation, or 0 when `degenerate`.
    pub value: f64,
    /// One of the two samples had zero variance.
    pub degenerate: bool,
}

/// Correlation between the attribution mass of random subsets and the
/// score drop when those subsets are baselined.
pub fn mu_fidelity(
    net: &Network,
    x: &Tensor,
    class: usize,
    map: &[f64],
    config: &FidelityConfig,
) -> Result<Fidelity> {
    check(net, x, class, map)?;
    if config.subsets < 2 {
        return Err(Error::InvalidArgument("need at least two subsets".into()));
    }
    if !(config.subset_fraction > 0.0 && config.subset_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "subset fraction must lie in (0, 1], got {}",
            config.subset_fraction
        )));
    }
    let d = x.len();
    let k = ((config.subset_fraction * d as f64).round() as usize).clamp(1, d);
    let noise = noise_baseline(d, config.seed);
    let base = score(net, x.data(), class, config.score);
    let mut rng = seeded(crate::rng::derive_seed(config.seed, 1));
    let mut mass = Vec::with_capacity(config.subsets);
    let mut drop = Vec::with_capacity(config.subsets);
    let mut img = x.data().to_vec();
    for _ in 0..config.subsets {
        let u = sample(&mut rng, d, k);
        for i in u.iter() {
            img[i] = noise[i];
        }
        mass.push(u.iter().map(|i| map[i]).sum::<f64>());
        drop.push(base - score(net, &img, class, config.score));
        for i in u.iter() {
            img[i] = x.data()[i];
        }
    }
    Ok(match pearson(&mass, &drop) {
        Some(value) => Fidelity {
            value,
            degenerate: false,
        },
        None => Fidelity {
            value: 0.0,
            degenerate: true,
        },
    })
}

/// `None` when either sample has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    // Relative cutoff so rounding noise in a constant sample counts as zero.
    let tiny = |s: f64, m: f64| s <= 1e-24 * n * (1.0 + m * m);
    if tiny(saa, ma) || tiny(sbb, mb) {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConfig {
    /// Fractions of variables left free to the attacker.
    pub k_fracs: Vec<f64>,
    /// Upper end of the radius search; attacks that fail there are
    /// censored at this value.
    pub max_radius: f64,
    pub tol: f64,
    pub pgd: PgdConfig,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            k_fracs: (1..=10).map(|i| i as f64 / 10.0).collect(),
            max_radius: 1.0,
            tol: 1e-3,
            pgd: PgdConfig::default(),
        }
    }
}

/// Minimal attack radius when only the top-k variables may move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCurve {
    pub k: Vec<usize>,
    pub k_fracs: Vec<f64>,
    pub radii: Vec<f64>,
    pub censored: Vec<bool>,
    /// Trapezoidal area over `k_fracs`; lower is better.
    pub auc: f64,
}

pub fn robustness_sr(
    net: &Network,
    x: &Tensor,
    class: usize,
    map: &[f64],
    config: &RobustnessConfig,
) -> Result<RobustnessCurve> {
    check(net, x, class, map)?;
    if config.k_fracs.is_empty()
        || config.k_fracs.iter().any(|f| !(*f > 0.0 && *f <= 1.0))
        || config.k_fracs.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::InvalidArgument(
            "k fractions must be increasing values in (0, 1]".into(),
        ));
    }
    let d = x.len();
    let order = ranking(map);
    let mut curve = RobustnessCurve {
        k: Vec::new(),
        k_fracs: config.k_fracs.clone(),
        radii: Vec::new(),
        censored: Vec::new(),
        auc: 0.0,
    };
    for &f in &config.k_fracs {
        let k = ((f * d as f64).round() as usize).clamp(1, d);
        let u = VariableSet::new(order[..k].iter().copied());
        let est = min_adv_radius(
            net,
            x,
            class,
            Some(&u),
            0.0,
            config.max_radius,
            config.tol,
            &config.pgd,
        )?;
        curve.k.push(k);
        curve.radii.push(est.radius);
        curve.censored.push(est.censored);
    }
    curve.auc = trapezoid(&curve.k_fracs, &curve.radii);
    Ok(curve)
}

/// Mean certified overlap over a set of inputs, each scored for its
/// predicted class. Lower is tighter.
pub fn tightness(
    net: &Network,
    inputs: &[Tensor],
    box_builder: impl Fn(&Tensor) -> Result<PerturbBox>,
    config: impl Into<BoundConfig>,
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument(
            "tightness needs at least one input".into(),
        ));
    }
    let config = config.into();
    let mut total = 0.0;
    for x in inputs {
        let c = net.predict(x)?;
        total += ao_upper(net, &box_builder(x)?, config, c)?.value;
    }
    Ok(total / inputs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub max_deviation: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Samples `pairs` points `z` uniformly in the L2 ball of radius `r`
/// around the box center, shifts the box to each, and compares the EVA
/// score of `u` against `4L(ε + r)`. For an L∞ box `ε` is replaced by the
/// radius of the enclosing L2 ball, `ε √(free coordinates)`.
#[allow(clippy::too_many_arguments)]
pub fn stability_check(
    net: &Network,
    u: &VariableSet,
    b: &PerturbBox,
    config: impl Into<BoundConfig>,
    class: usize,
    r: f64,
    pairs: usize,
    lipschitz: f64,
    seed: u64,
) -> Result<StabilityReport> {
    if !(r >= 0.0 && r.is_finite() && lipschitz >= 0.0 && lipschitz.is_finite()) {
        return Err(Error::InvalidArgument(
            "radius and Lipschitz constant must be finite and non-negative".into(),
        ));
    }
    let config = config.into();
    let eps = b.radius();
    let eps = match config.norm {
        Norm::L2 | Norm::L1 => eps,
        Norm::Linf => eps * (b.free_coordinates().count() as f64).sqrt(),
    };
    let bound = 4.0 * lipschitz * (eps + r);
    let here = eva_score(net, u, b, config, class)?;
    let d = b.dim();
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let len = r * rng.random::<f64>().powf(1.0 / d as f64);
        let z: Vec<f64> = b
            .center()
            .data()
            .iter()
            .zip(&dir)
            .map(|(c, v)| if norm > 0.0 { c + len * v / norm } else { *c })
            .collect();
        let shifted = PerturbBox::new(
            b.center().with_data(z)?,
            b.lo().clone(),
            b.hi().clone(),
            None,
        )?;
        let there = eva_score(net, u, &shifted, config, class)?;
        worst = worst.max((here - there).abs());
    }
    Ok(StabilityReport {
        max_deviation: worst,
        bound,
        pass: worst <= bound + 1e-9,
    })
}

/// One image scored with one attribution method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub image: usize,
    pub method: String,
    pub deletion: f64,
    pub insertion: f64,
    pub fidelity: f64,
    pub fidelity_degenerate: bool,
    pub robustness: Option<f64>,
    pub robustness_censored: usize,
    /// Wall-clock seconds to produce the map.
    pub time: f64,
}

/// Column means of the rows of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub method: String,
    pub images: usize,
    pub deletion: f64,
    pub insertion: f64,
    pub fidelity: f64,
    pub robustness: Option<f64>,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    /// Mean certified overlap, when measured.
    pub tightness: Option<f64>,
    /// Free-form record of the configuration that produced the rows.
    pub provenance: serde_json::Value,
}

impl MetricReport {
    /// CSV header; one row per `(image, method)` follows.
    pub const COLUMNS: [&'static str; 7] =
        ["image", "method", "Del.", "Ins.", "Fid.", "Rob.", "Time"];

    pub fn new(provenance: serde_json::Value) -> Self {
        Self {
            rows: Vec::new(),
            tightness: None,
            provenance,
        }
    }

    /// Per-method means, methods in first-appearance order.
    pub fn summary(&self) -> Vec<MetricSummary> {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: BTreeMap<&str, Vec<&MetricRow>> = BTreeMap::new();
        for row in &self.rows {
            if !groups.contains_key(row.method.as_str()) {
                order.push(&row.method);
            }
            groups.entry(&row.method).or_default().push(row);
        }
        order
            .into_iter()
            .map(|m| {
                let rows = &groups[m];
                let n = rows.len() as f64;
                let mean =
                    |f: &dyn Fn(&MetricRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
                let robustness = rows
                    .iter()
                    .map(|r| r.robustness)
                    .collect::<Option<Vec<f64>>>()
                    .map(|v| v.iter().sum::<f64>() / n);
                MetricSummary {
                    method: m.to_string(),
                    images: rows.len(),
                    deletion: mean(&|r| r.deletion),
                    insertion: mean(&|r| r.insertion),
                    fidelity: mean(&|r| r.fidelity),
                    robustness,
                    time: mean(&|r| r.time),
                }
            })
            .collect()
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(Self::COLUMNS).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.image.to_string(),
                r.method.clone(),
                r.deletion.to_string(),
                r.insertion.to_string(),
                r.fidelity.to_string(),
                r.robustness.map(|v| v.to_string()).unwrap_or_default(),
                r.time.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rows, per-method summary, tightness and provenance as one document.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "columns": Self::COLUMNS,
            "rows": self.rows,
            "summary": self.summary(),
            "tightness": self.tightness,
            "provenance": self.provenance,
        })
    }
}

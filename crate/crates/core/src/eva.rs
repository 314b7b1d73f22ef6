//! Adversarial-overlap estimators and the attribution maps built on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::perturbation::{draw, mask_ball, sign_split, CellGrid, PerturbBox, VariableSet};
use crate::rng::{derive_seed, seeded};
use crate::tensor::Tensor;
use crate::verify::{BoundConfig, IntervalBounds, Verifier};

/// Overlap of the strongest competing class over the class of interest,
/// in logit units. Positive means some competitor can win inside the box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapScore {
    pub value: f64,
    /// `true` when derived from verified bounds (an upper bound on the true
    /// overlap), `false` when estimated from samples.
    pub certified: bool,
    pub class: usize,
    pub adversary: usize,
}

fn check_classes(net: &Network, class: usize) -> Result<()> {
    if net.class_count() < 2 {
        return Err(Error::InvalidArgument(
            "overlap needs at least two classes".into(),
        ));
    }
    if class >= net.class_count() {
        return Err(Error::ClassOutOfRange {
            index: class,
            classes: net.class_count(),
        });
    }
    Ok(())
}

fn check_target(net: &Network, class: usize, target: usize) -> Result<()> {
    check_classes(net, class)?;
    if target >= net.class_count() {
        return Err(Error::ClassOutOfRange {
            index: target,
            classes: net.class_count(),
        });
    }
    if target == class {
        return Err(Error::InvalidArgument(format!(
            "target class {target} equals the class of interest"
        )));
    }
    Ok(())
}

/// `max_{c' != c} upper[c'] - lower[c]`, ties to the lowest `c'`.
pub fn overlap_from_bounds(bounds: &IntervalBounds, class: usize) -> OverlapScore {
    let lo = bounds.lower().data()[class];
    let (adversary, best) = bounds
        .upper()
        .data()
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != class)
        .fold((usize::MAX, f64::NEG_INFINITY), |acc, (j, &u)| {
            if u > acc.1 {
                (j, u)
            } else {
                acc
            }
        });
    OverlapScore {
        value: best - lo,
        certified: true,
        class,
        adversary,
    }
}

/// Largest `f_{c'} - f_c` over a set of logit vectors, ties to the first
/// sample and then the lowest class.
fn empirical_overlap(logits: impl Iterator<Item = Vec<f64>>, class: usize) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for z in logits {
        for (j, &v) in z.iter().enumerate() {
            if j != class && v - z[class] > best.0 {
                best = (v - z[class], j);
            }
        }
    }
    best
}

/// Certified upper bound on the overlap over `b`.
pub fn ao_upper(
    net: &Network,
    b: &PerturbBox,
    config: impl Into<BoundConfig>,
    class: usize,
) -> Result<OverlapScore> {
    check_classes(net, class)?;
    let bounds = Verifier::new(net).bounds(b, config)?;
    Ok(overlap_from_bounds(&bounds, class))
}

/// Certified bound on `f_target - f_class` over `b`.
pub fn ao_targeted_upper(
    net: &Network,
    b: &PerturbBox,
    config: impl Into<BoundConfig>,
    class: usize,
    target: usize,
) -> Result<OverlapScore> {
    check_target(net, class, target)?;
    let bounds = Verifier::new(net).bounds(b, config)?;
    Ok(targeted_from_bounds(&bounds, class, target))
}

fn targeted_from_bounds(bounds: &IntervalBounds, class: usize, target: usize) -> OverlapScore {
    OverlapScore {
        value: bounds.upper().data()[target] - bounds.lower().data()[class],
        certified: true,
        class,
        adversary: target,
    }
}

/// Drop in certified overlap when the variables in `u` are frozen.
pub fn eva_score(
    net: &Network,
    u: &VariableSet,
    b: &PerturbBox,
    config: impl Into<BoundConfig>,
    class: usize,
) -> Result<f64> {
    check_classes(net, class)?;
    let config = config.into();
    let verifier = Verifier::new(net);
    let full = overlap_from_bounds(&verifier.bounds(b, config)?, class);
    let masked = overlap_from_bounds(&verifier.bounds(&mask_ball(b, u)?, config)?, class);
    Ok(full.value - masked.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapVariant {
    Certified,
    Empirical,
    Hybrid,
    Targeted,
}

/// How a map was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMethod {
    pub variant: MapVariant,
    pub bound: Option<BoundConfig>,
    /// Largest absolute offset of the perturbation box.
    pub radius: f64,
    pub samples: Option<usize>,
    pub split: Option<usize>,
    pub seed: Option<u64>,
}

/// One score per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    scores: Vec<f64>,
    grid: CellGrid,
    method: MapMethod,
    class: usize,
    target: Option<usize>,
}

impl AttributionMap {
    pub fn new(
        scores: Vec<f64>,
        grid: CellGrid,
        method: MapMethod,
        class: usize,
        target: Option<usize>,
    ) -> Result<Self> {
        if scores.len() != grid.cell_count() {
            return Err(Error::ShapeMismatch {
                expected: vec![grid.cell_count()],
                actual: vec![scores.len()],
            });
        }
        Ok(Self {
            scores,
            grid,
            method,
            class,
            target,
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn method(&self) -> &MapMethod {
        &self.method
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn target(&self) -> Option<usize> {
        self.target
    }

    /// Every input coordinate receives the score of its cell.
    pub fn pixel_scores(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.dim()];
        for (cell, &s) in self.grid.cells().iter().zip(&self.scores) {
            for &i in cell.indices() {
                out[i] = s;
            }
        }
        out
    }
}

fn certified_method(b: &PerturbBox, config: BoundConfig, variant: MapVariant) -> MapMethod {
    MapMethod {
        variant,
        bound: Some(config),
        radius: b.radius(),
        samples: None,
        split: None,
        seed: None,
    }
}

fn check_grid(grid: &CellGrid, b: &PerturbBox) -> Result<()> {
    if grid.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![b.dim()],
            actual: vec![grid.dim()],
        });
    }
    Ok(())
}

/// Certified score of every cell. The unmasked term is computed once and
/// cells are evaluated in parallel.
pub fn eva_map(
    net: &Network,
    grid: &CellGrid,
    b: &PerturbBox,
    config: impl Into<BoundConfig>,
    class: usize,
) -> Result<AttributionMap> {
    check_classes(net, class)?;
    check_grid(grid, b)?;
    let config = config.into();
    let verifier = Verifier::new(net);
    let full = overlap_from_bounds(&verifier.bounds(b, config)?, class).value;
    let scores = grid
        .cells()
        .par_iter()
        .map(|u| {
            let masked = verifier.bounds(&mask_ball(b, u)?, config)?;
            Ok(full - overlap_from_bounds(&masked, class).value)
        })
        .collect::<Result<Vec<f64>>>()?;
    AttributionMap::new(
        scores,
        grid.clone(),
        certified_method(b, config, MapVariant::Certified),
        class,
        None,
    )
}

fn logits_at(net: &Network, center: &[f64], delta: &[f64]) -> Vec<f64> {
    let x: Vec<f64> = center.iter().zip(delta).map(|(c, d)| c + d).collect();
    net.logits(&x)
}

/// Sampled estimate of the overlap (a lower bound on the true maximum).
pub fn ao_empirical(
    net: &Network,
    b: &PerturbBox,
    n: usize,
    seed: u64,
    class: usize,
) -> Result<OverlapScore> {
    check_classes(net, class)?;
    b.center().expect_shape(net.input_shape())?;
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut rng = seeded(seed);
    let center = b.center().data();
    let samples = (0..n).map(|_| logits_at(net, center, &draw(b, &mut rng)));
    let (value, adversary) = empirical_overlap(samples, class);
    Ok(OverlapScore {
        value,
        certified: false,
        class,
        adversary,
    })
}

/// Seed of the masked term. A mask that leaves the box unchanged names the
/// same estimate as the unmasked term, so it reuses that term's seed.
fn masked_seed(b: &PerturbBox, masked: &PerturbBox, full: u64, tag: u64) -> u64 {
    if masked == b {
        full
    } else {
        tag
    }
}

/// `ÂO(B) - ÂO(B_u)` with independent seeds per term.
pub fn eva_empirical(
    net: &Network,
    u: &VariableSet,
    b: &PerturbBox,
    n: usize,
    seed: u64,
    class: usize,
) -> Result<f64> {
    let masked = mask_ball(b, u)?;
    let s0 = derive_seed(seed, 0);
    let full = ao_empirical(net, b, n, s0, class)?;
    let s1 = masked_seed(b, &masked, s0, derive_seed(seed, 1));
    let frozen = ao_empirical(net, &masked, n, s1, class)?;
    Ok(full.value - frozen.value)
}

/// Empirical scores for every cell; the unmasked estimate is shared.
pub fn eva_empirical_map(
    net: &Network,
    grid: &CellGrid,
    b: &PerturbBox,
    n: usize,
    seed: u64,
    class: usize,
) -> Result<AttributionMap> {
    check_grid(grid, b)?;
    let full = ao_empirical(net, b, n, derive_seed(seed, 0), class)?.value;
    let scores = grid
        .cells()
        .par_iter()
        .enumerate()
        .map(|(k, u)| {
            let masked = mask_ball(b, u)?;
            let tag = derive_seed(derive_seed(seed, 1), k as u64);
            let tag = masked_seed(b, &masked, derive_seed(seed, 0), tag);
            Ok(full - ao_empirical(net, &masked, n, tag, class)?.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    let method = MapMethod {
        variant: MapVariant::Empirical,
        bound: None,
        radius: b.radius(),
        samples: Some(n),
        split: None,
        seed: Some(seed),
    };
    AttributionMap::new(scores, grid.clone(), method, class, None)
}

/// Activation-space box at `split` spanned by `h(x)` and the images of
/// `n - 1` uniform samples from `b`.
pub fn hybrid_activation_box(
    net: &Network,
    split: usize,
    b: &PerturbBox,
    n: usize,
    seed: u64,
) -> Result<PerturbBox> {
    net.check_split(split)?;
    b.center().expect_shape(net.input_shape())?;
    if n < 2 {
        return Err(Error::InvalidArgument(
            "hybrid sampling needs n >= 2 (the center plus at least one draw)".into(),
        ));
    }
    let center = b.center().data();
    let h0 = net.run(center, 0, split);
    let mut lo = vec![0.0f64; h0.len()];
    let mut hi = vec![0.0f64; h0.len()];
    let mut rng = seeded(seed);
    for _ in 1..n {
        let delta = draw(b, &mut rng);
        let x: Vec<f64> = center.iter().zip(&delta).map(|(c, d)| c + d).collect();
        let h = net.run(&x, 0, split);
        for (j, (&v, &c)) in h.iter().zip(&h0).enumerate() {
            lo[j] = lo[j].min(v - c);
            hi[j] = hi[j].max(v - c);
        }
    }
    let center = Tensor::from_parts(net.shape_at(split).to_vec(), h0);
    Ok(PerturbBox::from_parts(center, lo, hi, None))
}

/// EVA over a sampled activation box: the mask acts on input coordinates
/// before sampling, and the suffix of the network is verified.
#[allow(clippy::too_many_arguments)]
pub fn eva_hybrid(
    net: &Network,
    split: usize,
    u: &VariableSet,
    b: &PerturbBox,
    n: usize,
    seed: u64,
    config: impl Into<BoundConfig>,
    class: usize,
) -> Result<f64> {
    check_classes(net, class)?;
    let config = config.into();
    let verifier = Verifier::suffix(net, split)?;
    let s0 = derive_seed(seed, 0);
    let p = hybrid_activation_box(net, split, b, n, s0)?;
    let masked = mask_ball(b, u)?;
    let s1 = masked_seed(b, &masked, s0, derive_seed(seed, 1));
    let pu = hybrid_activation_box(net, split, &masked, n, s1)?;
    let full = overlap_from_bounds(&verifier.bounds(&p, config)?, class);
    let masked = overlap_from_bounds(&verifier.bounds(&pu, config)?, class);
    Ok(full.value - masked.value)
}

/// Hybrid scores for every cell; the unmasked term is shared.
#[allow(clippy::too_many_arguments)]
pub fn eva_hybrid_map(
    net: &Network,
    split: usize,
    grid: &CellGrid,
    b: &PerturbBox,
    n: usize,
    seed: u64,
    config: impl Into<BoundConfig>,
    class: usize,
) -> Result<AttributionMap> {
    check_classes(net, class)?;
    check_grid(grid, b)?;
    let config = config.into();
    let verifier = Verifier::suffix(net, split)?;
    let p = hybrid_activation_box(net, split, b, n, derive_seed(seed, 0))?;
    let full = overlap_from_bounds(&verifier.bounds(&p, config)?, class).value;
    let scores = grid
        .cells()
        .par_iter()
        .enumerate()
        .map(|(k, u)| {
            let masked = mask_ball(b, u)?;
            let tag = derive_seed(derive_seed(seed, 1), k as u64);
            let tag = masked_seed(b, &masked, derive_seed(seed, 0), tag);
            let pu = hybrid_activation_box(net, split, &masked, n, tag)?;
            Ok(full - overlap_from_bounds(&verifier.bounds(&pu, config)?, class).value)
        })
        .collect::<Result<Vec<f64>>>()?;
    let method = MapMethod {
        variant: MapVariant::Hybrid,
        bound: Some(config),
        radius: b.radius(),
        samples: Some(n),
        split: Some(split),
        seed: Some(seed),
    };
    AttributionMap::new(scores, grid.clone(), method, class, None)
}

/// Signed map `φ⁺ - φ⁻` for a chosen competitor: `φ⁺` measures how much
/// freezing a cell reduces the targeted overlap under non-negative noise,
/// `φ⁻` the same under non-positive noise.
pub fn targeted_map(
    net: &Network,
    grid: &CellGrid,
    b: &PerturbBox,
    config: impl Into<BoundConfig>,
    class: usize,
    target: usize,
) -> Result<AttributionMap> {
    check_target(net, class, target)?;
    check_grid(grid, b)?;
    let config = config.into();
    let verifier = Verifier::new(net);
    let (plus, minus) = sign_split(b);
    let score = |bx: &PerturbBox| -> Result<f64> {
        Ok(targeted_from_bounds(&verifier.bounds(bx, config)?, class, target).value)
    };
    let (full_plus, full_minus) = (score(&plus)?, score(&minus)?);
    let scores = grid
        .cells()
        .par_iter()
        .map(|u| {
            let phi_plus = full_plus - score(&mask_ball(&plus, u)?)?;
            let phi_minus = full_minus - score(&mask_ball(&minus, u)?)?;
            Ok(phi_plus - phi_minus)
        })
        .collect::<Result<Vec<f64>>>()?;
    AttributionMap::new(
        scores,
        grid.clone(),
        certified_method(b, config, MapVariant::Targeted),
        class,
        Some(target),
    )
}

use eva_core::{
    eva_empirical_map, eva_hybrid_map, eva_map, explain_baseline, linf_ball, targeted_map,
    AttributionMap, BaselineConfig, BoundConfig, CellGrid, Network, Tensor,
};

use crate::args::MethodSpec;
use crate::error::{CliError, CliResult};

/// Samples used by the sampled EVA variants when none are given.
pub const DEFAULT_EVA_SAMPLES: usize = 1000;

/// Settings shared by every method.
pub struct Params<'a> {
    pub bound: BoundConfig,
    pub eps: f64,
    pub clip: Option<(f64, f64)>,
    pub grid: &'a CellGrid,
    pub samples: Option<usize>,
    pub split: Option<usize>,
    pub target: Option<usize>,
    pub seed: u64,
}

/// Scores at cell and at input resolution.
pub struct Explanation {
    pub cells: Vec<f64>,
    pub pixels: Vec<f64>,
    pub signed: bool,
}

impl From<AttributionMap> for Explanation {
    fn from(m: AttributionMap) -> Self {
        Self {
            pixels: m.pixel_scores(),
            signed: m.target().is_some(),
            cells: m.scores().to_vec(),
        }
    }
}

/// Sample count a method will actually use, `None` when it draws none.
pub fn effective_samples(
    method: MethodSpec,
    shape: &[usize],
    samples: Option<usize>,
) -> Option<usize> {
    match method {
        MethodSpec::Eva | MethodSpec::Targeted => None,
        MethodSpec::EvaEmpirical | MethodSpec::EvaHybrid => {
            Some(samples.unwrap_or(DEFAULT_EVA_SAMPLES))
        }
        MethodSpec::Baseline(m) => {
            let uses = !matches!(
                m,
                eva_core::BaselineMethod::Saliency
                    | eva_core::BaselineMethod::GradientInput
                    | eva_core::BaselineMethod::GradCam
                    | eva_core::BaselineMethod::GradCamPlusPlus
                    | eva_core::BaselineMethod::Occlusion
            );
            uses.then(|| samples.unwrap_or(BaselineConfig::new(m, shape).samples))
        }
    }
}

pub fn run(
    net: &Network,
    x: &Tensor,
    class: usize,
    method: MethodSpec,
    p: &Params,
) -> CliResult<Explanation> {
    let samples = effective_samples(method, net.input_shape(), p.samples);
    let ball = || linf_ball(x, p.eps, p.clip).map_err(CliError::from);
    Ok(match method {
        MethodSpec::Eva => eva_map(net, p.grid, &ball()?, p.bound, class)?.into(),
        MethodSpec::EvaEmpirical => eva_empirical_map(
            net,
            p.grid,
            &ball()?,
            samples.unwrap_or_default(),
            p.seed,
            class,
        )?
        .into(),
        MethodSpec::EvaHybrid => {
            let split = p
                .split
                .ok_or_else(|| CliError::Config("eva-hybrid needs --split".into()))?;
            eva_hybrid_map(
                net,
                split,
                p.grid,
                &ball()?,
                samples.unwrap_or_default(),
                p.seed,
                p.bound,
                class,
            )?
            .into()
        }
        MethodSpec::Targeted => {
            let target = p
                .target
                .ok_or_else(|| CliError::Config("targeted maps need --target".into()))?;
            targeted_map(net, p.grid, &ball()?, p.bound, class, target)?.into()
        }
        MethodSpec::Baseline(m) => {
            let mut config = BaselineConfig::new(m, net.input_shape());
            config.seed = p.seed;
            if let Some(n) = samples {
                config.samples = n;
            }
            let pixels = explain_baseline(net, x, class, &config)?.into_data();
            let cells = p
                .grid
                .cells()
                .iter()
                .map(|c| c.indices().iter().map(|&i| pixels[i]).sum::<f64>() / c.len() as f64)
                .collect();
            Explanation {
                cells,
                pixels,
                signed: false,
            }
        }
    })
}

/// Per-pixel means over channels, `height × width` row-major.
pub fn plane(grid: &CellGrid, pixels: &[f64]) -> Vec<f64> {
    let (c, hw) = (grid.channels(), grid.height() * grid.width());
    (0..hw)
        .map(|p| (0..c).map(|ch| pixels[ch * hw + p]).sum::<f64>() / c as f64)
        .collect()
}

//! Certified attribution maps for small feedforward networks.
//!
//! Perturbation bounds are propagated through the network and each input
//! region is scored by how much freezing it shrinks the certified
//! adversarial overlap.

pub mod baselines;
pub mod error;
pub mod eva;
pub mod metrics;
pub mod model_io;
pub mod network;
pub mod perturbation;
pub mod tensor;
pub mod verify;

mod linalg;
mod rng;
mod scratch;

pub use baselines::{
    bilinear_resize, explain_baseline, gaussian_samples, gradcam, gradcampp, gradient_input,
    integrated_gradients, min_adv_radius, occlusion, pgd_attack, rise, saliency, smoothgrad,
    vargrad, AdvResult, BaselineConfig, BaselineMethod, PgdConfig, RadiusEstimate,
};
pub use error::{Error, Result};
pub use eva::{
    ao_empirical, ao_targeted_upper, ao_upper, eva_empirical, eva_empirical_map, eva_hybrid,
    eva_hybrid_map, eva_map, eva_score, hybrid_activation_box, overlap_from_bounds, targeted_map,
    AttributionMap, MapMethod, MapVariant, OverlapScore,
};
pub use metrics::{
    deletion_auc, deletion_curve, insertion_auc, insertion_curve, mu_fidelity, noise_baseline,
    pearson, ranking, robustness_sr, stability_check, tightness, trapezoid, Curve, CurveConfig,
    Fidelity, FidelityConfig, MetricReport, MetricRow, MetricSummary, RobustnessConfig,
    RobustnessCurve, ScoreKind, StabilityReport,
};
pub use model_io::{
    load_idx, load_model, save_model, train_fixture, DatasetSlice, ModelManifest, NetConfig,
    TrainOptions, TrainReport,
};
pub use network::{Layer, Network, Padding};
pub use perturbation::{
    grid_cells, grid_for_shape, linf_ball, mask_ball, sample_uniform, sign_split, CellGrid,
    PerturbBox, VariableSet, PIXEL_RANGE,
};
pub use rng::derive_seed;
pub use tensor::Tensor;
pub use verify::{
    backward_bounds, bounds, bounds_from_activation, combine_bounds, forward_affine_bounds,
    ibp_bounds, AffineBounds, BackwardBounds, BoundConfig, BoundMethod, IntervalBounds,
    LayerBoundsTrace, Norm, Verifier,
};

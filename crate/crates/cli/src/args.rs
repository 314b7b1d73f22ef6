use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use eva_core::{BaselineMethod, BoundConfig, BoundMethod, Norm, PIXEL_RANGE};
use serde::{Serialize, Serializer};

#[derive(Parser, Debug)]
#[command(
    name = "eva",
    version,
    about = "Certified attribution maps for small networks"
)]
pub struct Cli {
    /// Worker threads for per-cell and per-image work.
    #[arg(long, env = "EVA_THREADS", global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Explain one input: heatmap, per-cell CSV and metadata.
    Explain(ExplainArgs),
    /// Score several methods over a dataset slice.
    Benchmark(BenchmarkArgs),
    /// Print verified output bounds and the overlap for one input.
    Verify(VerifyArgs),
    /// Train a small fixture model.
    Train(TrainArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Model manifest (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Parameter blob; defaults to the manifest path with a `.bin` extension.
    #[arg(long)]
    pub blob: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// IDX image file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// IDX label file matching `--data`.
    #[arg(long, requires = "data")]
    pub labels: Option<PathBuf>,
    /// Index into `--data`, or a PGM file when `--data` is absent.
    #[arg(long)]
    pub image: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct BoxArgs {
    /// Bound method: ibp, forward, backward, ibp+fo or ibp+fo+ba.
    #[arg(long, default_value = "ibp+fo+ba")]
    pub bound: BoundMethod,
    /// Perturbation radius.
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    /// Norm of the perturbation ball: linf, l2 or l1.
    #[arg(long, default_value = "linf")]
    pub norm: Norm,
    /// Do not clip perturbed inputs to the pixel range [0, 1].
    #[arg(long)]
    pub no_clip: bool,
}

impl BoxArgs {
    pub fn config(&self) -> BoundConfig {
        BoundConfig {
            method: self.bound,
            norm: self.norm,
        }
    }

    pub fn clip(&self) -> Option<(f64, f64)> {
        (!self.no_clip).then_some(PIXEL_RANGE)
    }
}

#[derive(Args, Debug, Clone)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub bounds: BoxArgs,
    /// eva, eva-emp, eva-hybrid, targeted or baseline:<name>.
    #[arg(long, default_value = "eva")]
    pub method: MethodSpec,
    /// Grid side; the input is split into grid × grid cells.
    #[arg(long, default_value_t = 12)]
    pub grid: usize,
    /// Class to explain; defaults to the predicted class.
    #[arg(long)]
    pub class: Option<usize>,
    /// Competing class for targeted maps.
    #[arg(long)]
    pub target: Option<usize>,
    /// Layer index splitting the network for eva-hybrid.
    #[arg(long)]
    pub split: Option<usize>,
    /// Sample count for sampled methods.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// IDX image file.
    #[arg(long)]
    pub data: PathBuf,
    /// IDX label file.
    #[arg(long)]
    pub labels: PathBuf,
    #[command(flatten)]
    pub bounds: BoxArgs,
    /// Methods to compare, comma separated.
    #[arg(long = "method", value_delimiter = ',', default_value = "eva")]
    pub methods: Vec<MethodSpec>,
    /// Number of leading images to evaluate.
    #[arg(long, default_value_t = 100)]
    pub images: usize,
    #[arg(long, default_value_t = 12)]
    pub grid: usize,
    /// Layer index splitting the network for eva-hybrid.
    #[arg(long)]
    pub split: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Steps of the deletion and insertion curves; defaults to one per cell.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Random subsets drawn for fidelity.
    #[arg(long, default_value_t = 200)]
    pub subsets: usize,
    /// Also run the attack-based robustness curve (slow).
    #[arg(long)]
    pub robustness: bool,
    /// Also report the mean certified overlap of the bound method.
    #[arg(long)]
    pub tightness: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub bounds: BoxArgs,
    /// Class of interest; defaults to the predicted class.
    #[arg(long)]
    pub class: Option<usize>,
    /// Also write the report as JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// IDX image file.
    #[arg(long)]
    pub data: PathBuf,
    /// IDX label file.
    #[arg(long)]
    pub labels: PathBuf,
    /// mnist-mlp, mlp:<w1>,<w2>,... or cnn:<f1>,<f2>,...
    #[arg(long, default_value = "mnist-mlp")]
    pub arch: String,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Held-out IDX images for a test accuracy.
    #[arg(long, requires = "test_labels")]
    pub test_data: Option<PathBuf>,
    #[arg(long, requires = "test_data")]
    pub test_labels: Option<PathBuf>,
    /// Manifest path; the blob is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub overwrite: bool,
}

/// Attribution method selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodSpec {
    Eva,
    EvaEmpirical,
    EvaHybrid,
    Targeted,
    Baseline(BaselineMethod),
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodSpec::Eva => f.write_str("eva"),
            MethodSpec::EvaEmpirical => f.write_str("eva-emp"),
            MethodSpec::EvaHybrid => f.write_str("eva-hybrid"),
            MethodSpec::Targeted => f.write_str("targeted"),
            MethodSpec::Baseline(m) => write!(f, "baseline:{m}"),
        }
    }
}

impl FromStr for MethodSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "eva" => Ok(MethodSpec::Eva),
            "eva-emp" => Ok(MethodSpec::EvaEmpirical),
            "eva-hybrid" => Ok(MethodSpec::EvaHybrid),
            "targeted" => Ok(MethodSpec::Targeted),
            _ => {
                let name = s.strip_prefix("baseline:").ok_or_else(|| {
                    format!(
                        "unknown method `{s}` (expected eva, eva-emp, eva-hybrid, targeted or baseline:<name>)"
                    )
                })?;
                name.parse().map(MethodSpec::Baseline).map_err(|_| {
                    let known: Vec<&str> = BaselineMethod::ALL.iter().map(|m| m.name()).collect();
                    format!("unknown baseline `{name}` (known: {})", known.join(", "))
                })
            }
        }
    }
}

impl Serialize for MethodSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

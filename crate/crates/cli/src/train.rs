use eva_core::model_io::default_blob_path;
use eva_core::{save_model, train_fixture, NetConfig, TrainOptions};
use serde_json::json;

use crate::args::TrainArgs;
use crate::error::{CliError, CliResult};
use crate::input;

/// `mnist-mlp`, `mlp:<widths>` or `cnn:<filters>`.
pub fn architecture(spec: &str, input_shape: &[usize], classes: usize) -> CliResult<NetConfig> {
    let widths = |list: &str| -> CliResult<Vec<usize>> {
        list.split(',')
            .filter(|s| !s.is_empty())
            .map(|s| match s.trim().parse::<usize>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(CliError::Config(format!("bad layer width `{s}` in --arch"))),
            })
            .collect()
    };
    match spec.split_once(':') {
        None if spec == "mnist-mlp" => Ok(NetConfig::mnist_mlp()),
        Some(("mlp", list)) => Ok(NetConfig::mlp(input_shape, &widths(list)?, classes)),
        Some(("cnn", list)) => {
            let filters = widths(list)?;
            if filters.is_empty() {
                return Err(CliError::Config(
                    "cnn needs at least one filter count".into(),
                ));
            }
            Ok(NetConfig::small_cnn(input_shape, &filters, classes))
        }
        _ => Err(CliError::Config(format!(
            "unknown architecture `{spec}` (expected mnist-mlp, mlp:<widths> or cnn:<filters>)"
        ))),
    }
}

pub fn run(a: &TrainArgs) -> CliResult<()> {
    if a.epochs == 0 || a.batch_size == 0 || !(a.lr > 0.0 && a.lr.is_finite()) {
        return Err(CliError::Config(
            "--epochs, --batch-size and --lr must be positive".into(),
        ));
    }
    let data = input::dataset(&a.data, &a.labels)?;
    let classes = data.labels().iter().max().map_or(2, |&m| (m + 1).max(2));
    let config = architecture(&a.arch, data.sample_shape(), classes)?;
    let options = TrainOptions {
        epochs: a.epochs,
        lr: a.lr,
        seed: a.seed,
        batch_size: a.batch_size,
    };
    let report = train_fixture(&config, &data, &options)?;
    let test_accuracy = match (&a.test_data, &a.test_labels) {
        (Some(images), Some(labels)) => {
            let test = input::dataset(images, labels)?;
            let mut hits = 0;
            for i in 0..test.len() {
                hits += usize::from(report.network.predict(&test.image(i)?)? == test.label(i)?);
            }
            Some(hits as f64 / test.len().max(1) as f64)
        }
        _ => None,
    };
    let blob = default_blob_path(&a.out);
    save_model(&report.network, &a.out, &blob, a.overwrite)?;
    let summary = json!({
        "model": a.out,
        "blob": blob,
        "arch": a.arch,
        "options": options,
        "train_accuracy": report.accuracy,
        "train_loss": report.loss,
        "test_accuracy": test_accuracy,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("serializable")
    );
    Ok(())
}

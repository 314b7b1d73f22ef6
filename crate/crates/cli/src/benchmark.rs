use std::fs::{self, File};
use std::time::Instant;

use eva_core::{
    deletion_curve, derive_seed, grid_for_shape, insertion_curve, linf_ball, mu_fidelity,
    robustness_sr, tightness, CurveConfig, FidelityConfig, MetricReport, MetricRow,
    RobustnessConfig, Tensor,
};
use serde_json::json;

use crate::args::{BenchmarkArgs, MethodSpec};
use crate::error::{CliError, CliResult};
use crate::input;
use crate::methods::{self, Params};

pub fn check(a: &BenchmarkArgs) -> CliResult<()> {
    let bad = |m: String| Err(CliError::Config(m));
    if a.methods.is_empty() {
        return bad("--method needs at least one method".into());
    }
    if let Some(m) = a.methods.iter().find(|m| **m == MethodSpec::Targeted) {
        return bad(format!(
            "{m} maps need a target class and cannot be benchmarked"
        ));
    }
    if a.methods.contains(&MethodSpec::EvaHybrid) && a.split.is_none() {
        return bad("eva-hybrid needs --split".into());
    }
    if !(a.bounds.eps > 0.0 && a.bounds.eps.is_finite()) {
        return bad("--eps must be a positive number".into());
    }
    if a.images == 0 || a.grid == 0 || a.steps == Some(0) || a.samples == Some(0) {
        return bad("--images, --grid, --steps and --samples must be positive".into());
    }
    if a.subsets < 2 {
        return bad("--subsets must be at least 2".into());
    }
    Ok(())
}

pub fn run(a: &BenchmarkArgs) -> CliResult<()> {
    check(a)?;
    let net = input::network(&a.model)?;
    let data = input::dataset(&a.data, &a.labels)?;
    let n = a.images.min(data.len());
    let images: Vec<Tensor> = (0..n).map(|i| data.image(i)).collect::<Result<_, _>>()?;
    let grid = grid_for_shape(net.input_shape(), a.grid)?;
    let steps = a.steps.unwrap_or(grid.cell_count());
    let params = Params {
        bound: a.bounds.config(),
        eps: a.bounds.eps,
        clip: a.bounds.clip(),
        grid: &grid,
        samples: a.samples,
        split: a.split,
        target: None,
        seed: a.seed,
    };

    let provenance = json!({
        "tool": "eva",
        "version": env!("CARGO_PKG_VERSION"),
        "command": "benchmark",
        "model": a.model.model,
        "blob": input::blob_path(&a.model),
        "data": a.data,
        "labels": a.labels,
        "methods": a.methods,
        "images": n,
        "bound": a.bounds.bound,
        "eps": a.bounds.eps,
        "norm": a.bounds.norm,
        "clip": a.bounds.clip(),
        "grid": a.grid,
        "split": a.split,
        "samples": a.methods.iter()
            .map(|&m| (m.to_string(), methods::effective_samples(m, net.input_shape(), a.samples)))
            .collect::<std::collections::BTreeMap<_, _>>(),
        "seed": a.seed,
        "steps": steps,
        "subsets": a.subsets,
        "robustness": a.robustness,
        "class": "predicted",
    });
    let mut report = MetricReport::new(provenance);

    for (i, x) in images.iter().enumerate() {
        let class = net.predict(x)?;
        let seed = derive_seed(a.seed, i as u64);
        for &method in &a.methods {
            let start = Instant::now();
            let e = methods::run(&net, x, class, method, &params)?;
            let time = start.elapsed().as_secs_f64();
            let curve = CurveConfig::new(steps, seed);
            let deletion = deletion_curve(&net, x, class, &e.pixels, &curve)?.auc;
            let insertion = insertion_curve(&net, x, class, &e.pixels, &curve)?.auc;
            let fidelity = mu_fidelity(
                &net,
                x,
                class,
                &e.pixels,
                &FidelityConfig {
                    subsets: a.subsets,
                    seed,
                    ..FidelityConfig::default()
                },
            )?;
            let (robustness, robustness_censored) = if a.robustness {
                let mut config = RobustnessConfig::default();
                config.pgd.seed = seed;
                let r = robustness_sr(&net, x, class, &e.pixels, &config)?;
                (Some(r.auc), r.censored.iter().filter(|&&c| c).count())
            } else {
                (None, 0)
            };
            report.rows.push(MetricRow {
                image: i,
                method: method.to_string(),
                deletion,
                insertion,
                fidelity: fidelity.value,
                fidelity_degenerate: fidelity.degenerate,
                robustness,
                robustness_censored,
                time,
            });
        }
        eprintln!("image {}/{n} done", i + 1);
    }
    if a.tightness {
        let clip = a.bounds.clip();
        let eps = a.bounds.eps;
        report.tightness = Some(tightness(
            &net,
            &images,
            |x| linf_ball(x, eps, clip),
            a.bounds.config(),
        )?);
    }

    fs::create_dir_all(&a.out).map_err(CliError::write(&a.out))?;
    let path = a.out.join("report.csv");
    let file = File::create(&path).map_err(CliError::write(&path))?;
    report
        .write_csv(file)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let path = a.out.join("report.json");
    let text = serde_json::to_string_pretty(&report.to_json()).expect("serializable") + "\n";
    fs::write(&path, text).map_err(CliError::write(&path))?;

    println!(
        "{:<24} {:>7} {:>7} {:>7} {:>7} {:>9}",
        "method", "Del.", "Ins.", "Fid.", "Rob.", "Time"
    );
    for s in report.summary() {
        let rob = s.robustness.map_or("-".to_string(), |r| format!("{r:.3}"));
        println!(
            "{:<24} {:>7.3} {:>7.3} {:>7.3} {:>7} {:>8.3}s",
            s.method, s.deletion, s.insertion, s.fidelity, rob, s.time
        );
    }
    if let Some(t) = report.tightness {
        println!("mean certified overlap ({}): {t:.4}", a.bounds.bound);
    }
    Ok(())
}

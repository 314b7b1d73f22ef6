use std::fs;
use std::path::PathBuf;

use eva_core::{grid_for_shape, BoundMethod, Norm};
use serde::Serialize;
use serde_json::json;

use crate::args::{ExplainArgs, MethodSpec};
use crate::error::{CliError, CliResult};
use crate::input;
use crate::methods::{self, Params};
use crate::render;

/// Effective configuration of an explain run, as recorded next to its
/// outputs.
#[derive(Debug, Serialize)]
pub struct RunConfig {
    pub model: PathBuf,
    pub blob: PathBuf,
    pub data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub image: Option<String>,
    pub method: MethodSpec,
    pub bound: BoundMethod,
    pub eps: f64,
    pub norm: Norm,
    pub clip: Option<(f64, f64)>,
    pub grid: usize,
    pub class: usize,
    pub target: Option<usize>,
    pub split: Option<usize>,
    pub samples: Option<usize>,
    pub seed: u64,
}

pub fn check(a: &ExplainArgs) -> CliResult<()> {
    let bad = |m: &str| Err(CliError::Config(m.into()));
    if !(a.bounds.eps > 0.0 && a.bounds.eps.is_finite()) {
        return bad("--eps must be a positive number");
    }
    if a.grid == 0 {
        return bad("--grid must be at least 1");
    }
    match a.method {
        MethodSpec::Targeted if a.target.is_none() => {
            return bad("--method targeted needs --target")
        }
        MethodSpec::Targeted => {}
        _ if a.target.is_some() => return bad("--target only applies to --method targeted"),
        _ => {}
    }
    match a.method {
        MethodSpec::EvaHybrid if a.split.is_none() => {
            return bad("--method eva-hybrid needs --split")
        }
        MethodSpec::EvaHybrid => {}
        _ if a.split.is_some() => return bad("--split only applies to --method eva-hybrid"),
        _ => {}
    }
    if a.samples == Some(0) {
        return bad("--samples must be positive");
    }
    if a.target.is_some() && a.target == a.class {
        return bad("--target must differ from --class");
    }
    Ok(())
}

pub fn run(a: &ExplainArgs) -> CliResult<()> {
    check(a)?;
    let net = input::network(&a.model)?;
    let sample = input::sample(&a.input, &net)?;
    let predicted = net.predict(&sample.x)?;
    let class = a.class.unwrap_or(predicted);
    let grid = grid_for_shape(net.input_shape(), a.grid)?;
    let config = RunConfig {
        model: a.model.model.clone(),
        blob: input::blob_path(&a.model),
        data: a.input.data.clone(),
        labels: a.input.labels.clone(),
        image: a.input.image.clone(),
        method: a.method,
        bound: a.bounds.bound,
        eps: a.bounds.eps,
        norm: a.bounds.norm,
        clip: a.bounds.clip(),
        grid: a.grid,
        class,
        target: a.target,
        split: a.split,
        samples: methods::effective_samples(a.method, net.input_shape(), a.samples),
        seed: a.seed,
    };
    let params = Params {
        bound: a.bounds.config(),
        eps: a.bounds.eps,
        clip: config.clip,
        grid: &grid,
        samples: a.samples,
        split: a.split,
        target: a.target,
        seed: a.seed,
    };
    let e = methods::run(&net, &sample.x, class, a.method, &params)?;

    fs::create_dir_all(&a.out).map_err(CliError::write(&a.out))?;
    let meta = json!({
        "tool": "eva",
        "version": env!("CARGO_PKG_VERSION"),
        "command": "explain",
        "config": config,
        "predicted": predicted,
        "label": sample.label,
        "index": sample.index,
        "cells": e.cells.len(),
        "signed": e.signed,
    });
    let meta_text = serde_json::to_string_pretty(&meta).expect("serializable") + "\n";
    let path = a.out.join("meta.json");
    fs::write(&path, &meta_text).map_err(CliError::write(&path))?;

    let path = a.out.join("cells.csv");
    write_cells(&path, &grid, &e.cells).map_err(CliError::write(&path))?;

    let (h, w) = (grid.height(), grid.width());
    let scale = (224 / h.max(w)).max(1);
    let rgb = render::heatmap(&methods::plane(&grid, &e.pixels), h, w, e.signed, scale);
    let compact = serde_json::to_string(&meta).expect("serializable");
    let path = a.out.join("heatmap.ppm");
    render::write_ppm(&path, w * scale, h * scale, &rgb, &compact)
        .map_err(CliError::write(&path))?;

    println!(
        "{} map of class {class} ({} cells) written to {}",
        a.method,
        e.cells.len(),
        a.out.display()
    );
    Ok(())
}

fn write_cells(
    path: &std::path::Path,
    grid: &eva_core::CellGrid,
    cells: &[f64],
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cell", "row", "col", "score"])?;
    let side = grid.side();
    for (i, s) in cells.iter().enumerate() {
        w.write_record([
            i.to_string(),
            (i / side).to_string(),
            (i % side).to_string(),
            s.to_string(),
        ])?;
    }
    w.flush()
}

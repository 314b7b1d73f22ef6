use std::fs;

use eva_core::{bounds, linf_ball, overlap_from_bounds};
use serde_json::json;

use crate::args::VerifyArgs;
use crate::error::{CliError, CliResult};
use crate::input;

pub fn run(a: &VerifyArgs) -> CliResult<()> {
    if !(a.bounds.eps > 0.0 && a.bounds.eps.is_finite()) {
        return Err(CliError::Config("--eps must be a positive number".into()));
    }
    let net = input::network(&a.model)?;
    let sample = input::sample(&a.input, &net)?;
    let predicted = net.predict(&sample.x)?;
    let class = a.class.unwrap_or(predicted);
    let b = linf_ball(&sample.x, a.bounds.eps, a.bounds.clip())?;
    let out = bounds(&net, &b, a.bounds.config())?;
    let overlap = overlap_from_bounds(&out, class);
    let (lower, upper) = (out.lower().data(), out.upper().data());

    println!(
        "bound {} norm {} eps {} class {class} (predicted {predicted})",
        a.bounds.bound, a.bounds.norm, a.bounds.eps
    );
    println!("{:>5} {:>14} {:>14}", "class", "lower", "upper");
    for (k, (l, u)) in lower.iter().zip(upper).enumerate() {
        println!("{k:>5} {l:>14.6} {u:>14.6}");
    }
    println!("mean gap {:.6}", out.mean_gap());
    println!(
        "overlap {:.6} (strongest rival {})",
        overlap.value, overlap.adversary
    );
    let certified = overlap.value <= 0.0;
    if certified {
        println!("certified: no perturbation in the box changes the decision for class {class}");
    } else {
        println!(
            "not certified: the bounds leave class {} able to overtake class {class}",
            overlap.adversary
        );
    }

    if let Some(path) = &a.out {
        let report = json!({
            "tool": "eva",
            "version": env!("CARGO_PKG_VERSION"),
            "command": "verify",
            "config": {
                "model": a.model.model,
                "blob": input::blob_path(&a.model),
                "data": a.input.data,
                "labels": a.input.labels,
                "image": a.input.image,
                "bound": a.bounds.bound,
                "eps": a.bounds.eps,
                "norm": a.bounds.norm,
                "clip": a.bounds.clip(),
                "class": class,
            },
            "predicted": predicted,
            "label": sample.label,
            "lower": lower,
            "upper": upper,
            "mean_gap": out.mean_gap(),
            "overlap": overlap,
            "certified": certified,
        });
        let text = serde_json::to_string_pretty(&report).expect("serializable") + "\n";
        fs::write(path, text).map_err(CliError::write(path))?;
    }
    Ok(())
}

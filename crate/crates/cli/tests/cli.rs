use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn data(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/digits28")
        .join(name);
    p.to_string_lossy().into_owned()
}

fn eva(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eva"))
        .args(args)
        .env_remove("EVA_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = eva(args);
    assert!(
        out.status.success(),
        "eva {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    eva(args).status.code().expect("exit code")
}

/// A small MLP trained on the digit fixture inside a fresh directory.
fn model() -> (TempDir, String) {
    let dir = TempDir::new().unwrap();
    let m = dir.path().join("m.json").to_string_lossy().into_owned();
    ok(&[
        "train",
        "--data",
        &data("train-images-idx3-ubyte"),
        "--labels",
        &data("train-labels-idx1-ubyte"),
        "--arch",
        "mlp:24,12",
        "--epochs",
        "3",
        "--out",
        &m,
    ]);
    (dir, m)
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn explain(m: &str, out: &str, extra: &[&str]) -> Vec<String> {
    let images = data("test-images-idx3-ubyte");
    let mut args = vec!["explain", "--model", m, "--data", &images, "--out", out];
    args.extend_from_slice(extra);
    args.into_iter().map(String::from).collect()
}

fn run_explain(m: &str, out: &str, extra: &[&str]) -> String {
    let args = explain(m, out, extra);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

fn cell_scores(dir: &str) -> Vec<f64> {
    csv_rows(&Path::new(dir).join("cells.csv"))
        .iter()
        .map(|r| r[3].parse().unwrap())
        .collect()
}

#[test]
fn explain_writes_reproducible_outputs() {
    let (dir, m) = model();
    let (a, b) = (path(&dir, "a"), path(&dir, "b"));
    run_explain(&m, &a, &["--image", "2", "--grid", "7"]);
    run_explain(&m, &b, &["--image", "2", "--grid", "7"]);
    for f in ["cells.csv", "heatmap.ppm"] {
        assert_eq!(
            fs::read(Path::new(&a).join(f)).unwrap(),
            fs::read(Path::new(&b).join(f)).unwrap(),
            "{f} differs between identical runs"
        );
    }

    let header = fs::read_to_string(Path::new(&a).join("cells.csv")).unwrap();
    assert!(header.starts_with("cell,row,col,score\n"));
    let rows = csv_rows(&Path::new(&a).join("cells.csv"));
    assert_eq!(rows.len(), 49);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], i.to_string());
        assert_eq!(r[1], (i / 7).to_string());
        assert_eq!(r[2], (i % 7).to_string());
    }

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&a).join("meta.json")).unwrap())
            .unwrap();
    let config = &meta["config"];
    assert_eq!(config["method"], "eva");
    assert_eq!(config["bound"], "ibp+fo+ba");
    assert_eq!(config["eps"], 0.5);
    assert_eq!(config["grid"], 7);
    assert_eq!(config["norm"], "linf");
    assert_eq!(config["seed"], 0);
    assert_eq!(meta["cells"], 49);
    assert_eq!(config["class"], meta["predicted"]);

    let ppm = fs::read(Path::new(&a).join("heatmap.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n# {"));
    let text = String::from_utf8_lossy(&ppm);
    assert!(text.contains("\n224 224\n255\n"));
}

#[test]
fn default_grid_has_144_cells() {
    let (dir, m) = model();
    let out = path(&dir, "e");
    run_explain(&m, &out, &[]);
    assert_eq!(cell_scores(&out).len(), 144);
}

#[test]
fn targeted_map_is_signed() {
    let (dir, m) = model();
    let out = path(&dir, "t");
    let stdout = ok(&[
        "verify",
        "--model",
        &m,
        "--data",
        &data("test-images-idx3-ubyte"),
    ]);
    let predicted: usize = stdout
        .split("predicted ")
        .nth(1)
        .and_then(|s| s.split(')').next())
        .unwrap()
        .parse()
        .unwrap();
    let target = (predicted + 1) % 10;
    run_explain(
        &m,
        &out,
        &["--method", "targeted", "--target", &target.to_string()],
    );
    let scores = cell_scores(&out);
    assert!(scores.iter().any(|&s| s < 0.0), "no negative cell");
    assert!(scores.iter().any(|&s| s > 0.0), "no positive cell");
    let meta = fs::read_to_string(Path::new(&out).join("meta.json")).unwrap();
    assert!(meta.contains("\"signed\": true"));
}

#[test]
fn pgm_input_matches_dataset_input() {
    let (dir, m) = model();
    let idx = fs::read(data("test-images-idx3-ubyte")).unwrap();
    let image = 4;
    let pixels = &idx[16 + image * 784..16 + (image + 1) * 784];
    let pgm = dir.path().join("x.pgm");
    let mut bytes = b"P5\n28 28\n255\n".to_vec();
    bytes.extend_from_slice(pixels);
    fs::write(&pgm, bytes).unwrap();

    let (a, b) = (path(&dir, "a"), path(&dir, "b"));
    run_explain(&m, &a, &["--image", "4", "--method", "baseline:saliency"]);
    ok(&[
        "explain",
        "--model",
        &m,
        "--image",
        &pgm.to_string_lossy(),
        "--method",
        "baseline:saliency",
        "--out",
        &b,
    ]);
    assert_eq!(cell_scores(&a), cell_scores(&b));
}

#[test]
fn every_mlp_method_runs() {
    let (dir, m) = model();
    for method in [
        "eva-emp",
        "baseline:saliency",
        "baseline:gradient-input",
        "baseline:integrated-gradients",
        "baseline:smoothgrad",
        "baseline:vargrad",
        "baseline:occlusion",
        "baseline:rise",
    ] {
        let out = path(&dir, method.trim_start_matches("baseline:"));
        run_explain(&m, &out, &["--method", method, "--samples", "20"]);
        let scores = cell_scores(&out);
        assert_eq!(scores.len(), 144, "{method}");
        assert!(scores.iter().all(|s| s.is_finite()), "{method}");
    }
    let out = path(&dir, "hybrid");
    run_explain(
        &m,
        &out,
        &[
            "--method",
            "eva-hybrid",
            "--split",
            "2",
            "--samples",
            "20",
            "--grid",
            "4",
        ],
    );
    assert_eq!(cell_scores(&out).len(), 16);
}

#[test]
fn configuration_errors_exit_with_2() {
    let (dir, m) = model();
    let out = path(&dir, "x");
    let cases: [&[&str]; 8] = [
        &["--method", "targeted"],
        &["--method", "eva-hybrid"],
        &["--split", "2"],
        &["--target", "3"],
        &["--eps", "0"],
        &["--grid", "0"],
        &["--method", "baseline:gradcam"],
        &["--bound", "crown"],
    ];
    for extra in cases {
        let args = explain(&m, &out, extra);
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_eq!(code(&args), 2, "{extra:?}");
    }
    assert_eq!(code(&["explain", "--model", &m, "--out", &out]), 2);
    let images = data("test-images-idx3-ubyte");
    assert_eq!(
        code(&["explain", "--model", &m, "--data", &images, "--image", "99999", "--out", &out]),
        2
    );
    assert_eq!(
        code(&["explain", "--model", &m, "--data", &images, "--class", "10", "--out", &out]),
        2
    );
}

#[test]
fn model_and_data_errors_exit_with_3() {
    let (dir, m) = model();
    let out = path(&dir, "x");
    let images = data("test-images-idx3-ubyte");
    assert_eq!(
        code(&[
            "verify",
            "--model",
            &path(&dir, "missing.json"),
            "--data",
            &images
        ]),
        3
    );

    let broken = path(&dir, "broken.json");
    fs::write(&broken, "{ not json").unwrap();
    fs::copy(dir.path().join("m.bin"), dir.path().join("broken.bin")).unwrap();
    assert_eq!(code(&["verify", "--model", &broken, "--data", &images]), 3);

    let short = path(&dir, "short.bin");
    fs::write(&short, [0u8; 16]).unwrap();
    assert_eq!(
        code(&["verify", "--model", &m, "--blob", &short, "--data", &images]),
        3
    );

    let labels = data("test-labels-idx1-ubyte");
    assert_eq!(
        code(&["explain", "--model", &m, "--data", &labels, "--out", &out]),
        3
    );
}

#[test]
fn verify_certifies_tiny_boxes_and_combined_is_tighter() {
    let (dir, m) = model();
    let images = data("test-images-idx3-ubyte");
    let stdout = ok(&[
        "verify", "--model", &m, "--data", &images, "--image", "1", "--eps", "1e-6",
    ]);
    assert!(stdout.contains("certified: no perturbation"), "{stdout}");

    let gap = |bound: &str| -> f64 {
        let out = path(&dir, &format!("{bound}.json"));
        ok(&[
            "verify", "--model", &m, "--data", &images, "--image", "1", "--bound", bound, "--out",
            &out,
        ]);
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
        assert_eq!(v["config"]["bound"], bound);
        v["mean_gap"].as_f64().unwrap()
    };
    let (ibp, combined) = (gap("ibp"), gap("ibp+fo+ba"));
    assert!(combined <= ibp, "combined {combined} > ibp {ibp}");
}

#[test]
fn benchmark_reports_one_row_per_image_and_method() {
    let (dir, m) = model();
    let out = path(&dir, "bench");
    let images = data("test-images-idx3-ubyte");
    let labels = data("test-labels-idx1-ubyte");
    let stdout = ok(&[
        "benchmark",
        "--model",
        &m,
        "--data",
        &images,
        "--labels",
        &labels,
        "--method",
        "eva,baseline:saliency",
        "--images",
        "5",
        "--grid",
        "6",
        "--subsets",
        "20",
        "--out",
        &out,
    ]);
    assert!(stdout.contains("Del.") && stdout.contains("Ins."));

    let text = fs::read_to_string(Path::new(&out).join("report.csv")).unwrap();
    assert!(text.starts_with("image,method,Del.,Ins.,Fid.,Rob.,Time\n"));
    let rows = csv_rows(&Path::new(&out).join("report.csv"));
    assert_eq!(rows.len(), 10);
    for (k, r) in rows.iter().enumerate() {
        assert_eq!(r[0], (k / 2).to_string());
        assert_eq!(r[1], ["eva", "baseline:saliency"][k % 2]);
        let del: f64 = r[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&del));
    }

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&out).join("report.json")).unwrap())
            .unwrap();
    assert_eq!(json["summary"].as_array().unwrap().len(), 2);
    assert_eq!(json["provenance"]["grid"], 6);
    assert_eq!(json["provenance"]["images"], 5);

    assert_eq!(
        code(&[
            "benchmark",
            "--model",
            &m,
            "--data",
            &images,
            "--labels",
            &labels,
            "--method",
            "",
            "--out",
            &out
        ]),
        2
    );
    assert_eq!(
        code(&[
            "benchmark",
            "--model",
            &m,
            "--data",
            &images,
            "--labels",
            &labels,
            "--method",
            "targeted",
            "--out",
            &out
        ]),
        2
    );
}

#[test]
fn thread_cap_is_validated() {
    let (dir, m) = model();
    let out = path(&dir, "x");
    let args = explain(&m, &out, &["--grid", "4"]);
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_eva"))
            .args(&args)
            .env("EVA_THREADS", threads)
            .output()
            .unwrap()
            .status
            .code()
    };
    assert_eq!(run("1"), Some(0));
    assert_eq!(run("0"), Some(2));
    assert_eq!(run("many"), Some(2));
}

#[test]
fn train_refuses_to_overwrite() {
    let (_dir, m) = model();
    let args = [
        "train",
        "--data",
        &data("train-images-idx3-ubyte"),
        "--labels",
        &data("train-labels-idx1-ubyte"),
        "--arch",
        "mlp:4",
        "--epochs",
        "1",
        "--out",
        &m,
    ];
    assert_eq!(code(&args), 2);
    let mut forced = args.to_vec();
    forced.push("--overwrite");
    assert_eq!(code(&forced), 0);
    assert_eq!(
        code(&[
            "train",
            "--data",
            &data("train-images-idx3-ubyte"),
            "--labels",
            &data("train-labels-idx1-ubyte"),
            "--arch",
            "resnet",
            "--out",
            &m
        ]),
        2
    );
}

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eva_core::{
    linf_ball, load_idx, load_model, save_model, train_fixture, DatasetSlice, Layer, NetConfig,
    Network, Padding, PerturbBox, Tensor, TrainOptions,
};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/digits28")
}

pub fn train_set() -> DatasetSlice {
    let d = data_dir();
    load_idx(
        &d.join("train-images-idx3-ubyte"),
        &d.join("train-labels-idx1-ubyte"),
    )
    .unwrap()
}

pub fn test_set() -> DatasetSlice {
    let d = data_dir();
    load_idx(
        &d.join("test-images-idx3-ubyte"),
        &d.join("test-labels-idx1-ubyte"),
    )
    .unwrap()
}

pub const FIXTURE_OPTIONS: TrainOptions = TrainOptions {
    epochs: 30,
    lr: 0.05,
    seed: 7,
    batch_size: 16,
};

/// The 784-256-128-64-32-10 fixture, trained once and cached on disk.
pub fn mnist_mlp() -> &'static Network {
    static NET: OnceLock<Network> = OnceLock::new();
    NET.get_or_init(|| {
        let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
        let tag = format!(
            "mnist-mlp-e{}-s{}-b{}",
            FIXTURE_OPTIONS.epochs, FIXTURE_OPTIONS.seed, FIXTURE_OPTIONS.batch_size
        );
        let (m, b) = (
            dir.join(format!("{tag}.json")),
            dir.join(format!("{tag}.bin")),
        );
        if let Ok(net) = load_model(&m, &b) {
            return net;
        }
        let report =
            train_fixture(&NetConfig::mnist_mlp(), &train_set(), &FIXTURE_OPTIONS).unwrap();
        let _ = save_model(&report.network, &m, &b, true);
        report.network
    })
}

pub fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

pub fn dense(rows: usize, cols: usize, w: &[f64], b: &[f64]) -> Layer {
    Layer::Dense {
        weights: tensor(&[rows, cols], w),
        bias: tensor(&[rows], b),
    }
}

/// Single affine layer `z = W x + b` on a flat input.
pub fn linear_net(rows: usize, cols: usize, w: &[f64], b: &[f64]) -> Network {
    Network::new(vec![dense(rows, cols, w, b)], vec![cols]).unwrap()
}

/// Box `[x - eps, x + eps]` without clipping.
pub fn ball(x: &[f64], eps: f64) -> PerturbBox {
    linf_ball(&tensor(&[x.len()], x), eps, None).unwrap()
}

/// Every corner of the box; only sensible for small free dimension.
pub fn corners(b: &PerturbBox) -> Vec<Vec<f64>> {
    let free: Vec<usize> = b.free_coordinates().collect();
    assert!(
        free.len() <= 16,
        "too many free coordinates for enumeration"
    );
    let (c, lo, hi) = (b.center().data(), b.lo().data(), b.hi().data());
    (0..1usize << free.len())
        .map(|mask| {
            let mut x = c.to_vec();
            for (k, &i) in free.iter().enumerate() {
                x[i] += if mask >> k & 1 == 1 { hi[i] } else { lo[i] };
            }
            x
        })
        .collect()
}

/// Extrema of each logit over the box corners; exact for linear nets.
pub fn corner_extrema(net: &Network, b: &PerturbBox) -> (Vec<f64>, Vec<f64>) {
    let k = net.class_count();
    let mut lo = vec![f64::INFINITY; k];
    let mut hi = vec![f64::NEG_INFINITY; k];
    for x in corners(b) {
        let z = net.forward(&tensor(b.center().shape(), &x)).unwrap();
        for (j, &v) in z.data().iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    (lo, hi)
}

/// Exact `max_δ max_{c'≠c} f_{c'} - f_c` for a linear net: each difference
/// is itself linear, so its maximum sits at a corner.
pub fn linear_overlap(net: &Network, b: &PerturbBox, class: usize) -> f64 {
    corners(b)
        .iter()
        .map(|x| {
            let z = net.forward(&tensor(b.center().shape(), x)).unwrap();
            let z = z.data();
            (0..z.len())
                .filter(|&j| j != class)
                .map(|j| z[j] - z[class])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.random_range(-scale..scale))
        .collect::<Vec<_>>();
    tensor(shape, &data)
}

fn random_dense(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Layer {
    let scale = (3.0 / cols as f64).sqrt();
    Layer::Dense {
        weights: uniform_tensor(rng, &[rows, cols], scale),
        bias: uniform_tensor(rng, &[rows], 0.3),
    }
}

/// Small random network with at most four affine layers and 32 units per
/// layer. Half of them start with a convolution on a `[c, h, w]` input,
/// optionally followed by a max pool.
pub fn random_net(rng: &mut ChaCha8Rng) -> Network {
    let classes = rng.random_range(2..=4);
    if rng.random_bool(0.5) {
        let d = rng.random_range(2..=8);
        let hidden = rng.random_range(0..=3);
        let mut layers = Vec::new();
        let mut width = d;
        for _ in 0..hidden {
            let next = rng.random_range(2..=32);
            layers.push(random_dense(rng, next, width));
            layers.push(Layer::Relu);
            width = next;
        }
        layers.push(random_dense(rng, classes, width));
        return Network::new(layers, vec![d]).unwrap();
    }
    let c = rng.random_range(1..=2);
    let side = rng.random_range(4..=6);
    let out_c = rng.random_range(1..=2);
    let k = rng.random_range(2..=3);
    let padding = if rng.random_bool(0.5) {
        Padding::Same
    } else {
        Padding::Valid
    };
    let scale = (3.0 / (c * k * k) as f64).sqrt();
    let mut layers = vec![
        Layer::Conv2d {
            kernels: uniform_tensor(rng, &[out_c, c, k, k], scale),
            bias: uniform_tensor(rng, &[out_c], 0.3),
            stride: 1,
            padding,
        },
        Layer::Relu,
    ];
    if rng.random_bool(0.5) {
        layers.push(Layer::MaxPool2d {
            window: 2,
            stride: 2,
        });
    }
    layers.push(Layer::Flatten);
    let flat = Network::new(layers.clone(), vec![c, side, side])
        .unwrap()
        .class_count();
    let mut width = flat;
    if rng.random_bool(0.5) {
        let next = rng.random_range(2..=32);
        layers.push(random_dense(rng, next, width));
        layers.push(Layer::Relu);
        width = next;
    }
    layers.push(random_dense(rng, classes, width));
    Network::new(layers, vec![c, side, side]).unwrap()
}

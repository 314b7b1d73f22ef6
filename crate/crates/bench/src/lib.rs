//! Shared fixtures for the benchmarks.

use std::path::PathBuf;

use eva_core::{load_idx, DatasetSlice, NetConfig, Network, Tensor};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/digits28")
}

pub fn test_set() -> DatasetSlice {
    let d = data_dir();
    load_idx(
        &d.join("test-images-idx3-ubyte"),
        &d.join("test-labels-idx1-ubyte"),
    )
    .expect("digit fixture present")
}

/// The 784-256-128-64-32-10 MLP with freshly initialized weights.
pub fn mnist_mlp(seed: u64) -> Network {
    NetConfig::mnist_mlp().init(seed).expect("valid config")
}

/// Two 3×3 conv blocks and a linear head on 28×28 inputs.
pub fn small_cnn(seed: u64) -> Network {
    NetConfig::small_cnn(&[1, 28, 28], &[4, 8], 10)
        .init(seed)
        .expect("valid config")
}

/// Test image `i` of the digit fixture.
pub fn image(i: usize) -> Tensor {
    test_set().image(i).expect("index in range")
}

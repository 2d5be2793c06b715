#![allow(dead_code)]

use std::path::PathBuf;

use bgn::experiment::NetworkConfig;
use bgn::mnist::one_hot;
use bgn::nn::ActivationKind;
use bgn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INPUT: usize = 12;
pub const CLASSES: usize = 5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Random inputs and one-hot targets.
pub fn random_batch(rng: &mut ChaCha8Rng, batch: usize, features: usize, classes: usize) -> (Tensor, Tensor) {
    let x = random_tensor(rng, &[batch, features], 1.0);
    let labels: Vec<u8> = (0..batch).map(|_| rng.gen_range(0..classes as u8)).collect();
    (x, one_hot(&labels, classes))
}

pub fn small_config(
    depth: usize,
    width: usize,
    activation: ActivationKind,
    bn: bool,
    bgn: bool,
    seed: u64,
) -> NetworkConfig {
    NetworkConfig {
        depth,
        width,
        activation,
        use_bn: bn,
        use_bgn: bgn,
        seed,
        input_dim: INPUT,
        classes: CLASSES,
        ..NetworkConfig::default()
    }
}

pub fn cosine(a: &Tensor, b: &Tensor) -> f64 {
    a.dot(b).unwrap() / (a.l2_norm() * b.l2_norm())
}

/// Directory holding the MNIST IDX files.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("BGN_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

/// A learnable problem: the label is the index of the largest of the first
/// `CLASSES` features.
pub fn separable_dataset(rng: &mut ChaCha8Rng, n: usize) -> bgn::mnist::Dataset {
    let x = random_tensor(rng, &[n, INPUT], 1.0);
    let labels = x
        .data()
        .chunks(INPUT)
        .map(|row| {
            let head = &row[..CLASSES];
            (0..CLASSES).max_by(|&a, &b| head[a].total_cmp(&head[b])).unwrap() as u8
        })
        .collect();
    bgn::mnist::Dataset::with_classes(x, labels, CLASSES).unwrap()
}

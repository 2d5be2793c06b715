mod common;

use bgn::experiment::{
    build_network, read_run_records, sweep, train, train_step, write_run_records, NetworkConfig,
    RunStatus, SweepPlan, TrainOptions,
};
use bgn::nn::{ActivationKind, Mode};
use bgn::optim::{Adam, AdamConfig, Optimizer};
use bgn::Tensor;
use common::*;

fn plan(lrs: Vec<f64>, explore: usize, confirm: usize) -> SweepPlan {
    SweepPlan {
        lrs,
        explore_repeats: explore,
        confirm_repeats: confirm,
        epochs: 2,
        batch_size: 16,
        base_seed: 0,
        workers: 1,
    }
}

#[test]
fn small_network_learns_a_separable_problem() {
    let mut r = rng(1);
    let train_set = separable_dataset(&mut r, 600);
    let test_set = separable_dataset(&mut r, 200);
    for bgn in [false, true] {
        let mut net = build_network(&small_config(2, 32, ActivationKind::Tanh, false, bgn, 3)).unwrap();
        let rec = train(&mut net, &train_set, &test_set, &TrainOptions::new(1e-2, 15, 32, 3)).unwrap();
        assert_eq!(rec.status, RunStatus::Ok);
        assert!(rec.test_accuracy > 0.85, "bgn={bgn}: {}", rec.test_accuracy);
        assert!(rec.train_loss < 0.5);
    }
}

#[test]
fn zero_learning_rate_leaves_weights_untouched() {
    let mut r = rng(2);
    let data = separable_dataset(&mut r, 64);
    let cfg = small_config(3, 8, ActivationKind::Relu, true, true, 1);
    let mut net = build_network(&cfg).unwrap();
    let initial = build_network(&cfg).unwrap();
    train(&mut net, &data, &data, &TrainOptions::new(0.0, 2, 16, 1)).unwrap();
    assert_eq!(net.parameters(), initial.parameters());
}

#[test]
fn uniform_logits_give_log_classes_loss() {
    let cfg = NetworkConfig {
        depth: 1,
        width: 4,
        activation: ActivationKind::Identity,
        ..small_config(1, 4, ActivationKind::Identity, false, false, 0)
    };
    let mut net = build_network(&cfg).unwrap();
    for p in net.parameters_mut() {
        *p = Tensor::zeros(p.shape());
    }
    let (x, y) = random_batch(&mut rng(3), 8, INPUT, CLASSES);
    let mut opt = Optimizer::Adam(Adam::new(AdamConfig::with_lr(1e-3)));
    let loss = train_step(&mut net, &mut opt, &x, &y).unwrap();
    assert!((loss - (CLASSES as f64).ln()).abs() < 1e-12);
}

#[test]
fn identity_forward_is_bit_exact() {
    for seed in 0..12 {
        let act = [ActivationKind::Relu, ActivationKind::Sigmoid, ActivationKind::Tanh][seed as usize % 3];
        let cfg = small_config(1 + seed as usize % 6, 8, act, seed % 2 == 0, false, seed);
        let plain = build_network(&cfg).unwrap();
        let normed = build_network(&NetworkConfig { use_bgn: true, ..cfg }).unwrap();
        let (x, _) = random_batch(&mut rng(seed), 5, INPUT, CLASSES);
        for mode in [Mode::Train, Mode::Eval] {
            let a = plain.logits(&x, mode).unwrap();
            let b = normed.logits(&x, mode).unwrap();
            assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}

#[test]
fn training_is_deterministic() {
    let mut r = rng(4);
    let data = separable_dataset(&mut r, 100);
    let cfg = small_config(3, 8, ActivationKind::Sigmoid, true, true, 11);
    let run = || {
        let mut net = build_network(&cfg).unwrap();
        let rec = train(&mut net, &data, &data, &TrainOptions::new(3e-3, 2, 16, 11)).unwrap();
        (net, rec)
    };
    let (n1, r1) = run();
    let (n2, r2) = run();
    assert!(r1.same_outcome(&r2));
    assert_eq!(n1, n2);
}

#[test]
fn overflowing_learning_rate_is_recorded_as_divergence() {
    let mut r = rng(5);
    let data = separable_dataset(&mut r, 64);
    let mut net = build_network(&small_config(3, 8, ActivationKind::Relu, false, false, 0)).unwrap();
    let rec = train(&mut net, &data, &data, &TrainOptions::new(1e300, 3, 16, 0)).unwrap();
    assert_eq!(rec.status, RunStatus::Diverged);
    assert!((0.0..=1.0).contains(&rec.test_accuracy));
}

#[test]
fn mismatched_class_count_is_rejected() {
    let data = bgn::mnist::Dataset::new(Tensor::zeros([4, INPUT]), vec![0, 1, 2, 3]).unwrap();
    let mut net = build_network(&small_config(1, 4, ActivationKind::Relu, false, false, 0)).unwrap();
    assert!(train(&mut net, &data, &data, &TrainOptions::new(1e-3, 1, 2, 0)).is_err());
}

#[test]
fn single_run_sweep_equals_the_run() {
    let mut r = rng(6);
    let (train_set, test_set) = (separable_dataset(&mut r, 80), separable_dataset(&mut r, 40));
    let cfg = small_config(2, 8, ActivationKind::Tanh, false, true, 0);
    let result = sweep(&cfg, &plan(vec![1e-2], 1, 0), &train_set, &test_set).unwrap();
    assert_eq!(result.records.len(), 1);
    let summary = result.summary.unwrap();
    assert_eq!(summary.n, 1);
    assert_eq!(summary.mean, result.records[0].test_accuracy);
    assert_eq!(summary.std, None);

    let mut net = build_network(&cfg).unwrap();
    let direct = train(&mut net, &train_set, &test_set, &TrainOptions::new(1e-2, 2, 16, 0)).unwrap();
    assert!(direct.same_outcome(&result.records[0]));
}

#[test]
fn sweep_confirms_the_best_learning_rate() {
    let mut r = rng(7);
    let (train_set, test_set) = (separable_dataset(&mut r, 80), separable_dataset(&mut r, 40));
    let cfg = small_config(2, 8, ActivationKind::Tanh, false, false, 0);
    let result = sweep(&cfg, &plan(vec![1e-6, 3e-2], 2, 3), &train_set, &test_set).unwrap();
    assert_eq!(result.records.len(), 2 * 2 + 3);
    let winner = result.winner.unwrap();
    assert_eq!(winner, 3e-2);
    assert_eq!(result.summary.unwrap().n, 5);
    assert!(!result.degenerate);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.csv");
    write_run_records(&path, &result.records).unwrap();
    let back = read_run_records(&path).unwrap();
    assert_eq!(back.len(), result.records.len());
    for rec in &result.records {
        assert!(back.iter().any(|b| b.same_outcome(rec)));
    }
}

#[test]
fn all_diverged_sweep_is_degenerate() {
    let mut r = rng(8);
    let data = separable_dataset(&mut r, 48);
    let cfg = small_config(3, 8, ActivationKind::Relu, false, false, 0);
    let result = sweep(&cfg, &plan(vec![1e300], 2, 3), &data, &data).unwrap();
    assert!(result.degenerate);
    assert_eq!(result.winner, None);
    assert_eq!(result.summary, None);
    assert_eq!(result.records.len(), 2);
}

#[test]
fn parallel_sweep_matches_serial() {
    let mut r = rng(9);
    let data = separable_dataset(&mut r, 48);
    let cfg = small_config(2, 8, ActivationKind::Sigmoid, false, true, 0);
    let serial = sweep(&cfg, &plan(vec![1e-3, 1e-2], 2, 1), &data, &data).unwrap();
    let parallel = sweep(&cfg, &SweepPlan { workers: 3, ..plan(vec![1e-3, 1e-2], 2, 1) }, &data, &data).unwrap();
    assert_eq!(serial.winner, parallel.winner);
    assert!(serial.records.iter().zip(&parallel.records).all(|(a, b)| a.same_outcome(b)));
}

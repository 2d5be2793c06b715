use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::network::Network;
use crate::mnist::{BatchIterator, Dataset};
use crate::nn::batchnorm::Mode;
use crate::nn::ActivationKind;
use crate::optim::{Adam, AdamConfig, Optimizer};
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_EPOCHS: usize = 20;
const EVAL_BATCH: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    /// Plain gradient descent, used as an oracle in tests.
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Shuffling seed.
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl TrainOptions {
    pub fn new(lr: f64, epochs: usize, batch_size: usize, seed: u64) -> Self {
        TrainOptions {
            lr,
            epochs,
            batch_size,
            seed,
            optimizer: OptimizerKind::Adam,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Diverged,
}

/// One training run, as persisted in the run-records CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub activation: ActivationKind,
    pub bn: bool,
    pub bgn: bool,
    pub depth: usize,
    pub width: usize,
    pub lr: f64,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub status: RunStatus,
    pub test_accuracy: f64,
    pub train_loss: f64,
    pub wall_time_s: f64,
}

impl RunRecord {
    /// Equality ignoring the wall-clock time; floats compared bitwise.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        self.run_id == other.run_id
            && self.activation == other.activation
            && (self.bn, self.bgn, self.depth, self.width)
                == (other.bn, other.bgn, other.depth, other.width)
            && (self.seed, self.epochs, self.batch_size, self.status)
                == (other.seed, other.epochs, other.batch_size, other.status)
            && self.lr.to_bits() == other.lr.to_bits()
            && self.test_accuracy.to_bits() == other.test_accuracy.to_bits()
            && self.train_loss.to_bits() == other.train_loss.to_bits()
    }
}

pub fn run_id(network: &Network, opts: &TrainOptions) -> String {
    format!(
        "{}-lr{:e}-s{}",
        network.config().label(),
        opts.lr,
        network.config().seed
    )
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Classification accuracy in eval mode.
pub fn evaluate(network: &Network, dataset: &Dataset) -> Result<f64> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::Usage("cannot evaluate on an empty dataset".into()));
    }
    let classes = network.config().classes;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let batch = dataset.gather(chunk)?;
        let logits = network.logits(&batch.x, Mode::Eval)?;
        for (row, &label) in logits.data().chunks_exact(classes).zip(&batch.labels) {
            if argmax(row) == usize::from(label) {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / n as f64)
}

/// One optimization step on a batch. Returns the batch loss.
pub fn train_step(
    network: &mut Network,
    optimizer: &mut Optimizer,
    x: &Tensor,
    y: &Tensor,
) -> Result<f64> {
    let mut tape = Tape::new();
    let pass = network.forward(&mut tape, x, Mode::Train)?;
    let loss = tape.softmax_cross_entropy(pass.logits, y)?;
    let loss_value = tape.value(loss)?.item()?;
    if !loss_value.is_finite() {
        return Err(Error::Numeric {
            op: "loss",
            layer: None,
        });
    }
    let grads = tape.backward(loss)?;
    let grad_list: Vec<&Tensor> = grads.params().values().collect();
    optimizer.step(&mut network.parameters_mut(), &grad_list)?;
    network.apply_bn_stats(&pass.bn_stats)?;
    Ok(loss_value)
}

/// Trains with mini-batch softmax cross-entropy.
///
/// Test accuracy is measured before training and after every epoch. A
/// non-finite loss, gradient or weight stops the run; it is then marked
/// [`RunStatus::Diverged`] and keeps the last accuracy measured on finite
/// weights.
pub fn train(
    network: &mut Network,
    train_set: &Dataset,
    test_set: &Dataset,
    opts: &TrainOptions,
) -> Result<RunRecord> {
    if train_set.is_empty() {
        return Err(Error::Usage("empty training set".into()));
    }
    let classes = network.config().classes;
    if train_set.classes() != classes || test_set.classes() != classes {
        return Err(Error::Usage(format!(
            "network has {classes} classes, datasets have {} and {}",
            train_set.classes(),
            test_set.classes()
        )));
    }
    let started = Instant::now();
    let mut optimizer = match opts.optimizer {
        OptimizerKind::Adam => Optimizer::Adam(Adam::new(AdamConfig::with_lr(opts.lr))),
        OptimizerKind::Sgd => Optimizer::Sgd { lr: opts.lr },
    };
    let mut batches = BatchIterator::new(train_set, opts.batch_size, opts.seed)?;
    let use_bn = network.config().use_bn;
    let id = run_id(network, opts);

    let mut accuracy = evaluate(network, test_set)?;
    let mut train_loss = f64::NAN;
    let mut status = RunStatus::Ok;

    'epochs: for epoch in 0..opts.epochs {
        let mut total = 0.0;
        let mut seen = 0usize;
        for idx in batches.next_epoch_indices() {
            if use_bn && idx.len() < 2 {
                // Train-mode BN is undefined on a single sample.
                continue;
            }
            let batch = train_set.gather(&idx)?;
            match train_step(network, &mut optimizer, &batch.x, &batch.y) {
                Ok(loss) => {
                    total += loss * idx.len() as f64;
                    seen += idx.len();
                }
                Err(Error::Numeric { op, layer }) => {
                    log::warn!("{id}: diverged in epoch {} ({op}, layer {layer:?})", epoch + 1);
                    status = RunStatus::Diverged;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        if !network.is_finite() {
            log::warn!("{id}: non-finite weights after epoch {}", epoch + 1);
            status = RunStatus::Diverged;
            break;
        }
        train_loss = total / seen.max(1) as f64;
        accuracy = evaluate(network, test_set)?;
        log::info!(
            "{id}: epoch {}/{} loss {train_loss:.5} test accuracy {accuracy:.4}",
            epoch + 1,
            opts.epochs
        );
    }

    let cfg = network.config();
    Ok(RunRecord {
        run_id: id,
        activation: cfg.activation,
        bn: cfg.use_bn,
        bgn: cfg.use_bgn,
        depth: cfg.depth,
        width: cfg.width,
        lr: opts.lr,
        seed: cfg.seed,
        epochs: opts.epochs,
        batch_size: opts.batch_size,
        status,
        test_accuracy: accuracy,
        train_loss,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

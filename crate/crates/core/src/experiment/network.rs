//! Declarative deep dense networks.
//!
//! Layout: input → [Dense → (BN?) → (BGN?) → activation] × depth → Dense →
//! softmax cross-entropy. With both BN and BGN enabled the default order is
//! BN then BGN; [`BnBgnOrder::BgnThenBn`] swaps them. The output layer never
//! gets BN or BGN.

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::batchnorm::{BatchNormLayer, BatchStats, Mode};
use crate::nn::{ActivationKind, DenseLayer, KappaPolicy};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BnBgnOrder {
    BnThenBgn,
    BgnThenBn,
}

impl FromStr for BnBgnOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bn-then-bgn" => Ok(BnBgnOrder::BnThenBgn),
            "bgn-then-bn" => Ok(BnBgnOrder::BgnThenBn),
            _ => Err(Error::Config(format!("unknown BN/BGN order {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    GlorotUniform,
    HeUniform,
}

impl InitScheme {
    /// He for ReLU, Glorot otherwise.
    pub fn default_for(activation: ActivationKind) -> Self {
        match activation {
            ActivationKind::Relu => InitScheme::HeUniform,
            _ => InitScheme::GlorotUniform,
        }
    }

    fn limit(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitScheme::GlorotUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            InitScheme::HeUniform => (6.0 / fan_in as f64).sqrt(),
        }
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glorot-uniform" | "glorot" => Ok(InitScheme::GlorotUniform),
            "he-uniform" | "he" => Ok(InitScheme::HeUniform),
            _ => Err(Error::Config(format!("unknown init scheme {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of hidden layers.
    pub depth: usize,
    pub width: usize,
    pub activation: ActivationKind,
    pub use_bn: bool,
    pub use_bgn: bool,
    pub kappa: KappaPolicy,
    pub order: BnBgnOrder,
    /// `None` picks [`InitScheme::default_for`] the activation.
    pub init: Option<InitScheme>,
    pub seed: u64,
    pub input_dim: usize,
    pub classes: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            depth: 30,
            width: 64,
            activation: ActivationKind::Relu,
            use_bn: false,
            use_bgn: false,
            kappa: KappaPolicy::SqrtD,
            order: BnBgnOrder::BnThenBgn,
            init: None,
            seed: 0,
            input_dim: 784,
            classes: 10,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "depth and width must be at least 1, got depth {} width {}",
                self.depth, self.width
            )));
        }
        if self.input_dim == 0 || self.classes < 2 {
            return Err(Error::Config("need input_dim ≥ 1 and at least 2 classes".into()));
        }
        self.kappa.validate()
    }

    pub fn init_scheme(&self) -> InitScheme {
        self.init.unwrap_or_else(|| InitScheme::default_for(self.activation))
    }

    /// Total trainable scalars, BN γ/β included.
    pub fn parameter_count(&self) -> usize {
        let first = self.input_dim * self.width + self.width;
        let hidden = (self.depth - 1) * (self.width * self.width + self.width);
        let bn = if self.use_bn { 2 * self.width * self.depth } else { 0 };
        first + hidden + bn + self.width * self.classes + self.classes
    }

    /// Short label: `relu-bn0-bgn1-d30-w64`.
    pub fn label(&self) -> String {
        format!(
            "{}-bn{}-bgn{}-d{}-w{}",
            self.activation,
            u8::from(self.use_bn),
            u8::from(self.use_bgn),
            self.depth,
            self.width
        )
    }
}

impl fmt::Display for NetworkConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    pub dense: DenseLayer,
    pub bn: Option<BatchNormLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    hidden: Vec<HiddenLayer>,
    output: DenseLayer,
}

/// Handles into one hidden layer's part of a recorded forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LayerTap {
    /// Layer index, 1-based from the input side.
    pub layer: usize,
    /// Dense output `z`.
    pub z: Var,
    /// The tensor at the BGN position: the BGN node's input when BGN is on,
    /// the same position otherwise. Its gradient is the layer's `δ`.
    pub slot: Var,
    pub bgn: Option<Var>,
    /// Tape parameter id of the layer's weight matrix.
    pub weight_id: usize,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Var,
    pub layers: Vec<LayerTap>,
    /// Train-mode batch statistics per hidden layer, for running averages.
    pub bn_stats: Vec<Option<BatchStats>>,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, scheme: InitScheme) -> Tensor {
    let limit = scheme.limit(fan_in, fan_out);
    let dist = Uniform::new_inclusive(-limit, limit);
    let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Tensor::new(vec![fan_out, fan_in], data).expect("positive extents")
}

/// Builds and initializes a network. Weights depend only on the seed, the
/// widths and the init scheme, so BN/BGN twins share identical weights.
pub fn build_network(config: &NetworkConfig) -> Result<Network> {
    config.validate()?;
    let scheme = config.init_scheme();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut hidden = Vec::with_capacity(config.depth);
    let mut fan_in = config.input_dim;
    for _ in 0..config.depth {
        let weight = uniform_matrix(&mut rng, fan_in, config.width, scheme);
        hidden.push(HiddenLayer {
            dense: DenseLayer::new(weight, Tensor::zeros(vec![config.width]))?,
            bn: config.use_bn.then(|| BatchNormLayer::new(config.width)),
        });
        fan_in = config.width;
    }
    let weight = uniform_matrix(&mut rng, fan_in, config.classes, scheme);
    let output = DenseLayer::new(weight, Tensor::zeros(vec![config.classes]))?;
    Ok(Network {
        config: config.clone(),
        hidden,
        output,
    })
}

impl Network {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn hidden(&self) -> &[HiddenLayer] {
        &self.hidden
    }

    pub fn hidden_mut(&mut self) -> &mut [HiddenLayer] {
        &mut self.hidden
    }

    pub fn output(&self) -> &DenseLayer {
        &self.output
    }

    pub fn output_mut(&mut self) -> &mut DenseLayer {
        &mut self.output
    }

    /// Trainable tensors in tape-id order: per hidden layer `W, b, [γ, β]`,
    /// then the output `W, b`.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for h in &self.hidden {
            out.push(&h.dense.weight);
            out.push(&h.dense.bias);
            if let Some(bn) = &h.bn {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out.push(&self.output.weight);
        out.push(&self.output.bias);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for h in &mut self.hidden {
            out.push(&mut h.dense.weight);
            out.push(&mut h.dense.bias);
            if let Some(bn) = &mut h.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Copies every trainable tensor and BN running statistic from `other`,
    /// which must have the same architecture.
    pub fn copy_weights_from(&mut self, other: &Network) -> Result<()> {
        let src = other.parameters();
        let dst = self.parameters_mut();
        if src.len() != dst.len() {
            return Err(Error::Usage("architecture mismatch when copying weights".into()));
        }
        for (d, s) in dst.into_iter().zip(src) {
            if d.shape() != s.shape() {
                return Err(Error::dim("copy_weights_from", d.shape(), s.shape()));
            }
            *d = s.clone();
        }
        for (d, s) in self.hidden.iter_mut().zip(&other.hidden) {
            if let (Some(db), Some(sb)) = (&mut d.bn, &s.bn) {
                db.running_mean = sb.running_mean.clone();
                db.running_var = sb.running_var.clone();
            }
        }
        Ok(())
    }

    /// Hidden-layer weight matrices, input side first.
    pub fn hidden_weights(&self) -> Vec<Tensor> {
        self.hidden.iter().map(|h| h.dense.weight.clone()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|t| t.is_finite())
    }

    /// Records a forward pass for a batch `x` (batch × input_dim).
    ///
    /// Train mode uses batch statistics in BN layers and reports them in
    /// [`ForwardPass::bn_stats`]; the network itself is never mutated.
    pub fn forward(&self, tape: &mut Tape, x: &Tensor, mode: Mode) -> Result<ForwardPass> {
        let (_, features) = x.dims2()?;
        if features != self.config.input_dim {
            return Err(Error::dim("Network::forward", x.shape(), &[self.config.input_dim]));
        }
        let mut h = tape.leaf(x.clone());
        let mut layers = Vec::with_capacity(self.hidden.len());
        let mut bn_stats = Vec::with_capacity(self.hidden.len());
        let mut pid = 0;
        for (k, layer) in self.hidden.iter().enumerate() {
            tape.set_layer(Some(k + 1));
            let w = tape.parameter(pid, layer.dense.weight.clone());
            let b = tape.parameter(pid + 1, layer.dense.bias.clone());
            let weight_id = pid;
            pid += 2;
            let z = tape.dense(h, w, b)?;

            let mut cur = z;
            let mut slot = z;
            let mut bgn = None;
            let mut stats = None;
            let bgn_first = self.config.order == BnBgnOrder::BgnThenBn;
            if self.config.use_bgn && bgn_first {
                let out = tape.bgn(cur, self.config.kappa)?;
                bgn = Some(out);
                cur = out;
            }
            if let Some(bn) = &layer.bn {
                let gamma = tape.parameter(pid, bn.gamma.clone());
                let beta = tape.parameter(pid + 1, bn.beta.clone());
                pid += 2;
                cur = match mode {
                    Mode::Train => {
                        let (out, s) = tape.batch_norm(cur, gamma, beta, bn.epsilon)?;
                        stats = Some(s);
                        out
                    }
                    Mode::Eval => tape.batch_norm_eval(
                        cur,
                        gamma,
                        beta,
                        &bn.running_mean,
                        &bn.running_var,
                        bn.epsilon,
                    )?,
                };
                if !bgn_first {
                    slot = cur;
                }
            }
            if self.config.use_bgn && !bgn_first {
                let out = tape.bgn(cur, self.config.kappa)?;
                bgn = Some(out);
                cur = out;
            }
            h = tape.activation(cur, self.config.activation)?;
            layers.push(LayerTap {
                layer: k + 1,
                z,
                slot,
                bgn,
                weight_id,
            });
            bn_stats.push(stats);
        }
        tape.set_layer(Some(self.hidden.len() + 1));
        let w = tape.parameter(pid, self.output.weight.clone());
        let b = tape.parameter(pid + 1, self.output.bias.clone());
        let logits = tape.dense(h, w, b)?;
        tape.set_layer(None);
        Ok(ForwardPass {
            logits,
            layers,
            bn_stats,
        })
    }

    /// Output logits for a batch.
    pub fn logits(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, x, mode)?;
        Ok(tape.value(pass.logits)?.clone())
    }

    /// Folds train-mode batch statistics into the BN running averages.
    pub fn apply_bn_stats(&mut self, stats: &[Option<BatchStats>]) -> Result<()> {
        for (layer, s) in self.hidden.iter_mut().zip(stats) {
            if let (Some(bn), Some(s)) = (&mut layer.bn, s) {
                bn.update_running(s)?;
            }
        }
        Ok(())
    }
}

//! Reverse-mode automatic differentiation over an eagerly evaluated tape.
//!
//! Every operation computes its value immediately and appends a node that
//! remembers its inputs and whatever it needs for its backward rule. Node
//! order is recording order, which is a topological order, so
//! [`Tape::backward`] is a single reverse sweep.
//!
//! Most nodes implement the true derivative of their forward map. The BGN
//! node does not: it is the identity going forward and rescales the
//! incoming gradient to a fixed norm going backward.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::nn::activation::{activation_apply, ActivationKind};
use crate::nn::batchnorm::{batchnorm_backward, normalize_eval, normalize_train, BatchNormCache, BatchStats};
use crate::nn::bgn::{normalize_gradient, BgnNode, KappaPolicy};
use crate::nn::loss::{softmax_cross_entropy, softmax_cross_entropy_grad};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Parameter,
    MatMul,
    AddBias,
    Add,
    Scale,
    Sum,
    Activation,
    BatchNorm,
    Bgn,
    Loss,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Parameter(usize),
    MatMul {
        a: usize,
        b: usize,
        transpose_b: bool,
    },
    AddBias {
        input: usize,
        bias: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Scale {
        input: usize,
        factor: f64,
    },
    Sum {
        input: usize,
    },
    Activation {
        input: usize,
        kind: ActivationKind,
    },
    BatchNormTrain {
        input: usize,
        gamma: usize,
        beta: usize,
        cache: BatchNormCache,
    },
    BatchNormEval {
        input: usize,
        gamma: usize,
        beta: usize,
        inv_std: Vec<f64>,
        normalized: Tensor,
    },
    Bgn {
        input: usize,
        node: BgnNode,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        targets: Tensor,
        probs: Tensor,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Parameter(_) => OpKind::Parameter,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::AddBias { .. } => OpKind::AddBias,
            Op::Add { .. } => OpKind::Add,
            Op::Scale { .. } => OpKind::Scale,
            Op::Sum { .. } => OpKind::Sum,
            Op::Activation { .. } => OpKind::Activation,
            Op::BatchNormTrain { .. } | Op::BatchNormEval { .. } => OpKind::BatchNorm,
            Op::Bgn { .. } => OpKind::Bgn,
            Op::SoftmaxCrossEntropy { .. } => OpKind::Loss,
        }
    }

    fn name(&self) -> &'static str {
        match self.kind() {
            OpKind::Leaf => "leaf",
            OpKind::Parameter => "parameter",
            OpKind::MatMul => "matmul",
            OpKind::AddBias => "add-bias",
            OpKind::Add => "add",
            OpKind::Scale => "scale",
            OpKind::Sum => "sum",
            OpKind::Activation => "activation",
            OpKind::BatchNorm => "batchnorm",
            OpKind::Bgn => "bgn",
            OpKind::Loss => "loss",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    layer: Option<usize>,
    requires_grad: bool,
}

/// What a BGN node did during one backward sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BgnTrace {
    pub node: Var,
    pub layer: Option<usize>,
    pub kappa: f64,
    /// `‖g‖` of the gradient arriving at the node.
    pub incoming_norm: f64,
    /// Norm of the gradient the node sent on; `κ` unless guarded.
    pub outgoing_norm: f64,
    /// Norm factor `n = ‖g‖/κ`.
    pub factor: f64,
    /// True when the gradient was at or below the zero guard and passed through.
    pub guarded: bool,
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    nodes: Vec<Option<Tensor>>,
    params: BTreeMap<usize, Tensor>,
    bgn: Vec<BgnTrace>,
}

impl Gradients {
    /// Gradient of the loss with respect to a recorded value, if the sweep
    /// reached it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.nodes.get(v.index).and_then(Option::as_ref)
    }

    pub fn param(&self, id: usize) -> Option<&Tensor> {
        self.params.get(&id)
    }

    /// Parameter gradients keyed by parameter id.
    pub fn params(&self) -> &BTreeMap<usize, Tensor> {
        &self.params
    }

    /// One entry per BGN node reached, in backward order.
    pub fn bgn_trace(&self) -> &[BgnTrace] {
        &self.bgn
    }
}

/// A recorded forward computation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    layer: Option<usize>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            layer: None,
        }
    }

    /// Tags subsequently recorded nodes with a layer index, used when
    /// reporting non-finite gradients.
    pub fn set_layer(&mut self, layer: Option<usize>) {
        self.layer = layer;
    }

    /// Number of recorded operations, leaves and parameters excluded.
    pub fn node_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf | Op::Parameter(_)))
            .count()
    }

    pub fn contains_bgn(&self) -> bool {
        self.nodes.iter().any(|n| matches!(n.op, Op::Bgn { .. }))
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        self.check(v)?;
        Ok(&self.nodes[v.index].value)
    }

    pub fn op_kind(&self, v: Var) -> Result<OpKind> {
        self.check(v)?;
        Ok(self.nodes[v.index].op.kind())
    }

    /// Constant input. No gradient is computed for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_unchecked(Op::Leaf, value, false)
    }

    /// Trainable input identified by `id`; its gradient lands in
    /// [`Gradients::param`].
    pub fn parameter(&mut self, id: usize, value: Tensor) -> Var {
        self.push_unchecked(Op::Parameter(id), value, true)
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            op,
            value,
            layer: self.layer,
            requires_grad,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    fn record(&mut self, op: Op, inputs: &[usize], value: Tensor) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.push_unchecked(op, value, requires_grad)
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(Error::Usage(format!(
                "value from tape {} used on tape {}",
                v.tape, self.id
            )));
        }
        if v.index >= self.nodes.len() {
            return Err(Error::Usage(format!("unknown node {}", v.index)));
        }
        Ok(v.index)
    }

    /// `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        Ok(self.record(
            Op::MatMul {
                a: ia,
                b: ib,
                transpose_b: false,
            },
            &[ia, ib],
            value,
        ))
    }

    /// `a · bᵀ`, the dense-layer product `x·Wᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = self.nodes[ia].value.matmul_t(&self.nodes[ib].value)?;
        Ok(self.record(
            Op::MatMul {
                a: ia,
                b: ib,
                transpose_b: true,
            },
            &[ia, ib],
            value,
        ))
    }

    /// Adds a rank-1 bias to every row.
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (ii, ib) = (self.check(input)?, self.check(bias)?);
        let value = self.nodes[ii].value.add_row(&self.nodes[ib].value)?;
        Ok(self.record(Op::AddBias { input: ii, bias: ib }, &[ii, ib], value))
    }

    /// Dense layer `x·Wᵀ + b`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let z = self.matmul_t(x, weight)?;
        self.add_bias(z, bias)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = self.nodes[ia].value.add(&self.nodes[ib].value)?;
        Ok(self.record(Op::Add { a: ia, b: ib }, &[ia, ib], value))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let ii = self.check(input)?;
        let value = self.nodes[ii].value.scale(factor);
        Ok(self.record(Op::Scale { input: ii, factor }, &[ii], value))
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let ii = self.check(input)?;
        let value = Tensor::scalar(self.nodes[ii].value.sum_all());
        Ok(self.record(Op::Sum { input: ii }, &[ii], value))
    }

    pub fn activation(&mut self, input: Var, kind: ActivationKind) -> Result<Var> {
        let ii = self.check(input)?;
        let value = activation_apply(kind, &self.nodes[ii].value);
        Ok(self.record(Op::Activation { input: ii, kind }, &[ii], value))
    }

    /// Train-mode batch normalization. Returns the batch statistics so the
    /// caller can update running averages.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        epsilon: f64,
    ) -> Result<(Var, BatchStats)> {
        let (ii, ig, ib) = (self.check(input)?, self.check(gamma)?, self.check(beta)?);
        let (value, cache) = normalize_train(
            &self.nodes[ii].value,
            &self.nodes[ig].value,
            &self.nodes[ib].value,
            epsilon,
        )?;
        let stats = cache.stats.clone();
        let v = self.record(
            Op::BatchNormTrain {
                input: ii,
                gamma: ig,
                beta: ib,
                cache,
            },
            &[ii, ig, ib],
            value,
        );
        Ok((v, stats))
    }

    /// Eval-mode batch normalization with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &Tensor,
        var: &Tensor,
        epsilon: f64,
    ) -> Result<Var> {
        let (ii, ig, ib) = (self.check(input)?, self.check(gamma)?, self.check(beta)?);
        let (value, normalized) = normalize_eval(
            &self.nodes[ii].value,
            &self.nodes[ig].value,
            &self.nodes[ib].value,
            mean,
            var,
            epsilon,
        )?;
        let inv_std = var.data().iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
        Ok(self.record(
            Op::BatchNormEval {
                input: ii,
                gamma: ig,
                beta: ib,
                inv_std,
                normalized,
            },
            &[ii, ig, ib],
            value,
        ))
    }

    /// Backward gradient normalization node.
    pub fn bgn(&mut self, input: Var, kappa: KappaPolicy) -> Result<Var> {
        let ii = self.check(input)?;
        let node = BgnNode::for_shape(self.nodes[ii].value.shape(), kappa)?;
        self.bgn_node(input, node)
    }

    pub fn bgn_node(&mut self, input: Var, node: BgnNode) -> Result<Var> {
        let ii = self.check(input)?;
        let value = crate::nn::bgn::bgn_forward(&node, &self.nodes[ii].value);
        Ok(self.record(Op::Bgn { input: ii, node }, &[ii], value))
    }

    /// Mean softmax cross-entropy against one-hot `targets`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let il = self.check(logits)?;
        let (loss, probs) = softmax_cross_entropy(&self.nodes[il].value, targets)?;
        Ok(self.record(
            Op::SoftmaxCrossEntropy {
                logits: il,
                targets: targets.clone(),
                probs,
            },
            &[il],
            Tensor::scalar(loss),
        ))
    }

    /// Sweeps the tape in reverse from a scalar `loss`.
    ///
    /// Parameter gradients start at zero and accumulate by addition, so a
    /// parameter that does not influence the loss gets an exact zero tensor.
    /// A non-finite gradient aborts the sweep with [`Error::Numeric`] naming
    /// the layer of the node that produced it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.check(loss)?;
        if self.nodes[root].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root] = Some(Tensor::full(self.nodes[root].value.shape().to_vec(), 1.0));
        let mut bgn = Vec::new();

        for idx in (0..=root).rev() {
            let (before, rest) = grads.split_at_mut(idx);
            let Some(g) = rest[0].as_ref() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let mut emit = |target: usize, grad: Tensor| -> Result<()> {
                if !self.nodes[target].requires_grad {
                    return Ok(());
                }
                if !grad.is_finite() {
                    return Err(Error::Numeric {
                        op: node.op.name(),
                        layer: node.layer,
                    });
                }
                match &mut before[target] {
                    Some(acc) => acc.add_assign(&grad),
                    slot => {
                        *slot = Some(grad);
                        Ok(())
                    }
                }
            };
            let wants = |i: usize| self.nodes[i].requires_grad;
            let val = |i: usize| &self.nodes[i].value;

            match &node.op {
                Op::Leaf | Op::Parameter(_) => {}
                Op::MatMul { a, b, transpose_b } => {
                    if wants(*a) {
                        let ga = if *transpose_b { g.matmul(val(*b))? } else { g.matmul_t(val(*b))? };
                        emit(*a, ga)?;
                    }
                    if wants(*b) {
                        let gb = if *transpose_b { g.t_matmul(val(*a))? } else { val(*a).t_matmul(g)? };
                        emit(*b, gb)?;
                    }
                }
                Op::AddBias { input, bias } => {
                    if wants(*bias) {
                        emit(*bias, g.sum_rows()?)?;
                    }
                    emit(*input, g.clone())?;
                }
                Op::Add { a, b } => {
                    emit(*a, g.clone())?;
                    emit(*b, g.clone())?;
                }
                Op::Scale { input, factor } => emit(*input, g.scale(*factor))?,
                Op::Sum { input } => {
                    let s = g.item()?;
                    emit(*input, Tensor::full(val(*input).shape().to_vec(), s))?;
                }
                Op::Activation { input, kind } => {
                    let z = val(*input);
                    let gi = g.zip_map(z, |gv, zv| gv * kind.derivative_scalar(zv))?;
                    emit(*input, gi)?;
                }
                Op::BatchNormTrain {
                    input,
                    gamma,
                    beta,
                    cache,
                } => {
                    let bg = batchnorm_backward(val(*gamma), Some(cache), g)?;
                    emit(*gamma, bg.gamma)?;
                    emit(*beta, bg.beta)?;
                    emit(*input, bg.input)?;
                }
                Op::BatchNormEval {
                    input,
                    gamma,
                    beta,
                    inv_std,
                    normalized,
                } => {
                    let (_, width) = g.dims2()?;
                    if wants(*gamma) {
                        emit(*gamma, g.mul(normalized)?.sum_rows()?)?;
                    }
                    if wants(*beta) {
                        emit(*beta, g.sum_rows()?)?;
                    }
                    let gamma_v = val(*gamma).data();
                    let mut gi = g.clone();
                    for row in gi.data_mut().chunks_exact_mut(width) {
                        for (j, v) in row.iter_mut().enumerate() {
                            *v *= gamma_v[j] * inv_std[j];
                        }
                    }
                    emit(*input, gi)?;
                }
                Op::Bgn { input, node: bgn_node } => {
                    let (gi, incoming) = normalize_gradient(bgn_node, g);
                    let guarded = !(incoming > bgn_node.epsilon_guard && incoming.is_finite());
                    bgn.push(BgnTrace {
                        node: Var {
                            tape: self.id,
                            index: idx,
                        },
                        layer: node.layer,
                        kappa: bgn_node.kappa,
                        incoming_norm: incoming,
                        outgoing_norm: gi.l2_norm(),
                        factor: incoming / bgn_node.kappa,
                        guarded,
                    });
                    emit(*input, gi)?;
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let s = g.item()?;
                    emit(*logits, softmax_cross_entropy_grad(probs, targets)?.scale(s))?;
                }
            }
        }

        let mut params: BTreeMap<usize, Tensor> = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Parameter(id) = node.op {
                let grad = grads[idx]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape().to_vec()));
                match params.get_mut(&id) {
                    Some(acc) => acc.add_assign(&grad)?,
                    None => {
                        params.insert(id, grad);
                    }
                }
            }
        }

        Ok(Gradients {
            tape: self.id,
            nodes: grads,
            params,
            bgn,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn add_bias_records_one_node() {
        let mut tape = Tape::new();
        let z = tape.leaf(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = tape.parameter(0, Tensor::vector(vec![10.0, -1.0]).unwrap());
        assert_eq!(tape.node_count(), 0);
        let y = tape.add_bias(z, b).unwrap();
        assert_eq!(tape.node_count(), 1);
        assert_eq!(tape.op_kind(y).unwrap(), OpKind::AddBias);
        assert_eq!(tape.value(y).unwrap(), &m(&[&[11.0, 1.0], &[13.0, 3.0]]));
    }

    #[test]
    fn cross_tape_inputs_are_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.leaf(Tensor::scalar(1.0));
        let y = b.leaf(Tensor::scalar(2.0));
        assert!(matches!(b.add(x, y), Err(Error::Usage(_))));
        assert!(b.value(x).is_err());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.parameter(0, Tensor::zeros(vec![2, 2]));
        assert!(matches!(tape.backward(w), Err(Error::Usage(_))));
    }

    #[test]
    fn unreachable_parameter_gets_zeros() {
        let mut tape = Tape::new();
        let used = tape.parameter(0, m(&[&[1.0, 2.0]]));
        let unused = tape.parameter(1, m(&[&[5.0], &[6.0], &[7.0]]));
        let loss = tape.sum(used).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.param(1).unwrap(), &Tensor::zeros(vec![3, 1]));
        assert!(grads.wrt(unused).is_none());
        assert_eq!(grads.param(0).unwrap(), &m(&[&[1.0, 1.0]]));
    }

    #[test]
    fn sum_of_matmul_gives_replicated_input() {
        // loss = Σ W·x  ⇒  ∂loss/∂W[i][j] = x[j] for every row i.
        let mut tape = Tape::new();
        let w = tape.parameter(0, m(&[&[0.3, -1.0, 2.0], &[1.5, 0.25, -0.5]]));
        let x = tape.leaf(m(&[&[1.0], &[-2.0], &[4.0]]));
        let wx = tape.matmul(w, x).unwrap();
        let loss = tape.sum(wx).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.param(0).unwrap(), &m(&[&[1.0, -2.0, 4.0], &[1.0, -2.0, 4.0]]));
    }

    #[test]
    fn two_layer_linear_chain_rule() {
        // loss = 1ᵀ W₂ W₁ x  ⇒  ∇W₁ = W₂ᵀ·1·xᵀ.
        let w1 = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let w2 = m(&[&[0.5, -1.0], &[2.0, 1.0]]);
        let xv = m(&[&[1.0], &[-1.0]]);
        let mut tape = Tape::new();
        let p1 = tape.parameter(0, w1);
        let p2 = tape.parameter(1, w2.clone());
        let x = tape.leaf(xv.clone());
        let h = tape.matmul(p1, x).unwrap();
        let z = tape.matmul(p2, h).unwrap();
        let loss = tape.sum(z).unwrap();
        let grads = tape.backward(loss).unwrap();
        let ones = Tensor::full(vec![2, 1], 1.0);
        let expected = w2.t_matmul(&ones).unwrap().matmul_t(&xv).unwrap();
        assert_eq!(grads.param(0).unwrap(), &expected);
        assert_eq!(expected, m(&[&[2.5, -2.5], &[0.0, 0.0]]));
    }

    #[test]
    fn shared_parameter_accumulates() {
        let mut tape = Tape::new();
        let a = tape.parameter(7, Tensor::vector(vec![1.0, 2.0]).unwrap());
        let b = tape.parameter(7, Tensor::vector(vec![1.0, 2.0]).unwrap());
        let s = tape.add(a, b).unwrap();
        let s = tape.add(s, a).unwrap();
        let loss = tape.sum(s).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.param(7).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn non_finite_gradient_names_the_layer() {
        let mut tape = Tape::new();
        let w = tape.parameter(0, Tensor::vector(vec![1.0]).unwrap());
        tape.set_layer(Some(4));
        let big = tape.scale(w, f64::MAX).unwrap();
        let big = tape.scale(big, 10.0).unwrap();
        let loss = tape.sum(big).unwrap();
        match tape.backward(loss) {
            Err(Error::Numeric { layer, op }) => {
                assert_eq!(layer, Some(4));
                assert_eq!(op, "scale");
            }
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn bgn_node_normalizes_and_traces() {
        let mut tape = Tape::new();
        let p = tape.parameter(0, m(&[&[1.0, 1.0]]));
        let coef = tape.leaf(m(&[&[3.0], &[4.0]]));
        tape.set_layer(Some(1));
        let b = tape.bgn(p, KappaPolicy::SqrtD).unwrap();
        assert_eq!(tape.value(b).unwrap(), tape.value(p).unwrap());
        let y = tape.matmul(b, coef).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = grads.param(0).unwrap();
        assert!((g.data()[0] - 0.848_528_137_423_857).abs() < 1e-12);
        assert!((g.data()[1] - 1.131_370_849_898_476).abs() < 1e-12);
        let trace = grads.bgn_trace()[0];
        assert_eq!(trace.layer, Some(1));
        assert!((trace.incoming_norm - 5.0).abs() < 1e-15);
        assert!((trace.factor * trace.kappa - 5.0).abs() < 1e-12);
        assert!(!trace.guarded);
    }

    #[test]
    fn repeated_backward_is_bit_identical() {
        let mut tape = Tape::new();
        let w = tape.parameter(0, m(&[&[0.1, -0.7], &[0.4, 0.9]]));
        let x = tape.leaf(m(&[&[1.0, 2.0], &[-0.5, 0.3], &[2.0, -1.0]]));
        let z = tape.matmul_t(x, w).unwrap();
        let a = tape.activation(z, ActivationKind::Tanh).unwrap();
        let loss = tape.sum(a).unwrap();
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(g1.param(0).unwrap()), bits(g2.param(0).unwrap()));
    }
}

//! Backward gradient normalization.
//!
//! A BGN node is the identity in the forward pass. In the backward pass it
//! rescales the incoming gradient, taken over the whole batch, to have L2
//! norm `κ`. The default `κ` is `sqrt(d)` where `d` is the number of
//! features per sample.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradients with a norm at or below this pass through unchanged.
pub const DEFAULT_GUARD: f64 = 1e-12;

/// How `κ` is chosen for a BGN node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaPolicy {
    /// `κ = sqrt(d)`, `d` the per-sample feature count.
    #[default]
    SqrtD,
    Fixed(f64),
}

impl KappaPolicy {
    pub fn kappa(self, d: usize) -> f64 {
        match self {
            KappaPolicy::SqrtD => (d as f64).sqrt(),
            KappaPolicy::Fixed(k) => k,
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            KappaPolicy::Fixed(k) if !(k > 0.0 && k.is_finite()) => {
                Err(Error::Config(format!("kappa must be positive and finite, got {k}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for KappaPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KappaPolicy::SqrtD => f.write_str("sqrt-d"),
            KappaPolicy::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for KappaPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("sqrt-d") || s.eq_ignore_ascii_case("sqrtd") {
            return Ok(KappaPolicy::SqrtD);
        }
        let k: f64 = s
            .parse()
            .map_err(|_| Error::Config(format!("kappa must be `sqrt-d` or a number, got {s:?}")))?;
        let policy = KappaPolicy::Fixed(k);
        policy.validate()?;
        Ok(policy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BgnNode {
    pub kappa: f64,
    /// Feature dimension of the normalized tensor, batch excluded.
    pub d: usize,
    pub epsilon_guard: f64,
}

impl BgnNode {
    pub fn new(d: usize, policy: KappaPolicy) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("BGN feature dimension must be positive".into()));
        }
        policy.validate()?;
        Ok(BgnNode {
            kappa: policy.kappa(d),
            d,
            epsilon_guard: DEFAULT_GUARD,
        })
    }

    /// Node for a tensor of `shape` whose leading axis is the batch.
    pub fn for_shape(shape: &[usize], policy: KappaPolicy) -> Result<Self> {
        let d = match shape {
            [] => 1,
            [n] => *n,
            [_, rest @ ..] => rest.iter().product(),
        };
        Self::new(d, policy)
    }
}

/// Identity. Returns a bit-identical copy of `x`.
pub fn bgn_forward(_node: &BgnNode, x: &Tensor) -> Tensor {
    x.clone()
}

/// `κ·g/‖g‖`, or `g` unchanged when `‖g‖` does not exceed the guard.
pub fn bgn_backward(node: &BgnNode, g: &Tensor) -> Tensor {
    normalize_gradient(node, g).0
}

/// [`bgn_backward`] that also reports `‖g‖` before normalization.
pub fn normalize_gradient(node: &BgnNode, g: &Tensor) -> (Tensor, f64) {
    let norm = g.l2_norm();
    if norm > node.epsilon_guard && norm.is_finite() {
        let c = node.kappa / norm;
        (g.scale(c), norm)
    } else {
        (g.clone(), norm)
    }
}

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Affine layer `z = x·Wᵀ + b` with `W` stored as fan-out × fan-in.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Gradients returned by [`dense_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Tensor,
    pub bias: Tensor,
    pub input: Tensor,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (fan_out, _) = weight.dims2()?;
        if bias.shape() != [fan_out] {
            return Err(Error::dim("DenseLayer::new", weight.shape(), bias.shape()));
        }
        Ok(DenseLayer { weight, bias })
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        DenseLayer {
            weight: Tensor::zeros(vec![fan_out, fan_in]),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[0]
    }
}

pub fn dense_forward(layer: &DenseLayer, x: &Tensor) -> Result<Tensor> {
    x.matmul_t(&layer.weight)?.add_row(&layer.bias)
}

/// Backward pass of [`dense_forward`] for a batch.
///
/// `delta` is the gradient with respect to `z` (batch × fan-out). Weight and
/// bias gradients are summed over the batch.
pub fn dense_backward(layer: &DenseLayer, x: &Tensor, delta: &Tensor) -> Result<DenseGrads> {
    let (batch, fan_out) = delta.dims2()?;
    let (xb, fan_in) = x.dims2()?;
    if batch != xb || fan_out != layer.fan_out() || fan_in != layer.fan_in() {
        return Err(Error::dim("dense_backward", x.shape(), delta.shape()));
    }
    Ok(DenseGrads {
        weight: delta.t_matmul(x)?,
        bias: delta.sum_rows()?,
        input: delta.matmul(&layer.weight)?,
    })
}

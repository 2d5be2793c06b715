use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of a batch × classes tensor.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, classes) = logits.dims2()?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(classes) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Mean softmax cross-entropy over the batch. Returns the loss and the
/// softmax probabilities.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    if logits.shape() != targets.shape() {
        return Err(Error::dim("softmax_cross_entropy", logits.shape(), targets.shape()));
    }
    let (batch, classes) = logits.dims2()?;
    let probs = softmax(logits)?;
    let mut total = 0.0;
    for (row, t) in logits
        .data()
        .chunks_exact(classes)
        .zip(targets.data().chunks_exact(classes))
    {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += row.iter().zip(t).map(|(z, y)| y * (lse - z)).sum::<f64>();
    }
    Ok((total / batch as f64, probs))
}

/// Gradient of [`softmax_cross_entropy`] with respect to the logits.
pub fn softmax_cross_entropy_grad(probs: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let (batch, _) = probs.dims2()?;
    let inv = 1.0 / batch as f64;
    probs.zip_map(targets, |p, y| (p - y) * inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let logits = Tensor::zeros(vec![3, 10]);
        let mut targets = Tensor::zeros(vec![3, 10]);
        for (i, c) in [3usize, 0, 9].iter().enumerate() {
            targets.data_mut()[i * 10 + c] = 1.0;
        }
        let (loss, probs) = softmax_cross_entropy(&logits, &targets).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-15);
        assert!(probs.data().iter().all(|&p| (p - 0.1).abs() < 1e-16));
    }

    #[test]
    fn large_logits_stay_finite() {
        let logits = Tensor::from_rows(&[[1000.0, -1000.0]]).unwrap();
        let targets = Tensor::from_rows(&[[0.0, 1.0]]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &targets).unwrap();
        assert!((loss - 2000.0).abs() < 1e-9);
    }
}

//! Per-feature batch normalization over the leading (batch) axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Reduction, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub epsilon: f64,
}

/// Batch mean and biased variance, one entry per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Tensor,
    pub var: Tensor,
}

/// Everything the train-mode backward rule needs from the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    /// Standardized input `ẑ`, batch × width.
    pub normalized: Tensor,
    /// `1/sqrt(var + ε)` per feature.
    pub inv_std: Vec<f64>,
    pub stats: BatchStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub input: Tensor,
}

impl BatchNormLayer {
    /// `γ = 1`, `β = 0`, running statistics `(0, 1)`.
    pub fn new(width: usize) -> Self {
        Self::with_hyperparameters(width, DEFAULT_MOMENTUM, DEFAULT_EPSILON)
            .expect("default hyperparameters are valid")
    }

    pub fn with_hyperparameters(width: usize, momentum: f64, epsilon: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::Config(format!("BN momentum must be in (0,1), got {momentum}")));
        }
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(Error::Config(format!("BN epsilon must be positive, got {epsilon}")));
        }
        Ok(BatchNormLayer {
            gamma: Tensor::full(vec![width], 1.0),
            beta: Tensor::zeros(vec![width]),
            running_mean: Tensor::zeros(vec![width]),
            running_var: Tensor::full(vec![width], 1.0),
            momentum,
            epsilon,
        })
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    /// `running ← momentum·running + (1 − momentum)·batch`.
    pub fn update_running(&mut self, stats: &BatchStats) -> Result<()> {
        let m = self.momentum;
        self.running_mean = self
            .running_mean
            .zip_map(&stats.mean, |r, b| m * r + (1.0 - m) * b)?;
        self.running_var = self
            .running_var
            .zip_map(&stats.var, |r, b| (m * r + (1.0 - m) * b).max(0.0))?;
        Ok(())
    }
}

fn check_width(z: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(usize, usize)> {
    let (batch, width) = z.dims2()?;
    if gamma.shape() != [width] || beta.shape() != [width] {
        return Err(Error::dim("batchnorm", z.shape(), gamma.shape()));
    }
    Ok((batch, width))
}

/// Train-mode standardization with batch statistics, then `γ·ẑ + β`.
pub fn normalize_train(
    z: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    epsilon: f64,
) -> Result<(Tensor, BatchNormCache)> {
    let (batch, width) = check_width(z, gamma, beta)?;
    if batch < 2 {
        return Err(Error::Usage(
            "batch normalization in train mode needs a batch of at least 2".into(),
        ));
    }
    let mean = z.reduce(Reduction::Mean, 0, false)?;
    let var = z.reduce(Reduction::Var, 0, false)?;
    let inv_std: Vec<f64> = var.data().iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();

    let mut normalized = z.clone();
    for row in normalized.data_mut().chunks_exact_mut(width) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean.data()[j]) * inv_std[j];
        }
    }
    let out = affine(&normalized, gamma, beta, width);
    Ok((
        out,
        BatchNormCache {
            normalized,
            inv_std,
            stats: BatchStats { mean, var },
        },
    ))
}

/// Eval-mode standardization with fixed statistics.
pub fn normalize_eval(
    z: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    epsilon: f64,
) -> Result<(Tensor, Tensor)> {
    let (_, width) = check_width(z, gamma, beta)?;
    if mean.shape() != [width] || var.shape() != [width] {
        return Err(Error::dim("batchnorm eval", z.shape(), mean.shape()));
    }
    let mut normalized = z.clone();
    for row in normalized.data_mut().chunks_exact_mut(width) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean.data()[j]) / (var.data()[j] + epsilon).sqrt();
        }
    }
    Ok((affine(&normalized, gamma, beta, width), normalized))
}

fn affine(normalized: &Tensor, gamma: &Tensor, beta: &Tensor, width: usize) -> Tensor {
    let mut out = normalized.clone();
    for row in out.data_mut().chunks_exact_mut(width) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = gamma.data()[j] * *v + beta.data()[j];
        }
    }
    out
}

/// Forward pass through a stateful layer. Train mode updates the running
/// statistics and returns the cache for [`batchnorm_backward`].
pub fn batchnorm_forward(
    layer: &mut BatchNormLayer,
    z: &Tensor,
    mode: Mode,
) -> Result<(Tensor, Option<BatchNormCache>)> {
    match mode {
        Mode::Train => {
            let (out, cache) = normalize_train(z, &layer.gamma, &layer.beta, layer.epsilon)?;
            layer.update_running(&cache.stats)?;
            Ok((out, Some(cache)))
        }
        Mode::Eval => {
            let (out, _) = normalize_eval(
                z,
                &layer.gamma,
                &layer.beta,
                &layer.running_mean,
                &layer.running_var,
                layer.epsilon,
            )?;
            Ok((out, None))
        }
    }
}

/// Exact derivative of the train-mode forward, including the dependence of
/// the batch mean and variance on `z`.
pub fn batchnorm_backward(
    gamma: &Tensor,
    cache: Option<&BatchNormCache>,
    delta: &Tensor,
) -> Result<BatchNormGrads> {
    let cache = cache.ok_or_else(|| {
        Error::Usage("batchnorm backward requires a train-mode forward cache".into())
    })?;
    let (batch, width) = delta.dims2()?;
    if cache.normalized.shape() != delta.shape() || gamma.shape() != [width] {
        return Err(Error::dim("batchnorm_backward", cache.normalized.shape(), delta.shape()));
    }
    let xhat = cache.normalized.data();
    let g = delta.data();
    let mut grad_gamma = vec![0.0; width];
    let mut grad_beta = vec![0.0; width];
    for i in 0..batch {
        for j in 0..width {
            let k = i * width + j;
            grad_gamma[j] += g[k] * xhat[k];
            grad_beta[j] += g[k];
        }
    }
    // dz = γ/(m·σ) · (m·g − Σg − ẑ·Σ(g·ẑ))
    let m = batch as f64;
    let mut input = vec![0.0; batch * width];
    for i in 0..batch {
        for j in 0..width {
            let k = i * width + j;
            let scale = gamma.data()[j] * cache.inv_std[j] / m;
            input[k] = scale * (m * g[k] - grad_beta[j] - xhat[k] * grad_gamma[j]);
        }
    }
    Ok(BatchNormGrads {
        gamma: Tensor::new(vec![width], grad_gamma)?,
        beta: Tensor::new(vec![width], grad_beta)?,
        input: Tensor::new(vec![batch, width], input)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn train_mode_standardizes_each_feature() {
        let mut layer = BatchNormLayer::new(3);
        let z = m(&[
            &[1.0, -4.0, 100.0],
            &[2.0, 0.5, 90.0],
            &[7.0, 3.0, 95.0],
            &[-3.0, 2.0, 80.0],
        ]);
        let (out, _) = batchnorm_forward(&mut layer, &z, Mode::Train).unwrap();
        let mean = out.reduce(Reduction::Mean, 0, false).unwrap();
        let var = out.reduce(Reduction::Var, 0, false).unwrap();
        for j in 0..3 {
            assert!(mean.data()[j].abs() < 1e-12);
            // ε shrinks the variance slightly below 1.
            assert!((var.data()[j] - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn constant_feature_maps_to_beta() {
        let mut layer = BatchNormLayer::new(1);
        layer.beta = Tensor::vector(vec![0.7]).unwrap();
        let (out, _) = batchnorm_forward(&mut layer, &m(&[&[5.0], &[5.0], &[5.0]]), Mode::Train).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn eval_with_unit_stats_is_affine() {
        let mut layer = BatchNormLayer::with_hyperparameters(2, 0.9, 1e-300).unwrap();
        layer.gamma = Tensor::vector(vec![2.0, -1.0]).unwrap();
        layer.beta = Tensor::vector(vec![0.5, 3.0]).unwrap();
        let z = m(&[&[1.0, 2.0], &[-3.0, 0.25]]);
        let (out, cache) = batchnorm_forward(&mut layer, &z, Mode::Eval).unwrap();
        assert!(cache.is_none());
        assert_eq!(out, m(&[&[2.5, 1.0], &[-5.5, 2.75]]));
    }

    #[test]
    fn train_mode_rejects_single_sample() {
        let mut layer = BatchNormLayer::new(2);
        let err = batchnorm_forward(&mut layer, &m(&[&[1.0, 2.0]]), Mode::Train).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn running_statistics_follow_momentum() {
        let mut layer = BatchNormLayer::new(1);
        batchnorm_forward(&mut layer, &m(&[&[1.0], &[3.0]]), Mode::Train).unwrap();
        // mean 2, biased var 1
        assert!((layer.running_mean.data()[0] - 0.2).abs() < 1e-15);
        assert!((layer.running_var.data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn backward_without_cache_is_an_error() {
        let gamma = Tensor::full(vec![2], 1.0);
        assert!(batchnorm_backward(&gamma, None, &Tensor::zeros(vec![2, 2])).is_err());
    }

    #[test]
    fn zero_delta_gives_zero_gradients() {
        let gamma = Tensor::full(vec![2], 1.0);
        let beta = Tensor::zeros(vec![2]);
        let z = m(&[&[1.0, 5.0], &[2.0, -1.0], &[0.5, 0.0]]);
        let (_, cache) = normalize_train(&z, &gamma, &beta, 1e-5).unwrap();
        let g = batchnorm_backward(&gamma, Some(&cache), &Tensor::zeros(vec![3, 2])).unwrap();
        for t in [&g.gamma, &g.beta, &g.input] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gamma_gradient_on_two_sample_batch() {
        // z = [1, 3]: mean 2, var 1, ẑ = [-1, 1]·(1/sqrt(1+ε)).
        let eps = 1e-5;
        let gamma = Tensor::full(vec![1], 1.0);
        let beta = Tensor::zeros(vec![1]);
        let (_, cache) = normalize_train(&m(&[&[1.0], &[3.0]]), &gamma, &beta, eps).unwrap();
        let delta = m(&[&[0.3], &[-1.2]]);
        let g = batchnorm_backward(&gamma, Some(&cache), &delta).unwrap();
        let s = 1.0 / (1.0 + eps).sqrt();
        let expected = 0.3 * (-s) + (-1.2) * s;
        assert!((g.gamma.data()[0] - expected).abs() < 1e-15);
        assert!((g.beta.data()[0] - (-0.9)).abs() < 1e-15);
    }
}

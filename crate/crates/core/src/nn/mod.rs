//! Layers: dense affine maps, activations, batch normalization, the BGN
//! node, and the softmax cross-entropy head.

pub mod activation;
pub mod batchnorm;
pub mod bgn;
pub mod dense;
pub mod loss;

pub use activation::{activation_apply, activation_derivative, ActivationKind};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormGrads, BatchNormLayer,
    BatchStats, Mode,
};
pub use bgn::{bgn_backward, bgn_forward, BgnNode, KappaPolicy};
pub use dense::{dense_backward, dense_forward, DenseGrads, DenseLayer};
pub use loss::{softmax, softmax_cross_entropy};

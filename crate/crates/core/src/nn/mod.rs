//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Shared by the velocity field, the tactile encoders and the force decoder.
//! All arithmetic is `f64` and every reduction runs in a fixed order, so a
//! seed fixes training bit-for-bit on one thread.

mod dense;
pub mod kernels;
mod optim;

pub use dense::{
    Activation, Backward, DenseNet, ForwardCache, Gradients, Layer, LayerGrad, NetCheckpoint,
    NET_FORMAT_VERSION,
};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};

/// Mean squared error over all entries and its gradient with respect to `pred`.
pub fn mse_loss(
    pred: &ndarray::Array2<f64>,
    target: &ndarray::Array2<f64>,
) -> (f64, ndarray::Array2<f64>) {
    let n = pred.len().max(1) as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.mapv(|d| 2.0 * d / n);
    (loss, grad)
}

/// Cosine decay from `base` towards `base · floor` over `total` steps.
pub fn cosine_lr(base: f64, step: usize, total: usize, floor: f64) -> f64 {
    let progress = step as f64 / total.max(1) as f64;
    let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos());
    base * (floor + (1.0 - floor) * cos)
}

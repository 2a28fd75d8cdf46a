//! Minimal dense neural-network engine.
//!
//! Everything the honest parties and the adversary compute with lives here:
//! matrices, perceptrons with exact reverse-mode gradients, softmax
//! cross-entropy, and input-gradient saliency.

mod loss;
mod matrix;
mod net;
mod saliency;

pub use loss::{argmax_rows, cross_entropy_with_grad, masked_cross_entropy_with_grad, softmax_rows};
pub use matrix::{euclidean_distance, Matrix};
pub use net::{Activation, DenseNet, ForwardTrace, Gradients, Layer, LayerGradients};
pub use saliency::{grid_index, input_saliency, SaliencyMap};

use crate::error::Result;

/// One full-batch supervised step: forward, cross-entropy, backward, SGD.
///
/// Returns the pre-update loss.
pub fn supervised_step(
    net: &mut DenseNet,
    batch: &Matrix,
    labels: &[usize],
    lr: f64,
) -> Result<f64> {
    let trace = net.forward(batch)?;
    let (loss, grad_at_logits) = cross_entropy_with_grad(trace.output(), labels)?;
    let (grads, _) = net.backward(&trace, &grad_at_logits)?;
    net.sgd_step(&grads, lr)?;
    Ok(loss)
}

//! Input-gradient saliency.
//!
//! The saliency of a sample is the elementwise absolute gradient of the
//! classification loss with respect to the input features. Large entries
//! mark features whose perturbation moves the loss most, which is what the
//! adversary uses to place its trigger.

use crate::error::{Error, Result};
use crate::nn::loss::cross_entropy_with_grad;
use crate::nn::matrix::Matrix;
use crate::nn::net::DenseNet;

/// Per-feature nonnegative saliency magnitudes for one sample.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    values: Vec<f64>,
}

impl SaliencyMap {
    /// Wraps raw magnitudes; entries must be finite and nonnegative.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite {
                context: "SaliencyMap::from_values",
                row: 0,
                col: pos,
            });
        }
        Ok(SaliencyMap { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Elementwise mean of several maps of equal length.
    pub fn mean(maps: &[SaliencyMap]) -> Result<SaliencyMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::invalid("cannot average zero saliency maps"))?;
        let mut values = vec![0.0; first.len()];
        for map in maps {
            if map.len() != values.len() {
                return Err(Error::invalid("saliency maps differ in length"));
            }
            for (acc, v) in values.iter_mut().zip(&map.values) {
                *acc += v;
            }
        }
        let scale = 1.0 / maps.len() as f64;
        for v in &mut values {
            *v *= scale;
        }
        Ok(SaliencyMap { values })
    }
}

/// Flat index of grid cell `(row, col)` in a column-major grid of the given
/// height.
///
/// Grid-shaped feature vectors in this crate store whole pixel columns
/// contiguously, so a vertical strip of an image is a contiguous feature
/// range and is itself a valid grid.
pub fn grid_index(height: usize, row: usize, col: usize) -> usize {
    col * height + row
}

/// Saliency of `sample` under `net`: `|d loss(net(sample), label) / d sample|`.
pub fn input_saliency(net: &DenseNet, sample: &[f64], label: usize) -> Result<SaliencyMap> {
    let batch = Matrix::from_row(sample)?;
    let trace = net.forward(&batch)?;
    let (_, grad_at_logits) = cross_entropy_with_grad(trace.output(), &[label])?;
    let (_, grad_at_input) = net.backward(&trace, &grad_at_logits)?;
    if !grad_at_input.is_finite() {
        return Err(Error::NonFinite {
            context: "input_saliency",
            row: 0,
            col: 0,
        });
    }
    Ok(SaliencyMap {
        values: grad_at_input.row(0).iter().map(|g| g.abs()).collect(),
    })
}

//! Gaussian noise on received embeddings.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::nn::Matrix;

/// Adds independent zero-mean Gaussian noise of the given variance to every
/// entry. Variance zero returns the input unchanged without touching the
/// RNG, so disabled-noise runs are bitwise identical to defense-free ones.
pub fn apply_dp_noise<R: Rng + ?Sized>(embeddings: &Matrix, variance: f64, rng: &mut R) -> Matrix {
    if variance <= 0.0 {
        return embeddings.clone();
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("positive finite variance");
    let mut out = embeddings.clone();
    for v in out.as_mut_slice() {
        *v += normal.sample(rng);
    }
    out
}

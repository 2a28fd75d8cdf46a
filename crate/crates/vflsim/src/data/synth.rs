//! Synthetic datasets sized so a full experiment runs in seconds.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{grid_index, Matrix};

use super::{Dataset, GridDims};

/// Pairwise distance factor for the designated close class pair (0, 1).
const CLOSE_PAIR_FACTOR: f64 = 0.4;

/// Gaussian blob clusters with controlled center geometry.
///
/// Classes 0 and 1 are deliberately placed closer to each other than any
/// other pair, so distance-based class selection has a unique true argmin.
/// Centers point along mutually orthogonal directions with mass spread over
/// all coordinates, which keeps class signal visible in every vertical
/// shard.
pub fn generate_blobs<R: Rng + ?Sized>(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    center_distance: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::invalid("blobs need at least two classes"));
    }
    if dim < 2 || dim < num_classes {
        return Err(Error::invalid(
            "blob dimension must be >= 2 and >= the class count",
        ));
    }
    if spread < 0.0 || center_distance <= 0.0 {
        return Err(Error::invalid("spread must be >= 0 and distance > 0"));
    }

    let directions = orthonormal_directions(num_classes, dim, rng);
    let mut centers: Vec<Vec<f64>> = directions
        .iter()
        .map(|u| u.iter().map(|v| v * center_distance).collect())
        .collect();
    // Plant the close pair: center 1 sits a short step away from center 0.
    for i in 0..dim {
        centers[1][i] = centers[0][i] + CLOSE_PAIR_FACTOR * center_distance * directions[1][i];
    }

    let noise = Normal::new(0.0, spread.max(0.0)).expect("finite nonnegative spread");
    let mut features = Matrix::zeros(num_classes * per_class, dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    let mut row = 0;
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let out = features.row_mut(row);
            for (o, &c) in out.iter_mut().zip(center) {
                *o = if spread == 0.0 {
                    c
                } else {
                    c + noise.sample(rng)
                };
            }
            labels.push(class);
            row += 1;
        }
    }
    Dataset::new(features, labels, num_classes, None)
}

/// Gram-Schmidt over seeded Gaussian draws; rows come back orthonormal.
fn orthonormal_directions<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| gauss.sample(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue; // near-degenerate draw, resample
        }
        for vi in &mut v {
            *vi /= norm;
        }
        basis.push(v);
    }
    basis
}

/// Grid "images": one fixed template per class plus pixel noise, clamped to
/// `[0, 1]`.
///
/// Template `c` is a dim background with a brighter two-row horizontal band
/// whose vertical position encodes the class. Band positions step by one
/// row, so adjacent classes share a band row and are genuinely confusable
/// under noise, while every vertical strip of the image still carries the
/// class signal.
pub fn generate_grid_images<R: Rng + ?Sized>(
    num_classes: usize,
    height: usize,
    width: usize,
    per_class: usize,
    noise: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if height < 6 || width < 6 {
        return Err(Error::invalid("grids must be at least 6x6"));
    }
    if num_classes < 2 {
        return Err(Error::invalid("grids need at least two classes"));
    }
    if num_classes + 2 > height {
        return Err(Error::invalid(format!(
            "height {height} cannot host {num_classes} distinct band positions"
        )));
    }
    if noise < 0.0 {
        return Err(Error::invalid("noise must be >= 0"));
    }

    let dims = GridDims { height, width };
    let gauss = Normal::new(0.0, noise.max(0.0)).expect("finite nonnegative noise");
    let mut features = Matrix::zeros(num_classes * per_class, height * width);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    let mut row = 0;
    for class in 0..num_classes {
        let template = class_template(class, dims);
        for _ in 0..per_class {
            let out = features.row_mut(row);
            for (o, &t) in out.iter_mut().zip(&template) {
                let v = if noise == 0.0 {
                    t
                } else {
                    t + gauss.sample(rng)
                };
                *o = v.clamp(0.0, 1.0);
            }
            labels.push(class);
            row += 1;
        }
    }
    Dataset::new(features, labels, num_classes, Some(dims))
}

/// The noise-free image for one class, column-major flat layout.
///
/// The band's contrast ramps up from left to right, so vertical strips are
/// unequally informative: participants holding right-hand strips see the
/// class signal more clearly than those holding left-hand strips.
pub fn class_template(class: usize, dims: GridDims) -> Vec<f64> {
    const BACKGROUND: f64 = 0.35;
    const CONTRAST: f64 = 0.32;
    const LEFT_WEIGHT: f64 = 0.25;
    let mut cells = vec![BACKGROUND; dims.height * dims.width];
    let band_top = 1 + class;
    for col in 0..dims.width {
        let ramp = LEFT_WEIGHT + (1.0 - LEFT_WEIGHT) * col as f64 / (dims.width - 1) as f64;
        for r in band_top..(band_top + 2).min(dims.height) {
            cells[grid_index(dims.height, r, col)] = BACKGROUND + CONTRAST * ramp;
        }
    }
    cells
}

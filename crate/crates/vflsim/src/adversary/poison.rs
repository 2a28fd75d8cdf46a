//! Bounded poison-noise optimization.
//!
//! Given triggered source clones and a subset of target-class rows, learn
//! per-row noise that pulls the targets' embeddings toward the triggered
//! sources' embeddings, keeping every noise row inside an L2 ball of radius
//! `epsilon`. Projected gradient descent with step halving: a step is only
//! accepted if the objective does not increase, so the objective is
//! non-increasing across accepted steps by construction.

use crate::error::{Error, Result};
use crate::nn::{DenseNet, Matrix};

const MAX_HALVINGS: usize = 20;

/// Mean squared embedding distance between perturbed targets and their
/// (cyclically) paired triggered sources.
fn objective(bottom: &DenseNet, perturbed: &Matrix, paired_src_emb: &Matrix) -> Result<f64> {
    let emb = bottom.forward(perturbed)?.into_output();
    let mut total = 0.0;
    for r in 0..emb.rows() {
        let diff: f64 = emb
            .row(r)
            .iter()
            .zip(paired_src_emb.row(r))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        total += diff;
    }
    let value = total / emb.rows() as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "optimize_poison objective",
            row: 0,
            col: 0,
        });
    }
    Ok(value)
}

fn project_rows(noise: &mut Matrix, epsilon: f64) {
    for r in 0..noise.rows() {
        let row = noise.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > epsilon {
            let scale = if epsilon == 0.0 { 0.0 } else { epsilon / norm };
            for v in row {
                *v *= scale;
            }
        }
    }
}

/// Learns perturbed versions of `targets` whose embeddings approach the
/// embeddings of `triggered_sources` under the frozen `bottom` model.
///
/// Pairing is cyclic: target row `j` chases source row `j % sources`. The
/// returned matrix is `targets + noise` with every noise row satisfying
/// `||noise_j||_2 <= epsilon`.
pub fn optimize_poison(
    bottom: &DenseNet,
    triggered_sources: &Matrix,
    targets: &Matrix,
    epsilon: f64,
    steps: usize,
    inner_lr: f64,
) -> Result<Matrix> {
    optimize_poison_warm(bottom, triggered_sources, targets, None, epsilon, steps, inner_lr)
}

/// [`optimize_poison`] with an optional warm start: `previous` is a prior
/// output of this function for the same targets, whose noise seeds the
/// descent. Used when re-optimizing against a drifted bottom model, so the
/// poisoned rows evolve continuously between refreshes.
pub fn optimize_poison_warm(
    bottom: &DenseNet,
    triggered_sources: &Matrix,
    targets: &Matrix,
    previous: Option<&Matrix>,
    epsilon: f64,
    steps: usize,
    inner_lr: f64,
) -> Result<Matrix> {
    if triggered_sources.rows() == 0 || targets.rows() == 0 {
        return Err(Error::invalid(
            "poison optimization needs nonempty source and target sets",
        ));
    }
    if epsilon < 0.0 {
        return Err(Error::invalid("epsilon must be nonnegative"));
    }
    if !(inner_lr > 0.0) {
        return Err(Error::invalid("inner learning rate must be positive"));
    }
    if epsilon == 0.0 {
        // Projection onto the origin: the targets come back untouched.
        return Ok(targets.clone());
    }

    let src_emb = bottom.forward(triggered_sources)?.into_output();
    let pair_ids: Vec<usize> = (0..targets.rows())
        .map(|j| j % triggered_sources.rows())
        .collect();
    let paired = src_emb.select_rows(&pair_ids)?;

    let mut noise = match previous {
        Some(prev) => {
            targets.check_same_shape(prev, "optimize_poison warm start")?;
            let mut diff = Matrix::zeros(targets.rows(), targets.cols());
            for (d, (p, t)) in diff
                .as_mut_slice()
                .iter_mut()
                .zip(prev.as_slice().iter().zip(targets.as_slice()))
            {
                *d = p - t;
            }
            project_rows(&mut diff, epsilon);
            diff
        }
        None => Matrix::zeros(targets.rows(), targets.cols()),
    };
    let mut current = objective(bottom, &targets.add(&noise)?, &paired)?;

    for _ in 0..steps {
        let perturbed = targets.add(&noise)?;
        let trace = bottom.forward(&perturbed)?;
        let emb = trace.output();

        // d objective / d embedding = 2 (emb - paired) / rows
        let scale = 2.0 / emb.rows() as f64;
        let mut grad_emb = Matrix::zeros(emb.rows(), emb.cols());
        for r in 0..emb.rows() {
            for c in 0..emb.cols() {
                grad_emb.set(r, c, scale * (emb.get(r, c) - paired.get(r, c)));
            }
        }
        let (_, grad_input) = bottom.backward(&trace, &grad_emb)?;

        let mut step = inner_lr;
        for _ in 0..=MAX_HALVINGS {
            let mut candidate = noise.clone();
            for (n, g) in candidate
                .as_mut_slice()
                .iter_mut()
                .zip(grad_input.as_slice())
            {
                *n -= step * g;
            }
            project_rows(&mut candidate, epsilon);
            let value = objective(bottom, &targets.add(&candidate)?, &paired)?;
            if value <= current {
                noise = candidate;
                current = value;
                break;
            }
            step *= 0.5;
        }
        // No decrease within the halving budget: keep the current noise.
    }

    targets.add(&noise)
}

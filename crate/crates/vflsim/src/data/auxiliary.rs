//! Auxiliary-set sampling for the adversary.
//!
//! The adversary is assumed to hold a small labelled set drawn from the same
//! distribution as the training data but disjoint from it. Label-space
//! overlap is controlled by sampling only from a subset of "known" classes.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

use super::Dataset;

/// Which sample ids become auxiliary data and which classes they cover.
///
/// The ids must be removed from the protocol's training set by the caller;
/// the harness does this before splitting shards.
#[derive(Debug, Clone)]
pub struct AuxiliaryDraw {
    pub ids: Vec<usize>,
    /// Sorted class ids the auxiliary labels cover (the "known" set).
    pub known_classes: Vec<usize>,
}

/// Draws `per_class` auxiliary samples from each of `ceil(fraction * N)`
/// uniformly chosen known classes.
pub fn sample_auxiliary<R: Rng + ?Sized>(
    dataset: &Dataset,
    per_class: usize,
    known_fraction: f64,
    rng: &mut R,
) -> Result<AuxiliaryDraw> {
    if !(known_fraction > 0.0 && known_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "known fraction must be in (0, 1], got {known_fraction}"
        )));
    }
    if per_class == 0 {
        return Err(Error::invalid("per-class auxiliary count must be positive"));
    }
    let known_count = ((known_fraction * dataset.num_classes as f64).ceil() as usize)
        .clamp(1, dataset.num_classes);

    let mut all_classes: Vec<usize> = (0..dataset.num_classes).collect();
    all_classes.shuffle(rng);
    let mut known_classes: Vec<usize> = all_classes[..known_count].to_vec();
    known_classes.sort_unstable();

    let mut ids = Vec::with_capacity(known_count * per_class);
    for &class in &known_classes {
        let mut members = dataset.class_members(class);
        if members.len() < per_class {
            return Err(Error::invalid(format!(
                "class {class} has {} samples, auxiliary draw needs {per_class}",
                members.len()
            )));
        }
        members.shuffle(rng);
        ids.extend_from_slice(&members[..per_class]);
    }
    ids.sort_unstable();
    Ok(AuxiliaryDraw { ids, known_classes })
}

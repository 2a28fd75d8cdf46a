//! Dataset generation, ingestion, and vertical splitting.
//!
//! Datasets are a feature matrix plus integer labels. Grid datasets ("images"
//! at desk scale) additionally carry their height and width; their feature
//! vectors are stored column-major (see [`crate::nn::grid_index`]) so that a
//! vertical strip of the image is a contiguous feature range and every
//! participant's strip is itself a valid grid.

mod auxiliary;
mod csvio;
mod synth;

pub use auxiliary::{sample_auxiliary, AuxiliaryDraw};
pub use csvio::{load_csv, save_csv};
pub use synth::{generate_blobs, generate_grid_images};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Height and width of a grid dataset, with `height * width` features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub height: usize,
    pub width: usize,
}

/// A labelled dataset: `n` samples of `m` features each.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub grid: Option<GridDims>,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        grid: Option<GridDims>,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::ShapeMismatch {
                context: "Dataset::new",
                expected: format!("{} labels", features.rows()),
                actual: format!("{} labels", labels.len()),
            });
        }
        for &label in &labels {
            if label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: num_classes,
                });
            }
        }
        if let Some(dims) = grid {
            if dims.height * dims.width != features.cols() {
                return Err(Error::ShapeMismatch {
                    context: "Dataset::new",
                    expected: format!("{} grid cells", dims.height * dims.width),
                    actual: format!("{} features", features.cols()),
                });
            }
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            grid,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    /// Sample ids whose label equals `class`.
    pub fn class_members(&self, class: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i] == class)
            .collect()
    }

    /// Splits into (rows named in `ids`, remaining rows), keeping order.
    pub fn partition(&self, ids: &BTreeSet<usize>) -> Result<(Dataset, Dataset)> {
        let taken: Vec<usize> = ids.iter().copied().collect();
        if taken.iter().any(|&i| i >= self.len()) {
            return Err(Error::invalid("partition id out of range"));
        }
        let kept: Vec<usize> = (0..self.len()).filter(|i| !ids.contains(i)).collect();
        let make = |rows: &[usize]| -> Result<Dataset> {
            Dataset::new(
                self.features.select_rows(rows)?,
                rows.iter().map(|&i| self.labels[i]).collect(),
                self.num_classes,
                self.grid,
            )
        };
        Ok((make(&taken)?, make(&kept)?))
    }

    /// Splits class-ordered synthetic data into train/test by taking the
    /// first `train_per_class` members of every class for training.
    pub fn split_train_test(&self, train_per_class: usize) -> Result<(Dataset, Dataset)> {
        let mut test_ids = BTreeSet::new();
        for class in 0..self.num_classes {
            let members = self.class_members(class);
            if members.len() <= train_per_class {
                return Err(Error::invalid(format!(
                    "class {class} has {} samples, need more than {train_per_class}",
                    members.len()
                )));
            }
            test_ids.extend(members[train_per_class..].iter().copied());
        }
        let (test, train) = self.partition(&test_ids)?;
        Ok((train, test))
    }
}

/// One participant's vertical slice of the sample matrix.
#[derive(Debug, Clone)]
pub struct FeatureShard {
    pub participant_id: usize,
    pub col_start: usize,
    pub col_end: usize,
    pub rows: Matrix,
}

impl FeatureShard {
    pub fn width(&self) -> usize {
        self.col_end - self.col_start
    }

    /// Grid dims of this shard when the parent dataset is a grid: the full
    /// height and this shard's strip of pixel columns.
    pub fn grid_dims(&self, parent: &GridDims) -> Result<GridDims> {
        if self.col_start % parent.height != 0 || self.col_end % parent.height != 0 {
            return Err(Error::invalid(
                "shard is not aligned on whole pixel columns",
            ));
        }
        Ok(GridDims {
            height: parent.height,
            width: self.width() / parent.height,
        })
    }
}

/// How the feature space is carved across participants.
#[derive(Debug, Clone)]
pub struct SplitPlan {
    /// Per-participant `[start, end)` column ranges, participant 0 first.
    pub ranges: Vec<(usize, usize)>,
    /// Participant ids controlled by the adversary.
    pub adversary_ids: Vec<usize>,
}

impl SplitPlan {
    /// Equal-width contiguous split of `m` features over `k` participants;
    /// earlier participants absorb the remainder.
    pub fn equal(k: usize, m: usize) -> Result<SplitPlan> {
        if k == 0 || m < k {
            return Err(Error::invalid(format!(
                "cannot split {m} features over {k} participants"
            )));
        }
        let base = m / k;
        let extra = m % k;
        let mut ranges = Vec::with_capacity(k);
        let mut start = 0;
        for i in 0..k {
            let width = base + usize::from(i < extra);
            ranges.push((start, start + width));
            start += width;
        }
        Ok(SplitPlan {
            ranges,
            adversary_ids: Vec::new(),
        })
    }

    /// Equal split of a grid on whole pixel columns.
    pub fn equal_grid(k: usize, dims: GridDims) -> Result<SplitPlan> {
        let col_plan = SplitPlan::equal(k, dims.width)?;
        Ok(SplitPlan {
            ranges: col_plan
                .ranges
                .iter()
                .map(|&(s, e)| (s * dims.height, e * dims.height))
                .collect(),
            adversary_ids: Vec::new(),
        })
    }

    pub fn participants(&self) -> usize {
        self.ranges.len()
    }

    /// Checks the ranges are ordered, disjoint, cover `[0, m)`, and (for
    /// grids) fall on whole pixel columns.
    pub fn validate(&self, m: usize, grid: Option<&GridDims>) -> Result<()> {
        let mut expected_start = 0;
        for (i, &(start, end)) in self.ranges.iter().enumerate() {
            if start != expected_start || end <= start {
                return Err(Error::invalid(format!(
                    "participant {i} range [{start}, {end}) leaves a gap or overlap"
                )));
            }
            expected_start = end;
        }
        if expected_start != m {
            return Err(Error::invalid(format!(
                "ranges cover [0, {expected_start}) but the feature space is [0, {m})"
            )));
        }
        if let Some(dims) = grid {
            for &(start, end) in &self.ranges {
                if start % dims.height != 0 || end % dims.height != 0 {
                    return Err(Error::invalid(
                        "grid split must fall on whole pixel columns",
                    ));
                }
            }
        }
        for &id in &self.adversary_ids {
            if id >= self.ranges.len() {
                return Err(Error::invalid(format!(
                    "adversary id {id} out of range for {} participants",
                    self.ranges.len()
                )));
            }
        }
        Ok(())
    }
}

/// Carves a feature matrix into per-participant shards.
///
/// Concatenating the shards in participant order reconstructs the matrix
/// exactly.
pub fn vertical_split(features: &Matrix, plan: &SplitPlan) -> Result<Vec<FeatureShard>> {
    plan.validate(features.cols(), None)?;
    plan.ranges
        .iter()
        .enumerate()
        .map(|(id, &(start, end))| {
            Ok(FeatureShard {
                participant_id: id,
                col_start: start,
                col_end: end,
                rows: features.slice_cols(start, end)?,
            })
        })
        .collect()
}

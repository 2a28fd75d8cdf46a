//! Isolation forest over embedding points.
//!
//! Trees are random axis-aligned partitions: each node draws a uniform
//! feature among those with positive range and a uniform split value inside
//! that range, until a point is isolated or the depth limit is hit. A
//! point's anomaly score is `2^(-E[h] / c(psi))` where `E[h]` is its mean
//! path length over the trees (leaf sizes add the standard `c(size)`
//! adjustment) and `c` is the average unsuccessful-BST-search length.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Matrix;

const EULER_MASCHERONI: f64 = 0.5772156649;

/// `c(n) = 2 H(n-1) - 2 (n-1)/n`, with `H(i) = ln(i) + gamma`; zero below
/// two points.
pub fn average_path_length(n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let m = (n - 1) as f64;
    2.0 * (m.ln() + EULER_MASCHERONI) - 2.0 * m / n as f64
}

/// Forest construction parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForestParams {
    pub num_trees: usize,
    /// Per-tree subsample size psi; capped at the point count when larger.
    pub subsample: usize,
    /// Depth limit; `None` uses `ceil(log2 psi)`.
    pub max_depth: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            num_trees: 100,
            subsample: 256,
            max_depth: None,
        }
    }
}

/// One node of an isolation tree; public so tests can traverse trees with
/// independent path-length code.
#[derive(Debug, Clone)]
pub enum IsoNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<IsoNode>,
        right: Box<IsoNode>,
    },
    Leaf {
        size: usize,
    },
}

/// A fitted forest.
#[derive(Debug, Clone)]
pub struct IsolationForest {
    trees: Vec<IsoNode>,
    sample_size: usize,
    dims: usize,
}

impl IsolationForest {
    /// Fits `num_trees` trees, each on a fresh uniform subsample.
    pub fn fit<R: Rng + ?Sized>(
        points: &Matrix,
        params: &ForestParams,
        rng: &mut R,
    ) -> Result<Self> {
        if points.rows() < 2 {
            return Err(Error::invalid("isolation forest needs at least 2 points"));
        }
        if params.num_trees == 0 || params.subsample < 2 {
            return Err(Error::invalid(
                "forest needs at least one tree and subsample >= 2",
            ));
        }
        let sample_size = params.subsample.min(points.rows());
        let depth_limit = params
            .max_depth
            .unwrap_or_else(|| (sample_size as f64).log2().ceil() as usize);

        let all_ids: Vec<usize> = (0..points.rows()).collect();
        let trees = (0..params.num_trees)
            .map(|_| {
                let mut ids = all_ids.clone();
                ids.shuffle(rng);
                ids.truncate(sample_size);
                build_node(points, &ids, 0, depth_limit, rng)
            })
            .collect();
        Ok(IsolationForest {
            trees,
            sample_size,
            dims: points.cols(),
        })
    }

    /// Anomaly score in `(0, 1]`; higher means more isolated.
    pub fn score(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.dims {
            return Err(Error::ShapeMismatch {
                context: "IsolationForest::score",
                expected: format!("{} dims", self.dims),
                actual: format!("{} dims", point.len()),
            });
        }
        let total: f64 = self.trees.iter().map(|t| path_length(t, point, 0)).sum();
        let mean = total / self.trees.len() as f64;
        Ok(2.0_f64.powf(-mean / average_path_length(self.sample_size)))
    }

    pub fn trees(&self) -> &[IsoNode] {
        &self.trees
    }

    pub fn sample_size(&self) -> usize {
        self.sample_size
    }
}

fn build_node<R: Rng + ?Sized>(
    points: &Matrix,
    ids: &[usize],
    depth: usize,
    depth_limit: usize,
    rng: &mut R,
) -> IsoNode {
    if ids.len() <= 1 || depth >= depth_limit {
        return IsoNode::Leaf { size: ids.len() };
    }
    // Candidate features must have a nonzero value range on this node.
    let mut ranges: Vec<(usize, f64, f64)> = Vec::new();
    for feature in 0..points.cols() {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &id in ids {
            let v = points.get(id, feature);
            min = min.min(v);
            max = max.max(v);
        }
        if max > min {
            ranges.push((feature, min, max));
        }
    }
    let Some(&(feature, min, max)) = ranges.as_slice().choose(rng) else {
        // Every feature is degenerate: the points are identical.
        return IsoNode::Leaf { size: ids.len() };
    };
    let threshold = rng.gen_range(min..max);
    let (left_ids, right_ids): (Vec<usize>, Vec<usize>) = ids
        .iter()
        .partition(|&&id| points.get(id, feature) < threshold);
    // A degenerate cut (possible when threshold == min) still terminates:
    // depth grows every level.
    IsoNode::Split {
        feature,
        threshold,
        left: Box::new(build_node(points, &left_ids, depth + 1, depth_limit, rng)),
        right: Box::new(build_node(points, &right_ids, depth + 1, depth_limit, rng)),
    }
}

fn path_length(node: &IsoNode, point: &[f64], depth: usize) -> f64 {
    match node {
        IsoNode::Leaf { size } => depth as f64 + average_path_length(*size),
        IsoNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            let child = if point[*feature] < *threshold {
                left
            } else {
                right
            };
            path_length(child, point, depth + 1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn c_factor_matches_the_closed_form() {
        // c(2) = 2 H(1) - 1 = 2 * 0.5772156649 - 1
        assert!((average_path_length(2) - (2.0 * EULER_MASCHERONI - 1.0)).abs() < 1e-12);
        assert_eq!(average_path_length(0), 0.0);
        assert_eq!(average_path_length(1), 0.0);
        // c(256) is about 10.24 for the standard subsample size.
        assert!((average_path_length(256) - 10.244).abs() < 0.01);
    }

    #[test]
    fn identical_points_all_score_the_same() {
        let points = Matrix::from_rows(&vec![vec![0.5, 0.5]; 10]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let forest = IsolationForest::fit(
            &points,
            &ForestParams {
                num_trees: 20,
                subsample: 8,
                max_depth: None,
            },
            &mut rng,
        )
        .unwrap();
        let first = forest.score(points.row(0)).unwrap();
        for r in 1..points.rows() {
            assert_eq!(forest.score(points.row(r)).unwrap(), first);
        }
    }

    #[test]
    fn planted_outlier_scores_strictly_highest() {
        for seed in 0..5u64 {
            let mut rows = vec![vec![0.0, 0.0]; 20];
            for (i, row) in rows.iter_mut().enumerate().take(20) {
                row[0] = (i as f64) * 1e-3;
                row[1] = -(i as f64) * 1e-3;
            }
            rows.push(vec![100.0, -100.0]);
            let points = Matrix::from_rows(&rows).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let forest = IsolationForest::fit(
                &points,
                &ForestParams {
                    num_trees: 100,
                    subsample: 16,
                    max_depth: None,
                },
                &mut rng,
            )
            .unwrap();
            let outlier = forest.score(points.row(20)).unwrap();
            for r in 0..20 {
                assert!(
                    forest.score(points.row(r)).unwrap() < outlier,
                    "seed {seed}, row {r}"
                );
            }
        }
    }

    #[test]
    fn scores_stay_in_the_unit_interval() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut points = Matrix::zeros(50, 3);
        for v in points.as_mut_slice() {
            *v = rng.gen_range(-5.0..5.0);
        }
        let forest = IsolationForest::fit(&points, &ForestParams::default(), &mut rng).unwrap();
        for r in 0..points.rows() {
            let s = forest.score(points.row(r)).unwrap();
            assert!(s > 0.0 && s <= 1.0, "score {s}");
        }
    }

    #[test]
    fn deeper_paths_mean_lower_scores() {
        // Single hand-built tree: isolation at depth 1 vs depth 3.
        let shallow = IsolationForest {
            trees: vec![IsoNode::Split {
                feature: 0,
                threshold: 0.5,
                left: Box::new(IsoNode::Leaf { size: 1 }),
                right: Box::new(IsoNode::Leaf { size: 1 }),
            }],
            sample_size: 2,
            dims: 1,
        };
        let deep = IsolationForest {
            trees: vec![IsoNode::Split {
                feature: 0,
                threshold: 0.5,
                left: Box::new(IsoNode::Split {
                    feature: 0,
                    threshold: 0.25,
                    left: Box::new(IsoNode::Split {
                        feature: 0,
                        threshold: 0.1,
                        left: Box::new(IsoNode::Leaf { size: 1 }),
                        right: Box::new(IsoNode::Leaf { size: 1 }),
                    }),
                    right: Box::new(IsoNode::Leaf { size: 1 }),
                }),
                right: Box::new(IsoNode::Leaf { size: 1 }),
            }],
            sample_size: 2,
            dims: 1,
        };
        let hi = shallow.score(&[0.0]).unwrap();
        let lo = deep.score(&[0.0]).unwrap();
        assert!(lo < hi);
        // Depth-1 isolation with psi = 2: score = 2^(-1 / c(2)).
        let expected = 2.0_f64.powf(-1.0 / average_path_length(2));
        assert!((hi - expected).abs() < 1e-12);
    }

    #[test]
    fn scoring_is_deterministic_after_fit() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut points = Matrix::zeros(30, 2);
        for v in points.as_mut_slice() {
            *v = rng.gen_range(0.0..1.0);
        }
        let forest = IsolationForest::fit(&points, &ForestParams::default(), &mut rng).unwrap();
        let a = forest.score(points.row(3)).unwrap();
        let b = forest.score(points.row(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let points = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let forest = IsolationForest::fit(&points, &ForestParams::default(), &mut rng).unwrap();
        assert!(forest.score(&[0.0]).is_err());
    }
}

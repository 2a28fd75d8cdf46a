//! Source/target class selection.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{euclidean_distance, DenseNet, Matrix};

use super::surrogate::{LabelEstimates, UNRECOGNIZED};

/// The attack's class pair: triggered `source` inputs should be classified
/// as `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassPair {
    pub source: usize,
    pub target: usize,
}

/// How the pair is chosen from the estimated classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionStrategy {
    /// Uniformly random distinct pair.
    Random,
    /// The pair with the least mean pairwise embedding distance.
    Optimal,
}

/// Picks the source/target classes from the adversary's own embeddings and
/// label estimates. The pair is oriented by ascending class id.
pub fn select_classes<R: Rng + ?Sized>(
    strategy: SelectionStrategy,
    bottom: &DenseNet,
    shard_rows: &Matrix,
    estimates: &LabelEstimates,
    rng: &mut R,
) -> Result<ClassPair> {
    if estimates.len() != shard_rows.rows() {
        return Err(Error::invalid("estimates do not align with shard rows"));
    }
    let mut classes: Vec<usize> = estimates
        .iter()
        .copied()
        .filter(|&c| c != UNRECOGNIZED)
        .collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid(
            "fewer than two estimated classes; cannot select a pair",
        ));
    }

    let (a, b) = match strategy {
        SelectionStrategy::Random => {
            let i = rng.gen_range(0..classes.len());
            let mut j = rng.gen_range(0..classes.len() - 1);
            if j >= i {
                j += 1;
            }
            (classes[i.min(j)], classes[i.max(j)])
        }
        SelectionStrategy::Optimal => {
            let embeddings = bottom.forward(shard_rows)?.into_output();
            let members = |class: usize| -> Vec<usize> {
                estimates
                    .iter()
                    .enumerate()
                    .filter(|&(_, &e)| e == class)
                    .map(|(i, _)| i)
                    .collect()
            };
            let mut best: Option<((usize, usize), f64)> = None;
            for (ai, &ca) in classes.iter().enumerate() {
                let rows_a = members(ca);
                for &cb in &classes[ai + 1..] {
                    let rows_b = members(cb);
                    let mut total = 0.0;
                    for &ra in &rows_a {
                        for &rb in &rows_b {
                            total +=
                                euclidean_distance(embeddings.row(ra), embeddings.row(rb));
                        }
                    }
                    let mean = total / (rows_a.len() * rows_b.len()) as f64;
                    // Strict < keeps the lexicographically first pair on ties.
                    if best.map_or(true, |(_, d)| mean < d) {
                        best = Some(((ca, cb), mean));
                    }
                }
            }
            best.expect("at least one pair exists").0
        }
    };
    Ok(ClassPair {
        source: a,
        target: b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_bottom(dim: usize) -> DenseNet {
        let mut w = Matrix::zeros(dim, dim);
        for i in 0..dim {
            w.set(i, i, 1.0);
        }
        DenseNet::from_layers(vec![Layer::new(w, vec![0.0; dim], Activation::Identity).unwrap()])
            .unwrap()
    }

    #[test]
    fn optimal_picks_the_two_nearest_clusters() {
        // 1-D clusters at 0, 1, 10 under an identity bottom.
        let rows = Matrix::from_rows(&[
            vec![0.0],
            vec![0.1],
            vec![1.0],
            vec![0.9],
            vec![10.0],
            vec![10.1],
        ])
        .unwrap();
        let estimates = vec![0, 0, 1, 1, 2, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pair = select_classes(
            SelectionStrategy::Optimal,
            &identity_bottom(1),
            &rows,
            &estimates,
            &mut rng,
        )
        .unwrap();
        assert_eq!(pair, ClassPair { source: 0, target: 1 });
    }

    #[test]
    fn optimal_matches_brute_force_table() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 40;
        let mut rows = Matrix::zeros(n, 3);
        for v in rows.as_mut_slice() {
            *v = rng.gen_range(-2.0..2.0);
        }
        let estimates: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4usize)).collect();
        let bottom = identity_bottom(3);
        let pair = select_classes(
            SelectionStrategy::Optimal,
            &bottom,
            &rows,
            &estimates,
            &mut rng,
        )
        .unwrap();

        // Brute-force oracle over the raw rows (identity bottom).
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for a in 0..4usize {
            for b in (a + 1)..4 {
                let ra: Vec<usize> = (0..n).filter(|&i| estimates[i] == a).collect();
                let rb: Vec<usize> = (0..n).filter(|&i| estimates[i] == b).collect();
                if ra.is_empty() || rb.is_empty() {
                    continue;
                }
                let mut total = 0.0;
                for &i in &ra {
                    for &j in &rb {
                        total += euclidean_distance(rows.row(i), rows.row(j));
                    }
                }
                let mean = total / (ra.len() * rb.len()) as f64;
                if mean < best.2 {
                    best = (a, b, mean);
                }
            }
        }
        assert_eq!((pair.source, pair.target), (best.0, best.1));
    }

    #[test]
    fn two_classes_leave_no_choice() {
        let rows = Matrix::from_rows(&[vec![0.0], vec![5.0]]).unwrap();
        let estimates = vec![3, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for strategy in [SelectionStrategy::Random, SelectionStrategy::Optimal] {
            let pair = select_classes(
                strategy,
                &identity_bottom(1),
                &rows,
                &estimates,
                &mut rng,
            )
            .unwrap();
            assert_eq!(pair, ClassPair { source: 1, target: 3 });
        }
    }

    #[test]
    fn permuting_rows_within_classes_keeps_the_optimal_pair() {
        let rows = Matrix::from_rows(&[
            vec![0.0],
            vec![0.2],
            vec![1.1],
            vec![0.8],
            vec![9.0],
            vec![9.5],
        ])
        .unwrap();
        let estimates = vec![0, 0, 1, 1, 2, 2];
        let permuted_rows = rows.select_rows(&[1, 0, 3, 2, 5, 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bottom = identity_bottom(1);
        let a = select_classes(
            SelectionStrategy::Optimal,
            &bottom,
            &rows,
            &estimates,
            &mut rng,
        )
        .unwrap();
        let b = select_classes(
            SelectionStrategy::Optimal,
            &bottom,
            &permuted_rows,
            &estimates,
            &mut rng,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_estimated_class_is_rejected() {
        let rows = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let estimates = vec![2, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(select_classes(
            SelectionStrategy::Random,
            &identity_bottom(1),
            &rows,
            &estimates,
            &mut rng,
        )
        .is_err());
    }

    #[test]
    fn unrecognized_estimates_never_enter_the_pair() {
        let rows = Matrix::from_rows(&[vec![0.0], vec![0.1], vec![5.0], vec![5.1]]).unwrap();
        let estimates = vec![UNRECOGNIZED, 0, 1, UNRECOGNIZED];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pair = select_classes(
            SelectionStrategy::Optimal,
            &identity_bottom(1),
            &rows,
            &estimates,
            &mut rng,
        )
        .unwrap();
        assert_eq!(pair, ClassPair { source: 0, target: 1 });
    }
}

//! Per-class anomaly exclusion.

use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Matrix;

use super::iforest::{ForestParams, IsolationForest};
use super::{DefenseConfig, DefenseState};

/// For every class and every participant, fits a forest on that class's
/// embedding rows and marks the `ceil(pct% * class size)` highest-scoring
/// rows; returns the union over participants as batch row positions.
///
/// Classes with fewer than two members cannot host a forest and are left
/// alone. Rows are never modified, only excluded from the round's loss.
pub fn filter_class_anomalies(
    per_participant_embeddings: &[Matrix],
    batch_labels: &[usize],
    budget_pct: f64,
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if !(0.0..100.0).contains(&budget_pct) {
        return Err(Error::invalid(
            "anomaly budget must be in [0, 100); 100 would empty a class",
        ));
    }
    if budget_pct == 0.0 {
        return Ok(Vec::new());
    }
    let n = batch_labels.len();
    for emb in per_participant_embeddings {
        if emb.rows() != n {
            return Err(Error::invalid(
                "embedding batch rows differ from label count",
            ));
        }
    }

    let classes: BTreeSet<usize> = batch_labels.iter().copied().collect();
    let mut excluded = BTreeSet::new();
    for class in classes {
        let members: Vec<usize> = (0..n).filter(|&i| batch_labels[i] == class).collect();
        if members.len() < 2 {
            continue;
        }
        let cut = ((budget_pct / 100.0) * members.len() as f64).ceil() as usize;
        for emb in per_participant_embeddings {
            let rows = emb.select_rows(&members)?;
            let forest = IsolationForest::fit(&rows, params, rng)?;
            let mut scored: Vec<(usize, f64)> = members
                .iter()
                .enumerate()
                .map(|(pos, &row)| Ok((row, forest.score(rows.row(pos))?)))
                .collect::<Result<_>>()?;
            // Highest score first; ties keep the lower row id first for
            // determinism.
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores").then(a.0.cmp(&b.0)));
            excluded.extend(scored.iter().take(cut).map(|(row, _)| *row));
        }
    }
    Ok(excluded.into_iter().collect())
}

/// Round-level entry point honoring the refit cadence: between refits the
/// previous exclusion set is reused.
pub fn anomalous_batch_rows(
    per_participant_embeddings: &[Matrix],
    batch_labels: &[usize],
    config: &DefenseConfig,
    state: &mut DefenseState,
    round: usize,
) -> Result<Vec<usize>> {
    if let Some((fitted_round, cached)) = &state.cached {
        if round.saturating_sub(*fitted_round) < config.refit_every {
            return Ok(cached.clone());
        }
    }
    let excluded = filter_class_anomalies(
        per_participant_embeddings,
        batch_labels,
        config.anomaly_budget_pct,
        &config.forest,
        &mut state.rng,
    )?;
    state.cached = Some((round, excluded.clone()));
    Ok(excluded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn clustered_embeddings(
        per_class: usize,
        outliers_per_class: usize,
        seed: u64,
    ) -> (Vec<Matrix>, Vec<usize>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut planted = Vec::new();
        for class in 0..2usize {
            let center = class as f64 * 3.0;
            for i in 0..per_class {
                let far = i < outliers_per_class;
                if far {
                    planted.push(rows.len());
                }
                let scale = if far { 40.0 } else { 1.0 };
                rows.push(vec![
                    center + scale * rng.gen_range(0.5..1.0),
                    -center + scale * rng.gen_range(0.5..1.0),
                ]);
                labels.push(class);
            }
        }
        (vec![Matrix::from_rows(&rows).unwrap()], labels, planted)
    }

    #[test]
    fn zero_budget_excludes_nothing() {
        let (emb, labels, _) = clustered_embeddings(20, 2, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out =
            filter_class_anomalies(&emb, &labels, 0.0, &ForestParams::default(), &mut rng)
                .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn full_budget_is_rejected() {
        let (emb, labels, _) = clustered_embeddings(10, 0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(
            filter_class_anomalies(&emb, &labels, 100.0, &ForestParams::default(), &mut rng)
                .is_err()
        );
    }

    #[test]
    fn exclusion_count_is_the_ceiling_per_class() {
        let (emb, labels, _) = clustered_embeddings(30, 0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out =
            filter_class_anomalies(&emb, &labels, 10.0, &ForestParams::default(), &mut rng)
                .unwrap();
        // One participant: exactly ceil(0.1 * 30) = 3 per class.
        assert_eq!(out.len(), 6);
        let per_class_0 = out.iter().filter(|&&r| labels[r] == 0).count();
        assert_eq!(per_class_0, 3);
    }

    #[test]
    fn planted_outliers_are_mostly_recovered() {
        // 10% planted far outliers per class; mean recovery over 5 seeds
        // should clear 80%.
        let mut recovered = 0usize;
        let mut total = 0usize;
        for seed in 0..5u64 {
            let (emb, labels, planted) = clustered_embeddings(30, 3, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let out =
                filter_class_anomalies(&emb, &labels, 10.0, &ForestParams::default(), &mut rng)
                    .unwrap();
            let set: BTreeSet<usize> = out.into_iter().collect();
            recovered += planted.iter().filter(|p| set.contains(p)).count();
            total += planted.len();
        }
        assert!(
            recovered as f64 / total as f64 >= 0.8,
            "recovered {recovered}/{total}"
        );
    }

    #[test]
    fn refit_cadence_reuses_the_cached_exclusions() {
        let (emb, labels, _) = clustered_embeddings(20, 2, 7);
        let config = DefenseConfig {
            dp_variance: 0.0,
            anomaly_budget_pct: 10.0,
            forest: ForestParams::default(),
            refit_every: 5,
            seed: 9,
        };
        let mut state = DefenseState::new(&config);
        let first = anomalous_batch_rows(&emb, &labels, &config, &mut state, 0).unwrap();
        let rng_after_fit = state.rng.clone();
        let second = anomalous_batch_rows(&emb, &labels, &config, &mut state, 3).unwrap();
        assert_eq!(first, second);
        assert_eq!(state.rng, rng_after_fit, "cached call must not draw rng");
        let _third = anomalous_batch_rows(&emb, &labels, &config, &mut state, 5).unwrap();
        assert_ne!(state.rng, rng_after_fit, "refit must draw rng");
    }
}

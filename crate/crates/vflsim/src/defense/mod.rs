//! Server-side countermeasures.
//!
//! Two defenses transform the embeddings the server receives, every round,
//! before the top model consumes them: independent Gaussian noise per entry,
//! and per-class isolation-forest filtering that drops the most anomalous
//! slice of every class from the round's loss and gradients.

mod filter;
mod iforest;
mod noise;

pub use filter::{anomalous_batch_rows, filter_class_anomalies};
pub use iforest::{average_path_length, ForestParams, IsoNode, IsolationForest};
pub use noise::apply_dp_noise;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Defense knobs carried by the server; zero values switch a defense off.
#[derive(Debug, Clone, PartialEq)]
pub struct DefenseConfig {
    /// Variance of the Gaussian noise added to every embedding entry.
    pub dp_variance: f64,
    /// Percentage of each class to exclude as anomalous (0 disables).
    pub anomaly_budget_pct: f64,
    pub forest: ForestParams,
    /// Fit fresh forests every this many rounds (1 = every round).
    pub refit_every: usize,
    pub seed: u64,
}

impl DefenseConfig {
    /// Both defenses disabled.
    pub fn off() -> Self {
        DefenseConfig {
            dp_variance: 0.0,
            anomaly_budget_pct: 0.0,
            forest: ForestParams::default(),
            refit_every: 1,
            seed: 0,
        }
    }

    pub fn enabled(&self) -> bool {
        self.dp_variance > 0.0 || self.anomaly_budget_pct > 0.0
    }
}

/// Mutable defense state owned by the server across rounds.
#[derive(Debug, Clone)]
pub struct DefenseState {
    pub rng: ChaCha8Rng,
    /// (round fitted, exclusions) cache honoring the refit cadence.
    pub(crate) cached: Option<(usize, Vec<usize>)>,
}

impl DefenseState {
    pub fn new(config: &DefenseConfig) -> Self {
        DefenseState {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            cached: None,
        }
    }
}

//! Experiment configuration: a single TOML document, strictly parsed.
//!
//! Unknown keys are errors, and cross-field consistency is checked before
//! any compute starts. See `configs/blobs.toml` in the repository root for
//! an annotated example.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversary::{
    AttackSchedule, EpsilonRule, FillPattern, SelectionStrategy, TriggerPlacement,
    TriggerTemplate,
};
use crate::data::GridDims;
use crate::defense::{DefenseConfig, ForestParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds to run; the CLI may override with a single seed.
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<String>,
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    #[serde(default)]
    pub attack: Option<AttackConfig>,
    #[serde(default)]
    pub defense: DefenseSection,
    #[serde(default)]
    pub report: ReportConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Blobs {
        classes: usize,
        features: usize,
        per_class_train: usize,
        per_class_test: usize,
        spread: f64,
        center_distance: f64,
    },
    Grid {
        classes: usize,
        height: usize,
        width: usize,
        per_class_train: usize,
        per_class_test: usize,
        noise: f64,
    },
    Csv {
        train_path: String,
        test_path: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub participants: usize,
    /// Adversary-controlled participant ids; empty when no attack runs.
    #[serde(default)]
    pub adversaries: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden widths of every bottom model.
    pub bottom_hidden: Vec<usize>,
    /// Embedding width each participant submits.
    pub embedding: usize,
    /// Hidden widths of the server's top model.
    pub top_hidden: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    /// Mini-batch size; absent means full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Round at which label inference stops and poisoning begins.
    pub start_round: usize,
    pub budget_pct: f64,
    pub selection: SelectionName,
    /// Absolute L2 bound on poison noise; takes precedence over the
    /// relative rules below.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Bound as a fraction of the mean target-row norm.
    #[serde(default)]
    pub epsilon_factor: Option<f64>,
    /// Bound as a fraction of the mean target-to-triggered-source input
    /// distance; the default rule, at 0.9.
    #[serde(default)]
    pub epsilon_pair_factor: Option<f64>,
    #[serde(default = "default_poison_steps")]
    pub poison_steps: usize,
    #[serde(default = "default_poison_lr")]
    pub poison_lr: f64,
    #[serde(default = "default_refresh")]
    pub refresh_every: usize,
    #[serde(default = "default_surrogate_hidden")]
    pub surrogate_hidden: usize,
    #[serde(default = "default_surrogate_epochs")]
    pub surrogate_epochs: usize,
    #[serde(default = "default_surrogate_lr")]
    pub surrogate_lr: f64,
    #[serde(default = "default_threshold")]
    pub unrecognized_threshold: f64,
    pub auxiliary: AuxiliaryConfig,
    pub trigger: TriggerConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SelectionName {
    Random,
    Optimal,
}

impl From<SelectionName> for SelectionStrategy {
    fn from(name: SelectionName) -> Self {
        match name {
            SelectionName::Random => SelectionStrategy::Random,
            SelectionName::Optimal => SelectionStrategy::Optimal,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AuxiliaryConfig {
    pub per_class: usize,
    #[serde(default = "default_fraction")]
    pub known_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "mode", rename_all = "snake_case")]
pub enum TriggerConfig {
    Grid {
        /// Window height and width.
        window: (usize, usize),
        #[serde(default = "default_fill")]
        fill: f64,
        /// Second checkerboard value; absent means a constant fill.
        #[serde(default)]
        fill_alt: Option<f64>,
        #[serde(default = "default_placement")]
        placement: PlacementName,
    },
    Tabular {
        feature_count: usize,
        /// Absent picks a value outside the usual range automatically.
        #[serde(default)]
        fill_value: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum PlacementName {
    Saliency,
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseSection {
    pub dp_variance: f64,
    pub anomaly_budget_pct: f64,
    pub forest_trees: usize,
    pub forest_subsample: usize,
    pub refit_every: usize,
}

impl Default for DefenseSection {
    fn default() -> Self {
        DefenseSection {
            dp_variance: 0.0,
            anomaly_budget_pct: 0.0,
            forest_trees: 100,
            forest_subsample: 256,
            refit_every: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Attack metrics are evaluated every this many rounds plus the final
    /// round.
    pub checkpoint_every: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { checkpoint_every: 5 }
    }
}

/// Default poison bound: 35% of the way to the paired triggered source.
const DEFAULT_PAIR_FACTOR: f64 = 0.35;

fn default_true() -> bool {
    true
}
fn default_poison_steps() -> usize {
    150
}
fn default_poison_lr() -> f64 {
    1.0
}
fn default_refresh() -> usize {
    1
}
fn default_surrogate_hidden() -> usize {
    32
}
fn default_surrogate_epochs() -> usize {
    200
}
fn default_surrogate_lr() -> f64 {
    0.3
}
fn default_threshold() -> f64 {
    0.5
}
fn default_fraction() -> f64 {
    1.0
}
fn default_fill() -> f64 {
    1.0
}
fn default_placement() -> PlacementName {
    PlacementName::Saliency
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config("<toml>", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.dataset {
            DatasetConfig::Blobs { classes, .. } | DatasetConfig::Grid { classes, .. } => {
                Some(*classes)
            }
            DatasetConfig::Csv { .. } => None,
        }
    }

    pub fn num_features(&self) -> Option<usize> {
        match &self.dataset {
            DatasetConfig::Blobs { features, .. } => Some(*features),
            DatasetConfig::Grid { height, width, .. } => Some(height * width),
            DatasetConfig::Csv { .. } => None,
        }
    }

    pub fn grid_dims(&self) -> Option<GridDims> {
        match &self.dataset {
            DatasetConfig::Grid { height, width, .. } => Some(GridDims {
                height: *height,
                width: *width,
            }),
            _ => None,
        }
    }

    /// Cross-field validation with field-path diagnostics.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        let k = self.split.participants;
        if k == 0 {
            return Err(Error::config("split.participants", "must be at least 1"));
        }
        if let Some(m) = self.num_features() {
            if m < k {
                return Err(Error::config(
                    "split.participants",
                    format!("cannot split {m} features over {k} participants"),
                ));
            }
        }
        for &id in &self.split.adversaries {
            if id >= k {
                return Err(Error::config(
                    "split.adversaries",
                    format!("participant id {id} out of range for {k} participants"),
                ));
            }
        }
        if self.model.embedding == 0 {
            return Err(Error::config("model.embedding", "must be positive"));
        }
        if self.training.rounds == 0 {
            return Err(Error::config("training.rounds", "must be positive"));
        }
        if !(self.training.learning_rate > 0.0) {
            return Err(Error::config("training.learning_rate", "must be positive"));
        }
        if let Some(batch) = self.training.batch_size {
            if batch == 0 {
                return Err(Error::config(
                    "training.batch_size",
                    "omit the key for full batch instead of 0",
                ));
            }
        }

        if !(0.0..100.0).contains(&self.defense.anomaly_budget_pct) {
            return Err(Error::config(
                "defense.anomaly_budget_pct",
                "must be in [0, 100); 100 would empty a class",
            ));
        }
        if self.defense.dp_variance < 0.0 {
            return Err(Error::config("defense.dp_variance", "must be nonnegative"));
        }
        if self.defense.refit_every == 0 {
            return Err(Error::config("defense.refit_every", "must be positive"));
        }

        if let Some(attack) = &self.attack {
            if attack.enabled {
                self.validate_attack(attack)?;
            }
        }
        Ok(())
    }

    fn validate_attack(&self, attack: &AttackConfig) -> Result<()> {
        let k = self.split.participants;
        let m_attackers = self.split.adversaries.len();
        if m_attackers == 0 {
            return Err(Error::config(
                "split.adversaries",
                "attack enabled but no adversary participants named",
            ));
        }
        if m_attackers >= k {
            return Err(Error::config(
                "split.adversaries",
                "adversaries must be a strict minority of participants (M < K)",
            ));
        }
        if attack.start_round == 0 || attack.start_round >= self.training.rounds {
            return Err(Error::config(
                "attack.start_round",
                format!(
                    "must lie strictly inside (0, {}) rounds",
                    self.training.rounds
                ),
            ));
        }
        if !(0.0..=100.0).contains(&attack.budget_pct) {
            return Err(Error::config("attack.budget_pct", "must be in [0, 100]"));
        }
        if let Some(e) = attack.epsilon {
            if e < 0.0 {
                return Err(Error::config("attack.epsilon", "must be nonnegative"));
            }
        }
        for (path, value) in [
            ("attack.epsilon_factor", attack.epsilon_factor),
            ("attack.epsilon_pair_factor", attack.epsilon_pair_factor),
        ] {
            if let Some(v) = value {
                if v < 0.0 {
                    return Err(Error::config(path, "must be nonnegative"));
                }
            }
        }
        let epsilon_rules = usize::from(attack.epsilon.is_some())
            + usize::from(attack.epsilon_factor.is_some())
            + usize::from(attack.epsilon_pair_factor.is_some());
        if epsilon_rules > 1 {
            return Err(Error::config(
                "attack.epsilon",
                "set at most one of epsilon, epsilon_factor, epsilon_pair_factor",
            ));
        }
        if !(attack.auxiliary.known_fraction > 0.0 && attack.auxiliary.known_fraction <= 1.0) {
            return Err(Error::config(
                "attack.auxiliary.known_fraction",
                "must be in (0, 1]",
            ));
        }
        if attack.auxiliary.per_class == 0 {
            return Err(Error::config("attack.auxiliary.per_class", "must be positive"));
        }

        match &attack.trigger {
            TriggerConfig::Grid { window, .. } => {
                let dims = self.grid_dims().ok_or_else(|| {
                    Error::config("attack.trigger", "grid trigger needs a grid dataset")
                })?;
                // The window must fit the narrowest adversary strip.
                let plan = crate::data::SplitPlan::equal_grid(k, dims).map_err(|e| {
                    Error::config("split.participants", e.to_string())
                })?;
                for &id in &self.split.adversaries {
                    let (start, end) = plan.ranges[id];
                    let strip_cols = (end - start) / dims.height;
                    let share = split_share(window.1, m_attackers);
                    if window.0 > dims.height || share > strip_cols {
                        return Err(Error::config(
                            "attack.trigger.window",
                            format!(
                                "window {}x{} (share {share} cols) does not fit participant \
                                 {id}'s {}x{strip_cols} strip",
                                window.0, window.1, dims.height
                            ),
                        ));
                    }
                }
                if window.1 > 0 && m_attackers > window.1 {
                    return Err(Error::config(
                        "attack.trigger.window",
                        "more attackers than trigger columns to divide",
                    ));
                }
            }
            TriggerConfig::Tabular { feature_count, .. } => {
                if self.grid_dims().is_some() {
                    return Err(Error::config(
                        "attack.trigger",
                        "tabular trigger configured on grid data; use mode = \"grid\"",
                    ));
                }
                if *feature_count == 0 {
                    return Err(Error::config(
                        "attack.trigger.feature_count",
                        "must be positive",
                    ));
                }
                if m_attackers > *feature_count {
                    return Err(Error::config(
                        "attack.trigger.feature_count",
                        "more attackers than trigger features to divide",
                    ));
                }
            }
        }
        Ok(())
    }

    /// The attack schedule assembled from this config, when an enabled
    /// attack block is present.
    pub fn attack_schedule(&self) -> Option<AttackSchedule> {
        let attack = self.attack.as_ref().filter(|a| a.enabled)?;
        let epsilon = if let Some(e) = attack.epsilon {
            EpsilonRule::Absolute(e)
        } else if let Some(f) = attack.epsilon_factor {
            EpsilonRule::RelativeToTargetNorm(f)
        } else {
            EpsilonRule::RelativeToPairDistance(
                attack.epsilon_pair_factor.unwrap_or(DEFAULT_PAIR_FACTOR),
            )
        };
        Some(AttackSchedule {
            total_rounds: self.training.rounds,
            start_round: attack.start_round,
            budget_pct: attack.budget_pct,
            epsilon,
            selection: attack.selection.into(),
            poison_steps: attack.poison_steps,
            poison_lr: attack.poison_lr,
            refresh_every: attack.refresh_every,
            surrogate_hidden: attack.surrogate_hidden,
            surrogate_epochs: attack.surrogate_epochs,
            surrogate_lr: attack.surrogate_lr,
            unrecognized_threshold: attack.unrecognized_threshold,
        })
    }

    pub fn trigger_template(&self) -> Option<TriggerTemplate> {
        let attack = self.attack.as_ref().filter(|a| a.enabled)?;
        Some(match &attack.trigger {
            TriggerConfig::Grid {
                window,
                fill,
                fill_alt,
                placement,
            } => TriggerTemplate::Grid {
                window_height: window.0,
                window_width: window.1,
                fill: match fill_alt {
                    Some(alt) => FillPattern::Checkerboard {
                        even: *fill,
                        odd: *alt,
                    },
                    None => FillPattern::Constant(*fill),
                },
                placement: match placement {
                    PlacementName::Saliency => TriggerPlacement::Saliency,
                    PlacementName::Random => TriggerPlacement::Random,
                },
            },
            TriggerConfig::Tabular {
                feature_count,
                fill_value,
            } => TriggerTemplate::Tabular {
                feature_count: *feature_count,
                fill_value: *fill_value,
            },
        })
    }

    pub fn defense_config(&self, seed: u64) -> DefenseConfig {
        DefenseConfig {
            dp_variance: self.defense.dp_variance,
            anomaly_budget_pct: self.defense.anomaly_budget_pct,
            forest: ForestParams {
                num_trees: self.defense.forest_trees,
                subsample: self.defense.forest_subsample,
                max_depth: None,
            },
            refit_every: self.defense.refit_every,
            seed,
        }
    }
}

/// Largest per-attacker share when a width is divided among `parts`.
fn split_share(width: usize, parts: usize) -> usize {
    if parts == 0 {
        return width;
    }
    width / parts + usize::from(width % parts != 0)
}

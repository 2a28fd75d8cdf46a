//! Config-driven experiment runner.

mod config;
mod report;
mod runner;
mod sweep;

pub use config::{
    AttackConfig, AuxiliaryConfig, DatasetConfig, DefenseSection, ExperimentConfig, ModelConfig,
    PlacementName, ReportConfig, SelectionName, SplitConfig, TrainingConfig, TriggerConfig,
};
pub use report::{mean_std, AsrCheckpoint, ExperimentReport, SweepRow, SweepSummary, SweepTable};
pub use runner::run_experiment;
pub use sweep::{run_sweep, SweepAxis};

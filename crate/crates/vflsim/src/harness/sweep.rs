//! Parameter sweeps: one experiment per (value, seed), fanned out in
//! parallel, aggregated per value.

use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::config::{ExperimentConfig, SelectionName, TriggerConfig};
use super::report::{mean_std, SweepRow, SweepSummary, SweepTable};
use super::runner::run_experiment;

/// Scalar knobs a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    StartRound,
    BudgetPct,
    WindowSize,
    DpVariance,
    Participants,
    Selection,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "start_round" | "r_n" => Ok(SweepAxis::StartRound),
            "budget_pct" | "budget" => Ok(SweepAxis::BudgetPct),
            "window" | "window_size" => Ok(SweepAxis::WindowSize),
            "dp_variance" | "sigma2" => Ok(SweepAxis::DpVariance),
            "participants" | "k" => Ok(SweepAxis::Participants),
            "selection" | "strategy" => Ok(SweepAxis::Selection),
            other => Err(Error::invalid(format!(
                "`{other}` is not sweepable; use start_round, budget_pct, window, \
                 dp_variance, participants, or selection"
            ))),
        }
    }
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::StartRound => "start_round",
            SweepAxis::BudgetPct => "budget_pct",
            SweepAxis::WindowSize => "window",
            SweepAxis::DpVariance => "dp_variance",
            SweepAxis::Participants => "participants",
            SweepAxis::Selection => "selection",
        }
    }

    /// A copy of `base` with this axis set to `value`, re-validated.
    pub fn apply(&self, base: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let mut config = base.clone();
        let attack_required = matches!(
            self,
            SweepAxis::StartRound
                | SweepAxis::BudgetPct
                | SweepAxis::WindowSize
                | SweepAxis::Selection
        );
        if attack_required && config.attack.as_ref().map_or(true, |a| !a.enabled) {
            return Err(Error::invalid(format!(
                "sweeping {} needs an enabled attack block",
                self.name()
            )));
        }
        match self {
            SweepAxis::StartRound => {
                config.attack.as_mut().expect("checked").start_round = parse(value)?;
            }
            SweepAxis::BudgetPct => {
                config.attack.as_mut().expect("checked").budget_pct = parse(value)?;
            }
            SweepAxis::WindowSize => {
                let size: usize = parse(value)?;
                match &mut config.attack.as_mut().expect("checked").trigger {
                    TriggerConfig::Grid { window, .. } => *window = (size, size),
                    TriggerConfig::Tabular { feature_count, .. } => *feature_count = size,
                }
            }
            SweepAxis::DpVariance => {
                config.defense.dp_variance = parse(value)?;
            }
            SweepAxis::Participants => {
                config.split.participants = parse(value)?;
            }
            SweepAxis::Selection => {
                config.attack.as_mut().expect("checked").selection = match value {
                    "random" => SelectionName::Random,
                    "optimal" => SelectionName::Optimal,
                    other => {
                        return Err(Error::invalid(format!(
                            "selection must be `random` or `optimal`, got `{other}`"
                        )))
                    }
                };
            }
        }
        config.validate()?;
        Ok(config)
    }
}

fn parse<T: FromStr>(value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("cannot parse sweep value `{value}`")))
}

/// Runs `values x seeds` experiments and aggregates one summary row per
/// value. Experiments are independent and run concurrently.
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    seeds: &[u64],
) -> Result<SweepTable> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("sweep needs at least one value and one seed"));
    }
    // Validate every point before any compute.
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .map(|v| axis.apply(base, v))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|vi| seeds.iter().map(move |&s| (vi, s)))
        .collect();
    let results: Vec<(usize, u64, super::report::ExperimentReport)> = jobs
        .par_iter()
        .map(|&(vi, seed)| run_experiment(&configs[vi], seed).map(|r| (vi, seed, r)))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(results.len());
    for (vi, seed, report) in &results {
        rows.push(SweepRow {
            axis: axis.name().to_string(),
            value: values[*vi].clone(),
            seed: *seed,
            final_mta: report.final_mta,
            final_asr: report.final_asr,
            lia: report.lia,
        });
    }

    let mut summary = Vec::with_capacity(values.len());
    for (vi, value) in values.iter().enumerate() {
        let of_value: Vec<&SweepRow> = rows.iter().filter(|r| r.value == *value).collect();
        let mtas: Vec<f64> = of_value.iter().map(|r| r.final_mta).collect();
        let asrs: Vec<f64> = of_value.iter().filter_map(|r| r.final_asr).collect();
        let lias: Vec<f64> = of_value.iter().filter_map(|r| r.lia).collect();
        let (mean_mta, std_mta) = mean_std(&mtas);
        let (mean_asr, std_asr) = mean_std(&asrs);
        let mean_lia = if lias.is_empty() {
            None
        } else {
            Some(mean_std(&lias).0)
        };
        summary.push(SweepSummary {
            axis: axis.name().to_string(),
            value: values[vi].clone(),
            seeds: of_value.len(),
            mean_mta,
            std_mta,
            mean_asr,
            std_asr,
            mean_lia,
        });
    }

    Ok(SweepTable { rows, summary })
}

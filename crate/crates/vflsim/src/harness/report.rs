//! Machine-readable experiment output.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::ExperimentConfig;

/// ASR measured at one checkpoint round.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AsrCheckpoint {
    pub round: usize,
    pub asr: f64,
}

/// Everything one run produces; serialized as a single JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    /// Clean test accuracy after every round; length equals the round count.
    pub mta_per_round: Vec<f64>,
    /// Attack success rate at checkpoints from the start round on; empty
    /// for clean runs.
    pub asr_checkpoints: Vec<AsrCheckpoint>,
    /// Label-inference accuracy of the consensus estimates at the start
    /// round, measured by the harness against the true labels.
    pub lia: Option<f64>,
    pub final_mta: f64,
    pub final_precision: f64,
    pub final_recall: f64,
    pub final_asr: Option<f64>,
    /// (source, target) the adversary settled on.
    pub class_pair: Option<(usize, usize)>,
    /// Classes covered by the adversary's auxiliary labels.
    pub known_classes: Option<Vec<usize>>,
    pub poisoned_rows: Option<usize>,
    /// Mean triggered-source/poisoned-target embedding distance right after
    /// activation and at the final round.
    pub poison_gap_start: Option<f64>,
    pub poison_gap_final: Option<f64>,
    /// First round whose accuracy reaches 70% of the final accuracy; a
    /// starting-point heuristic for scheduling attacks against a clean run.
    pub suggested_start_round: Option<usize>,
    pub wall_clock_secs: f64,
    pub config: ExperimentConfig,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("bad report JSON: {e}")))
    }

    /// The fields that must not depend on config bookkeeping; used by
    /// equivalence checks between clean-run variants.
    pub fn trajectory_fingerprint(&self) -> (Vec<u64>, Option<u64>) {
        (
            self.mta_per_round.iter().map(|v| v.to_bits()).collect(),
            self.final_asr.map(|v| v.to_bits()),
        )
    }
}

/// One sweep data point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub seed: u64,
    pub final_mta: f64,
    pub final_asr: Option<f64>,
    pub lia: Option<f64>,
}

/// Per-value aggregate over seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub axis: String,
    pub value: String,
    pub seeds: usize,
    pub mean_mta: f64,
    pub std_mta: f64,
    pub mean_asr: f64,
    pub std_asr: f64,
    pub mean_lia: Option<f64>,
}

/// All rows and summaries of one sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

impl SweepTable {
    /// Per-run rows: axis value, seed, final MTA, final ASR, LIA.
    pub fn write_runs_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::invalid(format!("cannot write {}: {e}", path.display())))?;
        w.write_record(["axis", "value", "seed", "final_mta", "final_asr", "lia"])
            .map_err(|e| Error::invalid(e.to_string()))?;
        for row in &self.rows {
            w.write_record([
                row.axis.clone(),
                row.value.clone(),
                row.seed.to_string(),
                row.final_mta.to_string(),
                row.final_asr.map(|v| v.to_string()).unwrap_or_default(),
                row.lia.map(|v| v.to_string()).unwrap_or_default(),
            ])
            .map_err(|e| Error::invalid(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// One summary row per axis value: mean and sample stdev.
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::invalid(format!("cannot write {}: {e}", path.display())))?;
        w.write_record([
            "axis", "value", "seeds", "mean_mta", "std_mta", "mean_asr", "std_asr", "mean_lia",
        ])
        .map_err(|e| Error::invalid(e.to_string()))?;
        for s in &self.summary {
            w.write_record([
                s.axis.clone(),
                s.value.clone(),
                s.seeds.to_string(),
                s.mean_mta.to_string(),
                s.std_mta.to_string(),
                s.mean_asr.to_string(),
                s.std_asr.to_string(),
                s.mean_lia.map(|v| v.to_string()).unwrap_or_default(),
            ])
            .map_err(|e| Error::invalid(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Arithmetic mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

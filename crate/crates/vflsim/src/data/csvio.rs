//! CSV ingestion and export.
//!
//! Format: UTF-8, header row `label,f0,f1,...`, one sample per line, decimal
//! point floats. An optional sidecar file `<path>.meta.json` carries grid
//! dims and the class count:
//!
//! ```json
//! { "grid": [12, 12], "classes": 4 }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

use super::{Dataset, GridDims};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SidecarMeta {
    #[serde(default)]
    grid: Option<(usize, usize)>,
    #[serde(default)]
    classes: Option<usize>,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".meta.json");
    name.into()
}

/// Loads a dataset from `label,f0,f1,...` CSV, honoring a sidecar metadata
/// file when present.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| map_csv_error(&display, e))?;

    {
        let headers = reader.headers().map_err(|e| map_csv_error(&display, e))?;
        if headers.get(0) != Some("label") {
            return Err(Error::DataFormat {
                path: display,
                line: 1,
                message: "first header column must be `label`".to_string(),
            });
        }
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| map_csv_error(&display, e))?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(labels.len() + 2);
        let label_text = record.get(0).unwrap_or("");
        let label: usize = label_text.trim().parse().map_err(|_| Error::DataFormat {
            path: display.clone(),
            line,
            message: format!("label `{label_text}` is not a nonnegative integer"),
        })?;
        let mut row = Vec::with_capacity(record.len().saturating_sub(1));
        for (col, cell) in record.iter().enumerate().skip(1) {
            let value: f64 = cell.trim().parse().map_err(|_| Error::DataFormat {
                path: display.clone(),
                line,
                message: format!("column {col}: `{cell}` is not a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::DataFormat {
                    path: display.clone(),
                    line,
                    message: format!("column {col}: non-finite value"),
                });
            }
            row.push(value);
        }
        labels.push(label);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::DataFormat {
            path: display,
            line: 1,
            message: "no data rows".to_string(),
        });
    }

    let meta_path = sidecar_path(path);
    let meta: SidecarMeta = if meta_path.exists() {
        let text = std::fs::read_to_string(&meta_path)?;
        serde_json::from_str(&text).map_err(|e| Error::DataFormat {
            path: meta_path.display().to_string(),
            line: 1,
            message: e.to_string(),
        })?
    } else {
        SidecarMeta {
            grid: None,
            classes: None,
        }
    };

    let num_classes = meta
        .classes
        .unwrap_or_else(|| labels.iter().copied().max().unwrap_or(0) + 1);
    let grid = meta.grid.map(|(height, width)| GridDims { height, width });
    let features = Matrix::from_rows(&rows)?;
    Dataset::new(features, labels, num_classes, grid)
}

/// Writes a dataset as `label,f0,f1,...` CSV with shortest round-trip float
/// formatting, plus a sidecar metadata file.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| map_csv_error(&path.display().to_string(), e))?;
    let mut header = vec!["label".to_string()];
    header.extend((0..dataset.num_features()).map(|i| format!("f{i}")));
    writer
        .write_record(&header)
        .map_err(|e| map_csv_error(&path.display().to_string(), e))?;
    for i in 0..dataset.len() {
        let mut record = vec![dataset.labels[i].to_string()];
        record.extend(dataset.features.row(i).iter().map(|v| format!("{v}")));
        writer
            .write_record(&record)
            .map_err(|e| map_csv_error(&path.display().to_string(), e))?;
    }
    writer
        .flush()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;

    let meta = SidecarMeta {
        grid: dataset.grid.map(|d| (d.height, d.width)),
        classes: Some(dataset.num_classes),
    };
    std::fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )?;
    Ok(())
}

fn map_csv_error(path: &str, e: csv::Error) -> Error {
    let line = match e.position() {
        Some(pos) => pos.line() as usize,
        None => 0,
    };
    Error::DataFormat {
        path: path.to_string(),
        line,
        message: e.to_string(),
    }
}

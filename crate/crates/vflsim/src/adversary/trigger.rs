//! Trigger placement, application, and sub-trigger decomposition.

use crate::error::{Error, Result};
use crate::nn::{grid_index, SaliencyMap};

/// A placed rectangular window on a grid-shaped feature slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridWindow {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

/// Cell values written into a grid window.
///
/// Checkerboard parity uses the absolute cell coordinates `(row + col)`, so
/// splitting a window into sub-windows reproduces the same cell values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FillPattern {
    Constant(f64),
    Checkerboard { even: f64, odd: f64 },
}

impl FillPattern {
    fn value_at(&self, row: usize, col: usize) -> f64 {
        match *self {
            FillPattern::Constant(v) => v,
            FillPattern::Checkerboard { even, odd } => {
                if (row + col) % 2 == 0 {
                    even
                } else {
                    odd
                }
            }
        }
    }
}

/// The backdoor trigger: a grid patch or a tabular feature overwrite,
/// expressed in the coordinates of the adversary's own shard slice.
#[derive(Debug, Clone, PartialEq)]
pub enum TriggerSpec {
    Grid {
        /// Height of the (column-major) grid the slice represents.
        grid_height: usize,
        window: GridWindow,
        fill: FillPattern,
    },
    Tabular {
        /// Feature indices to overwrite, ascending.
        indices: Vec<usize>,
        fill_value: f64,
    },
}

/// Slides a `window_height x window_width` window over the saliency map (as
/// a column-major grid) and returns the top-left position with the highest
/// mean saliency. Ties resolve to the smallest `(row, col)` in row-major
/// order.
pub fn plan_trigger_window(
    saliency: &SaliencyMap,
    grid_height: usize,
    window_height: usize,
    window_width: usize,
) -> Result<(usize, usize)> {
    if grid_height == 0 || saliency.len() % grid_height != 0 {
        return Err(Error::invalid(
            "saliency length is not a whole number of grid columns",
        ));
    }
    let grid_width = saliency.len() / grid_height;
    if window_height > grid_height || window_width > grid_width {
        return Err(Error::invalid(format!(
            "window {window_height}x{window_width} exceeds grid {grid_height}x{grid_width}"
        )));
    }
    if window_height == 0 || window_width == 0 {
        return Ok((0, 0));
    }

    let values = saliency.values();
    let mut best = (0usize, 0usize);
    let mut best_mean = f64::NEG_INFINITY;
    for row in 0..=(grid_height - window_height) {
        for col in 0..=(grid_width - window_width) {
            let mut sum = 0.0;
            for c in col..col + window_width {
                for r in row..row + window_height {
                    sum += values[grid_index(grid_height, r, c)];
                }
            }
            let mean = sum / (window_height * window_width) as f64;
            if mean > best_mean {
                best_mean = mean;
                best = (row, col);
            }
        }
    }
    Ok(best)
}

/// Applies a trigger to one sample slice, returning the overwritten copy.
pub fn apply_trigger(sample: &[f64], spec: &TriggerSpec) -> Result<Vec<f64>> {
    let mut out = sample.to_vec();
    match spec {
        TriggerSpec::Grid {
            grid_height,
            window,
            fill,
        } => {
            let h = *grid_height;
            if h == 0 || sample.len() % h != 0 {
                return Err(Error::invalid(
                    "sample length is not a whole number of grid columns",
                ));
            }
            let grid_width = sample.len() / h;
            if window.row + window.height > h || window.col + window.width > grid_width {
                return Err(Error::invalid(format!(
                    "window at ({}, {}) size {}x{} leaves the {}x{} slice",
                    window.row, window.col, window.height, window.width, h, grid_width
                )));
            }
            for c in window.col..window.col + window.width {
                for r in window.row..window.row + window.height {
                    out[grid_index(h, r, c)] = fill.value_at(r, c);
                }
            }
        }
        TriggerSpec::Tabular { indices, fill_value } => {
            for &idx in indices {
                if idx >= sample.len() {
                    return Err(Error::invalid(format!(
                        "trigger index {idx} out of bounds for slice of {}",
                        sample.len()
                    )));
                }
                out[idx] = *fill_value;
            }
        }
    }
    Ok(out)
}

/// Chunk widths for a vertical split of `width` into `parts` contiguous
/// pieces, larger pieces first.
fn chunk_widths(width: usize, parts: usize) -> Vec<usize> {
    let base = width / parts;
    let extra = width % parts;
    (0..parts)
        .map(|i| base + usize::from(i < extra))
        .collect()
}

/// Splits a trigger into `parts` sub-triggers.
///
/// Grid triggers split vertically into contiguous column bands (widths
/// `ceil(w / parts)` first); tabular triggers partition their index set in
/// ascending order. Applying every sub-trigger reproduces the undivided
/// trigger exactly.
pub fn split_trigger(spec: &TriggerSpec, parts: usize) -> Result<Vec<TriggerSpec>> {
    if parts == 0 {
        return Err(Error::invalid("cannot split into zero sub-triggers"));
    }
    match spec {
        TriggerSpec::Grid {
            grid_height,
            window,
            fill,
        } => {
            if parts > window.width {
                return Err(Error::invalid(format!(
                    "cannot split a window of width {} into {parts} parts",
                    window.width
                )));
            }
            let mut col = window.col;
            Ok(chunk_widths(window.width, parts)
                .into_iter()
                .map(|w| {
                    let sub = TriggerSpec::Grid {
                        grid_height: *grid_height,
                        window: GridWindow {
                            row: window.row,
                            col,
                            height: window.height,
                            width: w,
                        },
                        fill: *fill,
                    };
                    col += w;
                    sub
                })
                .collect())
        }
        TriggerSpec::Tabular { indices, fill_value } => {
            if parts > indices.len() {
                return Err(Error::invalid(format!(
                    "cannot split {} trigger features into {parts} parts",
                    indices.len()
                )));
            }
            let mut sorted = indices.clone();
            sorted.sort_unstable();
            let mut out = Vec::with_capacity(parts);
            let mut start = 0;
            for w in chunk_widths(sorted.len(), parts) {
                out.push(TriggerSpec::Tabular {
                    indices: sorted[start..start + w].to_vec(),
                    fill_value: *fill_value,
                });
                start += w;
            }
            Ok(out)
        }
    }
}

//! Softmax cross-entropy with analytic gradient.

use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;

/// Softmax probabilities per row, computed with the max-shift trick.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (c, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            out.set(r, c, e);
            sum += e;
        }
        for c in 0..logits.cols() {
            out.set(r, c, out.get(r, c) / sum);
        }
    }
    out
}

/// Mean cross-entropy of `logits` against integer labels, plus the gradient
/// at the logits: `(softmax - onehot) / batch_size`.
pub fn cross_entropy_with_grad(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let include = vec![true; labels.len()];
    masked_cross_entropy_with_grad(logits, labels, &include)
}

/// Cross-entropy restricted to rows flagged in `include`.
///
/// Excluded rows contribute nothing: the mean runs over included rows only
/// and their gradient rows are exactly zero. Used by the server when an
/// anomaly filter drops rows from a round.
pub fn masked_cross_entropy_with_grad(
    logits: &Matrix,
    labels: &[usize],
    include: &[bool],
) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() || include.len() != logits.rows() {
        return Err(Error::ShapeMismatch {
            context: "cross_entropy",
            expected: format!("{} labels", logits.rows()),
            actual: format!("{} labels, {} mask entries", labels.len(), include.len()),
        });
    }
    let classes = logits.cols();
    for &label in labels {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
    }
    let included = include.iter().filter(|&&b| b).count();
    if included == 0 {
        return Err(Error::invalid("cross-entropy over an empty batch"));
    }

    let probs = softmax_rows(logits);
    let mut grad = Matrix::zeros(logits.rows(), classes);
    let mut loss = 0.0;
    let scale = 1.0 / included as f64;
    for r in 0..logits.rows() {
        if !include[r] {
            continue;
        }
        // loss uses the shift-stable form -(z_y - max - ln sum(exp(z - max)))
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum: f64 = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        loss += -(row[labels[r]] - max - log_sum);

        for c in 0..classes {
            let indicator = if c == labels[r] { 1.0 } else { 0.0 };
            grad.set(r, c, (probs.get(r, c) - indicator) * scale);
        }
    }
    Ok((loss * scale, grad))
}

/// Argmax per row; ties resolve to the lowest index.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_cost_ln_c() {
        for classes in [2usize, 3, 7] {
            let logits = Matrix::zeros(4, classes);
            let labels = vec![0usize; 4];
            let (loss, _) = cross_entropy_with_grad(&logits, &labels).unwrap();
            assert!((loss - (classes as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_correct_logits_give_tiny_loss() {
        let logits = Matrix::from_row(&[10.0, -10.0]).unwrap();
        let (loss, grad) = cross_entropy_with_grad(&logits, &[0]).unwrap();
        // direct softmax evaluation: p1 = e^-20 / (1 + e^-20)
        let p1 = (-20.0f64).exp() / (1.0 + (-20.0f64).exp());
        let expected_loss = -(1.0 - p1).ln();
        assert!((loss - expected_loss).abs() < 1e-15);
        assert!((loss - 2.06e-9).abs() < 1e-11);
        assert!((grad.get(0, 0) + p1).abs() < 1e-15);
        assert!((grad.get(0, 1) - p1).abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits =
            Matrix::from_rows(&[vec![3.0, -2.0, 0.5], vec![100.0, 99.0, 98.0]]).unwrap();
        let probs = softmax_rows(&logits);
        for r in 0..probs.rows() {
            let sum: f64 = probs.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let base = Matrix::from_rows(&[vec![0.3, -0.8, 1.2], vec![-0.1, 0.4, 0.0]]).unwrap();
        let labels = [2usize, 1];
        let (_, grad) = cross_entropy_with_grad(&base, &labels).unwrap();
        let step = 1e-6;
        for r in 0..base.rows() {
            for c in 0..base.cols() {
                let mut plus = base.clone();
                plus.set(r, c, base.get(r, c) + step);
                let mut minus = base.clone();
                minus.set(r, c, base.get(r, c) - step);
                let (lp, _) = cross_entropy_with_grad(&plus, &labels).unwrap();
                let (lm, _) = cross_entropy_with_grad(&minus, &labels).unwrap();
                let numeric = (lp - lm) / (2.0 * step);
                let analytic = grad.get(r, c);
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    ((numeric - analytic) / denom).abs() < 1e-4,
                    "({r},{c}): numeric {numeric} analytic {analytic}"
                );
            }
        }
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let logits = Matrix::zeros(1, 2);
        assert!(cross_entropy_with_grad(&logits, &[2]).is_err());
    }

    #[test]
    fn masked_rows_contribute_nothing() {
        let logits = Matrix::from_rows(&[vec![1.0, 0.0], vec![5.0, -5.0]]).unwrap();
        let labels = [0usize, 1];
        let (loss, grad) =
            masked_cross_entropy_with_grad(&logits, &labels, &[true, false]).unwrap();
        let solo = Matrix::from_row(&[1.0, 0.0]).unwrap();
        let (solo_loss, solo_grad) = cross_entropy_with_grad(&solo, &[0]).unwrap();
        assert_eq!(loss, solo_loss);
        assert_eq!(grad.row(0), solo_grad.row(0));
        assert!(grad.row(1).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn argmax_breaks_ties_to_lowest_index() {
        let logits = Matrix::from_rows(&[vec![1.0, 1.0, 0.0], vec![0.0, 2.0, 2.0]]).unwrap();
        assert_eq!(argmax_rows(&logits), vec![0, 1]);
    }
}

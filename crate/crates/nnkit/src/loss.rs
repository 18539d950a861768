use crate::error::{check_dim, NnError, Result};
use crate::matrix::Matrix;

/// Numerically stable softmax of one row.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        out.row_mut(r).copy_from_slice(&softmax_row(logits.row(r)));
    }
    out
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    match labels.iter().find(|&&y| y >= num_classes) {
        Some(&label) => Err(NnError::LabelOutOfRange { label, num_classes }),
        None => Ok(()),
    }
}

/// Unweighted `−log softmax(logits)_y` for every row.
pub fn cross_entropy_per_sample(logits: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
    check_dim("cross_entropy labels", logits.rows(), labels.len())?;
    check_labels(labels, logits.cols())?;
    Ok(logits
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| -log_softmax_row(row)[y])
        .collect())
}

/// Mean over the batch of `−w_y · log softmax(logits)_y`, and its gradient
/// with respect to the logits.
pub fn weighted_cross_entropy(
    logits: &Matrix,
    labels: &[usize],
    weights: &[f64],
) -> Result<(f64, Matrix)> {
    if logits.rows() == 0 {
        return Err(NnError::EmptyBatch);
    }
    check_dim("weighted_cross_entropy labels", logits.rows(), labels.len())?;
    check_dim("weighted_cross_entropy weights", logits.cols(), weights.len())?;
    check_labels(labels, logits.cols())?;
    let n = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let logp = log_softmax_row(logits.row(r));
        let w = weights[y];
        loss -= w * logp[y];
        let g = grad.row_mut(r);
        for (c, lp) in logp.iter().enumerate() {
            g[c] = w * lp.exp() / n;
        }
        g[y] -= w / n;
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(NnError::NonFinite("weighted_cross_entropy"));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_eight_classes() {
        let logits = Matrix::zeros(3, 8);
        let (loss, _) = weighted_cross_entropy(&logits, &[0, 3, 7], &[1.0; 8]).unwrap();
        assert!((loss - 8f64.ln()).abs() < 1e-12);
        assert!((loss - 2.0794).abs() < 1e-4);
    }

    #[test]
    fn weighted_two_class_uniform() {
        let logits = Matrix::zeros(1, 2);
        let (loss, _) = weighted_cross_entropy(&logits, &[0], &[2.0, 1.0]).unwrap();
        assert!((loss - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_vanishes_with_margin() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 10.0, 30.0, 100.0] {
            let logits = Matrix::from_rows(&[[margin, 0.0, 0.0]]).unwrap();
            let (loss, _) = weighted_cross_entropy(&logits, &[0], &[1.0; 3]).unwrap();
            assert!(loss >= 0.0 && loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-40);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            weighted_cross_entropy(&Matrix::zeros(0, 2), &[], &[1.0, 1.0]),
            Err(NnError::EmptyBatch)
        ));
        assert!(matches!(
            weighted_cross_entropy(&Matrix::zeros(1, 2), &[2], &[1.0, 1.0]),
            Err(NnError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let logits = Matrix::from_rows(&[[0.3, -1.2, 2.0], [1.0, 0.5, -0.5]]).unwrap();
        let labels = [2, 0];
        let w = [0.5, 1.5, 1.0];
        let (_, grad) = weighted_cross_entropy(&logits, &labels, &w).unwrap();
        let h = 1e-6;
        for i in 0..logits.as_slice().len() {
            let mut p = logits.clone();
            p.as_mut_slice()[i] += h;
            let mut m = logits.clone();
            m.as_mut_slice()[i] -= h;
            let fd = (weighted_cross_entropy(&p, &labels, &w).unwrap().0
                - weighted_cross_entropy(&m, &labels, &w).unwrap().0)
                / (2.0 * h);
            assert!((fd - grad.as_slice()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax_row(&[1000.0, 999.0, -5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }
}

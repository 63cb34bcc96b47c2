use ndarray::{Array2, ArrayView2};

use crate::error::{check_shape, Result};
use crate::layers::softmax;

/// Smallest probability fed to `ln` in the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean over rows of the squared error summed across columns.
///
/// Each row is one user (or sample) and each column one component, so a
/// row error of `(3, 4, 0)` contributes 25. Returns the loss and its
/// gradient with respect to `pred`.
pub fn mse(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    check_shape("mse", target.shape(), pred.shape())?;
    let rows = pred.nrows().max(1) as f64;
    let diff = &pred - &target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / rows;
    Ok((loss, diff * (2.0 / rows)))
}

/// Mean of `-ln p[label]` over the rows of `probs`.
pub fn cross_entropy(probs: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    check_shape("cross_entropy", &[labels.len()], &[probs.nrows()])?;
    let n = labels.len().max(1) as f64;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -probs[[i, l]].max(PROB_FLOOR).ln())
        .sum::<f64>()
        / n)
}

/// Cross-entropy of `softmax(logits)` together with its gradient with
/// respect to the logits, `(p - onehot) / batch`.
pub fn softmax_cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let probs = softmax(logits);
    let loss = cross_entropy(probs.view(), labels)?;
    let n = labels.len().max(1) as f64;
    let mut grad = probs.clone();
    for (i, &l) in labels.iter().enumerate() {
        grad[[i, l]] -= 1.0;
    }
    grad /= n;
    Ok((loss, grad, probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn mse_is_zero_at_target() {
        let a = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        let (l, g) = mse(a.view(), a.view()).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_sums_components_then_averages_rows() {
        let pred = arr2(&[[3.0, 4.0, 0.0], [0.0, 0.0, 0.0]]);
        let target = Array2::zeros((2, 3));
        let (l, _) = mse(pred.view(), target.view()).unwrap();
        assert!((l - 12.5).abs() < 1e-12);
    }

    #[test]
    fn uniform_four_class_cross_entropy_is_ln4() {
        let p = Array2::from_elem((3, 4), 0.25);
        for label in 0..4 {
            let l = cross_entropy(p.view(), &[label, label, label]).unwrap();
            assert!((l - 4f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_probability_is_clamped() {
        let p = arr2(&[[1.0, 0.0]]);
        let l = cross_entropy(p.view(), &[1]).unwrap();
        assert!((l + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn certain_correct_prediction_has_zero_loss() {
        let p = arr2(&[[0.0, 1.0, 0.0, 0.0]]);
        assert_eq!(cross_entropy(p.view(), &[1]).unwrap(), 0.0);
    }

    #[test]
    fn label_count_must_match_rows() {
        let p = Array2::from_elem((2, 2), 0.5);
        assert!(cross_entropy(p.view(), &[0]).is_err());
    }
}

//! Matching accuracy and F1 against possibly partial ground truth.
//!
//! Ground truth is a per-row target column, `None` for a node with no
//! counterpart. Such rows are left out of the accuracy denominator.

use crate::error::{Error, Result};
use crate::ops::Mat;
use crate::projections::Permutation;

/// `Σ(X* ⊙ X_pred) / #{rows of X* with a match}` on 0/1 matrices.
pub fn accuracy_matrix(pred: &Mat, target: &Mat) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::invalid("prediction and target shapes differ"));
    }
    let n_gt = target.row_iter().filter(|r| r.sum() > 0.0).count();
    if n_gt == 0 {
        return Err(Error::invalid("target has no matches"));
    }
    Ok(pred.dot(target) / n_gt as f64)
}

fn check_lengths(pred_len: usize, gt: &[Option<usize>]) -> Result<()> {
    if pred_len != gt.len() {
        return Err(Error::invalid(format!(
            "prediction covers {pred_len} rows but ground truth has {}",
            gt.len()
        )));
    }
    Ok(())
}

/// Fraction of ground-truth matches reproduced by `pred`.
pub fn accuracy(pred: &Permutation, gt: &[Option<usize>]) -> Result<f64> {
    check_lengths(pred.len(), gt)?;
    let n_gt = gt.iter().flatten().count();
    if n_gt == 0 {
        return Err(Error::invalid("ground truth has no matches"));
    }
    let correct = gt
        .iter()
        .enumerate()
        .filter(|(i, g)| **g == Some(pred.get(*i)))
        .count();
    Ok(correct as f64 / n_gt as f64)
}

/// Harmonic mean of precision (correct / predicted) and recall
/// (correct / ground-truth matches); rows predicted `None` are abstentions.
pub fn f1_score(pred: &[Option<usize>], gt: &[Option<usize>]) -> Result<f64> {
    check_lengths(pred.len(), gt)?;
    let predicted = pred.iter().flatten().count();
    let n_gt = gt.iter().flatten().count();
    let correct = pred
        .iter()
        .zip(gt)
        .filter(|(p, g)| p.is_some() && p == g)
        .count();
    Ok(f1_from_counts(correct, predicted, n_gt))
}

pub fn f1_from_counts(correct: usize, predicted: usize, n_gt: usize) -> f64 {
    let precision = if predicted == 0 {
        0.0
    } else {
        correct as f64 / predicted as f64
    };
    let recall = if n_gt == 0 {
        0.0
    } else {
        correct as f64 / n_gt as f64
    };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// F1 of a full permutation, which predicts every row.
pub fn f1_permutation(pred: &Permutation, gt: &[Option<usize>]) -> Result<f64> {
    let pred: Vec<Option<usize>> = pred.as_slice().iter().map(|&j| Some(j)).collect();
    f1_score(&pred, gt)
}

/// Target matrix with a 1 at `(i, gt[i])`; unmatched rows stay zero.
pub fn target_matrix(gt: &[Option<usize>], cols: usize) -> Result<Mat> {
    let mut m = Mat::zeros(gt.len(), cols);
    for (i, g) in gt.iter().enumerate() {
        if let Some(j) = *g {
            if j >= cols {
                return Err(Error::invalid(format!(
                    "ground truth column {j} out of range"
                )));
            }
            m[(i, j)] = 1.0;
        }
    }
    Ok(m)
}

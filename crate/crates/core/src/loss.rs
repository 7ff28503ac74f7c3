//! Loss functions, probability transforms and pseudo-residuals.
//!
//! Scores are raw additive ensemble outputs laid out as an `N x K` matrix,
//! with `K = 1` for regression and `K = num_classes` for classification.
//! Classification targets are class indices stored as `f64`; the one-hot
//! encoding only exists inside this module.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Raw ensemble outputs, one row per sample and one column per output.
pub type ScoreMatrix = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    CrossEntropy,
}

impl LossKind {
    /// Number of score columns for `num_classes` (1 for regression).
    pub fn num_outputs(self, num_classes: usize) -> usize {
        match self {
            LossKind::SquaredError => 1,
            LossKind::CrossEntropy => num_classes,
        }
    }

    pub fn check_classes(self, num_classes: usize) -> Result<()> {
        match self {
            LossKind::SquaredError if num_classes != 1 => {
                invalid(format!("squared error needs K = 1, got K = {num_classes}"))
            }
            LossKind::CrossEntropy if num_classes < 2 => {
                invalid(format!("cross-entropy needs K >= 2, got K = {num_classes}"))
            }
            _ => Ok(()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::SquaredError => "squared_error",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }
}

fn check_shapes(loss: LossKind, targets: &[f64], scores: &ArrayView2<f64>) -> Result<()> {
    if targets.len() != scores.nrows() {
        return invalid(format!(
            "{} targets but {} score rows",
            targets.len(),
            scores.nrows()
        ));
    }
    match loss {
        LossKind::SquaredError if scores.ncols() != 1 => {
            invalid(format!("squared error expects 1 score column, got {}", scores.ncols()))
        }
        LossKind::CrossEntropy => {
            if scores.ncols() < 2 {
                return invalid(format!(
                    "cross-entropy expects >= 2 score columns, got {}",
                    scores.ncols()
                ));
            }
            let k = scores.ncols();
            for &y in targets {
                if y < 0.0 || y.fract() != 0.0 || (y as usize) >= k {
                    return invalid(format!("class label {y} outside 0..{k}"));
                }
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Numerically stable softmax of a single score row.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let mut out = scores.to_vec();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax of a score matrix.
pub fn softmax_rows(scores: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = scores.to_owned();
    for mut row in out.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("owned rows are contiguous"));
    }
    out
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `1 / (1 + exp(-theta))`, evaluated without overflow for large `|theta|`.
pub fn sigmoid(theta: f64) -> f64 {
    if theta >= 0.0 {
        1.0 / (1.0 + (-theta).exp())
    } else {
        let e = theta.exp();
        e / (1.0 + e)
    }
}

/// Sum of per-sample losses.
pub fn total_loss(loss: LossKind, targets: &[f64], scores: &ArrayView2<f64>) -> Result<f64> {
    check_shapes(loss, targets, scores)?;
    let total = match loss {
        LossKind::SquaredError => targets
            .iter()
            .zip(scores.column(0))
            .map(|(y, f)| 0.5 * (y - f) * (y - f))
            .sum(),
        LossKind::CrossEntropy => targets
            .iter()
            .zip(scores.rows())
            .map(|(&y, row)| {
                let row = row.to_vec();
                log_sum_exp(&row) - row[y as usize]
            })
            .sum(),
    };
    Ok(total)
}

/// Mean per-sample loss: `½(y − F)²` for regression, `−ln P_y` for classification.
pub fn loss_value(loss: LossKind, targets: &[f64], scores: &ArrayView2<f64>) -> Result<f64> {
    if targets.is_empty() {
        return invalid("loss of an empty sample");
    }
    Ok(total_loss(loss, targets, scores)? / targets.len() as f64)
}

/// Negative gradient of the per-sample loss with respect to the scores.
///
/// Regression: `y − F`. Classification: `onehot(y) − softmax(F)`.
pub fn pseudo_residual(loss: LossKind, targets: &[f64], scores: &ArrayView2<f64>) -> Result<Array2<f64>> {
    check_shapes(loss, targets, scores)?;
    let mut out = Array2::zeros(scores.raw_dim());
    pseudo_residual_into(loss, targets, scores, &mut out);
    Ok(out)
}

/// Shape-unchecked variant used by the trainers' inner loops.
pub(crate) fn pseudo_residual_into(
    loss: LossKind,
    targets: &[f64],
    scores: &ArrayView2<f64>,
    out: &mut Array2<f64>,
) {
    match loss {
        LossKind::SquaredError => {
            for ((o, y), f) in out.iter_mut().zip(targets).zip(scores.iter()) {
                *o = y - f;
            }
        }
        LossKind::CrossEntropy => {
            for ((mut o, s), &y) in out.rows_mut().into_iter().zip(scores.rows()).zip(targets) {
                let o = o.as_slice_mut().expect("owned rows are contiguous");
                for (dst, src) in o.iter_mut().zip(s.iter()) {
                    *dst = *src;
                }
                softmax_in_place(o);
                for v in o.iter_mut() {
                    *v = -*v;
                }
                o[y as usize] += 1.0;
            }
        }
    }
}

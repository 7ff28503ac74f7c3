//! Depth-one regression trees with multi-output constant leaves.
//!
//! The split search is exhaustive: every midpoint between consecutive
//! distinct values of every feature is scored by the summed squared error
//! over all outputs. Rows with `x[feature] <= threshold` go left.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Threshold of a stump that never splits; every finite input goes left.
pub const NO_SPLIT_THRESHOLD: f64 = f64::MAX;

/// Relative slack under which two split gains count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl Stump {
    /// Stump predicting `value` everywhere.
    pub fn constant(value: Vec<f64>) -> Self {
        Stump { feature: 0, threshold: NO_SPLIT_THRESHOLD, right: value.clone(), left: value }
    }

    pub fn is_degenerate(&self) -> bool {
        self.threshold == NO_SPLIT_THRESHOLD
    }

    pub fn num_outputs(&self) -> usize {
        self.left.len()
    }

    #[inline]
    pub fn leaf(&self, row: &[f64]) -> &[f64] {
        if row[self.feature] <= self.threshold {
            &self.left
        } else {
            &self.right
        }
    }

    /// `out[i] += scale * leaf(x_i)` for every row.
    pub(crate) fn add_scaled_to(&self, features: &ArrayView2<f64>, scale: f64, out: &mut Array2<f64>) {
        for (x, mut o) in features.rows().into_iter().zip(out.rows_mut()) {
            let leaf = if x[self.feature] <= self.threshold { &self.left } else { &self.right };
            for (dst, v) in o.iter_mut().zip(leaf) {
                *dst += scale * v;
            }
        }
    }

    /// Summed squared error of the stump's predictions against `residuals`.
    pub fn sse(&self, features: &ArrayView2<f64>, residuals: &ArrayView2<f64>) -> f64 {
        features
            .rows()
            .into_iter()
            .zip(residuals.rows())
            .map(|(x, r)| {
                let leaf = if x[self.feature] <= self.threshold { &self.left } else { &self.right };
                r.iter().zip(leaf).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum()
    }
}

/// Per-feature row orderings, computed once and reused across boosting rounds.
#[derive(Debug, Clone)]
pub struct SortedFeatures {
    n: usize,
    // order[j] lists row indices by ascending feature j; values[j] the matching values.
    order: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
}

impl SortedFeatures {
    pub fn new(features: &ArrayView2<f64>) -> Self {
        let n = features.nrows();
        let mut order = Vec::with_capacity(features.ncols());
        let mut values = Vec::with_capacity(features.ncols());
        for col in features.columns() {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            values.push(idx.iter().map(|&i| col[i]).collect());
            order.push(idx);
        }
        SortedFeatures { n, order, values }
    }

    pub fn num_rows(&self) -> usize {
        self.n
    }

    pub fn num_features(&self) -> usize {
        self.order.len()
    }
}

/// Exhaustive split search over every feature of `features`.
pub fn fit_stump(features: &ArrayView2<f64>, residuals: &ArrayView2<f64>) -> Result<Stump> {
    if features.nrows() == 0 {
        return invalid("cannot fit a stump on zero samples");
    }
    if features.nrows() != residuals.nrows() {
        return invalid(format!(
            "{} feature rows but {} residual rows",
            features.nrows(),
            residuals.nrows()
        ));
    }
    if residuals.ncols() == 0 {
        return invalid("residuals have no outputs");
    }
    let residuals = residuals.as_standard_layout();
    Ok(fit_stump_sorted(&SortedFeatures::new(features), &residuals.view()))
}

/// Split search using a precomputed index. `residuals` rows align with the
/// rows the index was built from.
pub fn fit_stump_sorted(index: &SortedFeatures, residuals: &ArrayView2<f64>) -> Stump {
    let n = index.n;
    let k = residuals.ncols();
    debug_assert_eq!(residuals.nrows(), n);
    let res = residuals.as_slice().expect("residuals must be in standard layout");

    let mut total = vec![0.0; k];
    for row in res.chunks_exact(k) {
        for (t, v) in total.iter_mut().zip(row) {
            *t += v;
        }
    }

    let mut best: Option<(f64, usize, usize)> = None; // (gain, feature, split position)
    let mut left = vec![0.0; k];
    for (j, (order, values)) in index.order.iter().zip(&index.values).enumerate() {
        left.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..n.saturating_sub(1) {
            let row = &res[order[p] * k..order[p] * k + k];
            for (l, v) in left.iter_mut().zip(row) {
                *l += v;
            }
            if values[p] >= values[p + 1] {
                continue;
            }
            let n_left = (p + 1) as f64;
            let n_right = (n - p - 1) as f64;
            let gain: f64 = left
                .iter()
                .zip(&total)
                .map(|(l, t)| l * l / n_left + (t - l) * (t - l) / n_right)
                .sum();
            let better = match best {
                None => true,
                Some((g, _, _)) => gain > g + TIE_TOLERANCE * g.abs(),
            };
            if better {
                best = Some((gain, j, p));
            }
        }
    }

    let Some((_, feature, pos)) = best else {
        return Stump::constant(total.iter().map(|t| t / n as f64).collect());
    };

    let order = &index.order[feature];
    let values = &index.values[feature];
    let mut left = vec![0.0; k];
    for &i in &order[..=pos] {
        for (l, v) in left.iter_mut().zip(&res[i * k..i * k + k]) {
            *l += v;
        }
    }
    let n_left = (pos + 1) as f64;
    let n_right = (n - pos - 1) as f64;
    let (lo, hi) = (values[pos], values[pos + 1]);
    let mut threshold = lo + (hi - lo) / 2.0;
    if threshold >= hi {
        // adjacent floats: the midpoint rounds up onto the right value
        threshold = lo;
    }
    Stump {
        feature,
        threshold,
        right: left.iter().zip(&total).map(|(l, t)| (t - l) / n_right).collect(),
        left: left.iter().map(|l| l / n_left).collect(),
    }
}

/// Row-wise stump outputs, `N x K`.
pub fn predict_stump(stump: &Stump, features: &ArrayView2<f64>) -> Result<Array2<f64>> {
    if !stump.is_degenerate() && stump.feature >= features.ncols() {
        return invalid(format!(
            "stump splits on feature {} but input has {} columns",
            stump.feature,
            features.ncols()
        ));
    }
    let mut out = Array2::zeros((features.nrows(), stump.num_outputs()));
    if stump.is_degenerate() {
        for mut row in out.rows_mut() {
            row.iter_mut().zip(&stump.left).for_each(|(o, v)| *o = *v);
        }
    } else {
        stump.add_scaled_to(features, 1.0, &mut out);
    }
    Ok(out)
}

//! Single-ensemble gradient boosting and the pooled / per-task baselines.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::MultiTaskDataset;
use crate::error::{invalid, Result};
use crate::loss::{pseudo_residual_into, total_loss, LossKind, ScoreMatrix};
use crate::stump::{fit_stump_sorted, SortedFeatures, Stump};

/// Additive stump ensemble: `base_score + Σ_m shrinkage · stump_m(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentEnsemble {
    pub loss: LossKind,
    pub shrinkage: f64,
    pub base_score: Vec<f64>,
    pub stumps: Vec<Stump>,
}

impl ComponentEnsemble {
    pub fn empty(loss: LossKind, num_outputs: usize, shrinkage: f64) -> Self {
        ComponentEnsemble { loss, shrinkage, base_score: vec![0.0; num_outputs], stumps: Vec::new() }
    }

    pub fn num_outputs(&self) -> usize {
        self.base_score.len()
    }

    pub fn len(&self) -> usize {
        self.stumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stumps.is_empty()
    }

    /// The ensemble after its first `rounds` stumps.
    pub fn truncated(&self, rounds: usize) -> Self {
        ComponentEnsemble {
            stumps: self.stumps[..rounds.min(self.stumps.len())].to_vec(),
            ..self.clone()
        }
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        match self.stumps.iter().find(|s| !s.is_degenerate() && s.feature >= dim) {
            Some(s) => invalid(format!(
                "ensemble splits on feature {} but input has {dim} columns",
                s.feature
            )),
            None => Ok(()),
        }
    }

    fn base_matrix(&self, n: usize) -> Array2<f64> {
        let mut out = Array2::zeros((n, self.num_outputs()));
        for mut row in out.rows_mut() {
            row.iter_mut().zip(&self.base_score).for_each(|(o, b)| *o = *b);
        }
        out
    }

    /// Scores after each checkpoint in `rounds` (ascending), in one pass.
    pub fn predict_staged(&self, features: &ArrayView2<f64>, rounds: &[usize]) -> Result<Vec<ScoreMatrix>> {
        self.check_dim(features.ncols())?;
        if rounds.windows(2).any(|w| w[0] > w[1]) {
            return invalid("staged checkpoints must be ascending");
        }
        let mut scores = self.base_matrix(features.nrows());
        let mut out = Vec::with_capacity(rounds.len());
        let mut done = 0;
        for &r in rounds {
            let r = r.min(self.stumps.len());
            for s in &self.stumps[done..r] {
                s.add_scaled_to(features, self.shrinkage, &mut scores);
            }
            done = r;
            out.push(scores.clone());
        }
        Ok(out)
    }
}

/// Raw scores of an ensemble.
pub fn predict_gb(ensemble: &ComponentEnsemble, features: &ArrayView2<f64>) -> Result<ScoreMatrix> {
    ensemble.check_dim(features.ncols())?;
    let mut scores = ensemble.base_matrix(features.nrows());
    for s in &ensemble.stumps {
        s.add_scaled_to(features, ensemble.shrinkage, &mut scores);
    }
    Ok(scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Start from the zero function.
    #[default]
    Zero,
    /// Start from the loss-minimizing constant: target mean, or log class priors.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbParams {
    pub rounds: usize,
    pub shrinkage: f64,
    pub init: InitMode,
}

impl GbParams {
    pub fn new(rounds: usize, shrinkage: f64) -> Self {
        GbParams { rounds, shrinkage, init: InitMode::Zero }
    }

    fn validate(&self) -> Result<()> {
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return invalid(format!("shrinkage {} outside (0, 1]", self.shrinkage));
        }
        Ok(())
    }
}

fn initial_score(loss: LossKind, targets: &[f64], num_outputs: usize, init: InitMode) -> Vec<f64> {
    match (init, loss) {
        (InitMode::Zero, _) => vec![0.0; num_outputs],
        (InitMode::Constant, LossKind::SquaredError) => {
            vec![targets.iter().sum::<f64>() / targets.len() as f64]
        }
        (InitMode::Constant, LossKind::CrossEntropy) => {
            let mut counts = vec![0.0; num_outputs];
            for &y in targets {
                counts[y as usize] += 1.0;
            }
            counts.iter().map(|c| (c / targets.len() as f64).max(1e-15).ln()).collect()
        }
    }
}

/// Per-round callback receiving `(round, mean training loss)`, rounds counted from 1.
pub type RoundObserver<'a> = &'a mut dyn FnMut(usize, f64);

/// Gradient boosting of stumps on a single sample table.
///
/// `num_classes` is 1 for squared error.
pub fn fit_gb(
    features: &ArrayView2<f64>,
    targets: &[f64],
    loss: LossKind,
    num_classes: usize,
    params: GbParams,
) -> Result<ComponentEnsemble> {
    fit_gb_observed(features, targets, loss, num_classes, params, None)
}

pub fn fit_gb_observed(
    features: &ArrayView2<f64>,
    targets: &[f64],
    loss: LossKind,
    num_classes: usize,
    params: GbParams,
    mut observer: Option<RoundObserver<'_>>,
) -> Result<ComponentEnsemble> {
    params.validate()?;
    loss.check_classes(num_classes)?;
    if features.nrows() == 0 {
        return invalid("cannot boost on zero samples");
    }
    let k = loss.num_outputs(num_classes);
    let mut ensemble = ComponentEnsemble::empty(loss, k, params.shrinkage);
    ensemble.base_score = initial_score(loss, targets, k, params.init);
    let mut scores = ensemble.base_matrix(features.nrows());
    // validates targets against the score shape
    total_loss(loss, targets, &scores.view())?;

    let index = SortedFeatures::new(features);
    let mut residuals = Array2::zeros(scores.raw_dim());
    for round in 1..=params.rounds {
        pseudo_residual_into(loss, targets, &scores.view(), &mut residuals);
        let stump = fit_stump_sorted(&index, &residuals.view());
        stump.add_scaled_to(features, params.shrinkage, &mut scores);
        ensemble.stumps.push(stump);
        if let Some(obs) = observer.as_mut() {
            obs(round, total_loss(loss, targets, &scores.view())? / targets.len() as f64);
        }
    }
    Ok(ensemble)
}

/// All task samples concatenated in input order, task ids dropped.
pub fn pool(mt: &MultiTaskDataset) -> (Array2<f64>, Vec<f64>) {
    (mt.features().clone(), mt.targets().to_vec())
}

/// Features followed by a one-hot block of `num_tasks` task indicators.
pub fn augment_task_onehot(mt: &MultiTaskDataset) -> (Array2<f64>, Vec<f64>) {
    (onehot_features(&mt.features().view(), mt.task_of(), mt.num_tasks()), mt.targets().to_vec())
}

fn onehot_features(features: &ArrayView2<f64>, task_of: &[usize], num_tasks: usize) -> Array2<f64> {
    let (n, d) = features.dim();
    let mut out = Array2::zeros((n, d + num_tasks));
    out.slice_mut(ndarray::s![.., ..d]).assign(features);
    for (i, &t) in task_of.iter().enumerate() {
        out[[i, d + t]] = 1.0;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    SingleTask,
    DataPooling,
    TaskAsFeature,
}

/// A fitted baseline, predicting per `(x, task)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineModel {
    SingleTask { per_task: Vec<ComponentEnsemble> },
    DataPooling { ensemble: ComponentEnsemble },
    TaskAsFeature { ensemble: ComponentEnsemble, num_tasks: usize },
}

pub fn fit_baseline(kind: BaselineKind, mt: &MultiTaskDataset, params: GbParams) -> Result<BaselineModel> {
    let loss = mt.loss_kind();
    let k = mt.num_classes();
    match kind {
        BaselineKind::SingleTask => {
            let counts = mt.task_counts();
            if let Some(t) = counts.iter().position(|&c| c < 2) {
                return invalid(format!("task {t} has fewer than 2 samples"));
            }
            let per_task = (0..mt.num_tasks())
                .map(|t| {
                    let (x, y) = mt.task_slice(t)?;
                    fit_gb(&x.view(), &y, loss, k, params)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(BaselineModel::SingleTask { per_task })
        }
        BaselineKind::DataPooling => {
            let (x, y) = pool(mt);
            Ok(BaselineModel::DataPooling { ensemble: fit_gb(&x.view(), &y, loss, k, params)? })
        }
        BaselineKind::TaskAsFeature => {
            let (x, y) = augment_task_onehot(mt);
            Ok(BaselineModel::TaskAsFeature {
                ensemble: fit_gb(&x.view(), &y, loss, k, params)?,
                num_tasks: mt.num_tasks(),
            })
        }
    }
}

impl BaselineModel {
    pub fn kind(&self) -> BaselineKind {
        match self {
            BaselineModel::SingleTask { .. } => BaselineKind::SingleTask,
            BaselineModel::DataPooling { .. } => BaselineKind::DataPooling,
            BaselineModel::TaskAsFeature { .. } => BaselineKind::TaskAsFeature,
        }
    }

    pub fn num_tasks(&self) -> Option<usize> {
        match self {
            BaselineModel::SingleTask { per_task } => Some(per_task.len()),
            BaselineModel::DataPooling { .. } => None,
            BaselineModel::TaskAsFeature { num_tasks, .. } => Some(*num_tasks),
        }
    }

    /// Scores for rows `features` belonging to tasks `task_of`.
    pub fn predict(&self, features: &ArrayView2<f64>, task_of: &[usize]) -> Result<ScoreMatrix> {
        if features.nrows() != task_of.len() {
            return invalid("features and task ids differ in length");
        }
        if let Some(t) = self.num_tasks() {
            if let Some(bad) = task_of.iter().find(|&&id| id >= t) {
                return invalid(format!("unknown task id {bad}"));
            }
        }
        match self {
            BaselineModel::SingleTask { per_task } => {
                let k = per_task[0].num_outputs();
                let mut out = Array2::zeros((features.nrows(), k));
                for (t, ens) in per_task.iter().enumerate() {
                    let rows: Vec<usize> = (0..task_of.len()).filter(|&i| task_of[i] == t).collect();
                    if rows.is_empty() {
                        continue;
                    }
                    let scores = predict_gb(ens, &features.select(Axis(0), &rows).view())?;
                    for (r, &i) in rows.iter().enumerate() {
                        out.row_mut(i).assign(&scores.row(r));
                    }
                }
                Ok(out)
            }
            BaselineModel::DataPooling { ensemble } => predict_gb(ensemble, features),
            BaselineModel::TaskAsFeature { ensemble, num_tasks } => {
                predict_gb(ensemble, &onehot_features(features, task_of, *num_tasks).view())
            }
        }
    }

    /// The same model keeping only its first `rounds` boosting rounds.
    pub fn truncated(&self, rounds: usize) -> Self {
        match self {
            BaselineModel::SingleTask { per_task } => BaselineModel::SingleTask {
                per_task: per_task.iter().map(|e| e.truncated(rounds)).collect(),
            },
            BaselineModel::DataPooling { ensemble } => {
                BaselineModel::DataPooling { ensemble: ensemble.truncated(rounds) }
            }
            BaselineModel::TaskAsFeature { ensemble, num_tasks } => BaselineModel::TaskAsFeature {
                ensemble: ensemble.truncated(rounds),
                num_tasks: *num_tasks,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::loss_value;
    use ndarray::array;

    fn two_task() -> MultiTaskDataset {
        MultiTaskDataset::new(
            array![[1.0, 0.5], [2.0, 0.1], [3.0, 0.9], [1.5, 0.3], [2.5, 0.7], [3.5, 0.2], [0.5, 0.6]],
            vec![1.0, 2.0, 3.0, -1.0, -2.0, -3.0, -0.5],
            vec![0, 0, 0, 1, 1, 1, 1],
            2,
            1,
        )
        .unwrap()
    }

    #[test]
    fn zero_rounds_is_zero_predictor() {
        let x = array![[1.0], [2.0]];
        let y = [3.0, -4.0];
        let e = fit_gb(&x.view(), &y, LossKind::SquaredError, 1, GbParams::new(0, 1.0)).unwrap();
        let p = predict_gb(&e, &x.view()).unwrap();
        assert_eq!(p, array![[0.0], [0.0]]);
        let rmse = (y.iter().map(|v| v * v).sum::<f64>() / 2.0).sqrt();
        assert!((rmse - 12.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn single_round_matches_stump_oracle() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let y = [0.0, 0.0, 1.0, 1.0];
        let e = fit_gb(&x.view(), &y, LossKind::SquaredError, 1, GbParams::new(1, 1.0)).unwrap();
        assert_eq!(predict_gb(&e, &x.view()).unwrap(), array![[0.0], [0.0], [1.0], [1.0]]);
    }

    #[test]
    fn training_loss_non_increasing() {
        let x = Array2::from_shape_fn((40, 1), |(i, _)| i as f64);
        let y: Vec<f64> = (0..40).map(|i| ((i as f64) * 0.37).sin() * 3.0).collect();
        let mut losses = Vec::new();
        let mut obs = |_, l| losses.push(l);
        fit_gb_observed(&x.view(), &y, LossKind::SquaredError, 1, GbParams::new(30, 1.0), Some(&mut obs))
            .unwrap();
        assert_eq!(losses.len(), 30);
        assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn constant_init() {
        let x = array![[1.0], [2.0], [3.0]];
        let params = GbParams { rounds: 0, shrinkage: 1.0, init: InitMode::Constant };
        let e = fit_gb(&x.view(), &[1.0, 2.0, 6.0], LossKind::SquaredError, 1, params).unwrap();
        assert_eq!(e.base_score, vec![3.0]);
        let e = fit_gb(&x.view(), &[0.0, 1.0, 1.0], LossKind::CrossEntropy, 2, params).unwrap();
        assert!((e.base_score[0] - (1.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((e.base_score[1] - (2.0f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn linear_in_shrinkage() {
        let s = Stump { feature: 0, threshold: 0.0, left: vec![2.0], right: vec![4.0] };
        let e = ComponentEnsemble { loss: LossKind::SquaredError, shrinkage: 0.5, base_score: vec![1.0], stumps: vec![s] };
        assert_eq!(predict_gb(&e, &array![[-1.0], [1.0]].view()).unwrap(), array![[2.0], [3.0]]);
        let empty = e.truncated(0);
        assert_eq!(predict_gb(&empty, &array![[-1.0], [1.0]].view()).unwrap(), array![[1.0], [1.0]]);
        let wide = ComponentEnsemble {
            stumps: vec![Stump { feature: 3, threshold: 0.0, left: vec![0.0], right: vec![0.0] }],
            ..e
        };
        assert!(predict_gb(&wide, &array![[1.0]].view()).is_err());
    }

    #[test]
    fn staged_matches_truncated() {
        let ds = two_task();
        let (x, y) = pool(&ds);
        let e = fit_gb(&x.view(), &y, LossKind::SquaredError, 1, GbParams::new(12, 0.7)).unwrap();
        let staged = e.predict_staged(&x.view(), &[0, 3, 12, 50]).unwrap();
        for (s, r) in staged.iter().zip([0, 3, 12, 12]) {
            assert_eq!(s, &predict_gb(&e.truncated(r), &x.view()).unwrap());
        }
    }

    #[test]
    fn pooling_and_onehot() {
        let ds = two_task();
        let (x, y) = pool(&ds);
        assert_eq!(x.nrows(), 7);
        assert_eq!(y, ds.targets());
        let (xa, _) = augment_task_onehot(&ds);
        assert_eq!(xa.ncols(), 4);
        assert_eq!(xa.row(3).to_vec(), vec![1.5, 0.3, 0.0, 1.0]);
        let block = xa.slice(ndarray::s![.., 2..]);
        assert_eq!(block.sum_axis(Axis(0)).to_vec(), vec![3.0, 4.0]);
        assert!(block.rows().into_iter().all(|r| r.sum() == 1.0));

        // pooled loss of a constant predictor is the sample-weighted mean of task losses
        let c = 0.25;
        let pooled = loss_value(LossKind::SquaredError, &y, &Array2::from_elem((7, 1), c).view()).unwrap();
        let mut weighted = 0.0;
        for t in 0..2 {
            let (_, yt) = ds.task_slice(t).unwrap();
            let lt = loss_value(LossKind::SquaredError, &yt, &Array2::from_elem((yt.len(), 1), c).view()).unwrap();
            weighted += lt * yt.len() as f64 / 7.0;
        }
        assert!((pooled - weighted).abs() < 1e-12);
    }

    #[test]
    fn single_task_one_hot_is_all_ones() {
        let ds = MultiTaskDataset::new(array![[1.0], [2.0]], vec![0.0, 1.0], vec![0, 0], 1, 1).unwrap();
        let (xa, _) = augment_task_onehot(&ds);
        assert_eq!(xa.column(1).to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn single_task_baseline_matches_fit_gb() {
        let ds = two_task();
        let params = GbParams::new(5, 1.0);
        let m = fit_baseline(BaselineKind::SingleTask, &ds, params).unwrap();
        let BaselineModel::SingleTask { per_task } = &m else { panic!() };
        for t in 0..2 {
            let (x, y) = ds.task_slice(t).unwrap();
            assert_eq!(per_task[t], fit_gb(&x.view(), &y, LossKind::SquaredError, 1, params).unwrap());
        }
    }

    #[test]
    fn pooling_underfits_opposite_tasks() {
        let ds = two_task();
        let params = GbParams::new(10, 1.0);
        let loss_of = |kind| {
            let m = fit_baseline(kind, &ds, params).unwrap();
            let p = m.predict(&ds.features().view(), ds.task_of()).unwrap();
            loss_value(LossKind::SquaredError, ds.targets(), &p.view()).unwrap()
        };
        assert!(loss_of(BaselineKind::DataPooling) > loss_of(BaselineKind::SingleTask));
    }

    #[test]
    fn single_task_needs_two_samples() {
        let ds = MultiTaskDataset::new(array![[1.0], [2.0], [3.0]], vec![0.0, 1.0, 2.0], vec![0, 0, 1], 2, 1).unwrap();
        assert!(fit_baseline(BaselineKind::SingleTask, &ds, GbParams::new(3, 1.0)).is_err());
        assert!(fit_baseline(BaselineKind::DataPooling, &ds, GbParams::new(3, 1.0)).is_ok());
    }

    #[test]
    fn rejects_bad_shrinkage() {
        let x = array![[1.0]];
        assert!(fit_gb(&x.view(), &[1.0], LossKind::SquaredError, 1, GbParams::new(1, 0.0)).is_err());
        assert!(fit_gb(&x.view(), &[1.0], LossKind::SquaredError, 1, GbParams::new(1, 1.5)).is_err());
    }
}

//! Robust multi-task gradient boosting.
//!
//! A fitted model predicts task `t` as
//!
//! ```text
//! F_t(x) = shared(x) + (1 − σ(θ_t))·non_outlier(x) + σ(θ_t)·outlier(x) + task_t(x)
//! ```
//!
//! Training runs three sequential blocks: `m1` rounds of shared boosting on
//! the pooled data, `m2` rounds fitting the two gated components on the
//! pooled data while taking one gradient step on `θ` per round, and `m3`
//! rounds of per-task boosting on each task's own samples. Every component
//! starts from zero. With `m2 = 0` the gated terms vanish and the model is
//! plain two-block shared + task-specific boosting.

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::boosting::{predict_gb, ComponentEnsemble};
use crate::dataset::MultiTaskDataset;
use crate::error::{invalid, Result};
use crate::loss::{pseudo_residual, pseudo_residual_into, sigmoid, total_loss, LossKind, ScoreMatrix};
use crate::stump::{fit_stump_sorted, SortedFeatures};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmtgbConfig {
    pub m1: usize,
    pub m2: usize,
    pub m3: usize,
    pub shrinkage: f64,
    pub theta_init_mean: f64,
    pub theta_init_std: f64,
    /// Step size of the `θ` update; `None` reuses `shrinkage`.
    pub theta_learning_rate: Option<f64>,
    pub seed: u64,
}

impl Default for RmtgbConfig {
    fn default() -> Self {
        RmtgbConfig {
            m1: 20,
            m2: 20,
            m3: 20,
            shrinkage: 1.0,
            theta_init_mean: 0.0,
            theta_init_std: 1.0,
            theta_learning_rate: None,
            seed: 0,
        }
    }
}

impl RmtgbConfig {
    pub fn with_rounds(m1: usize, m2: usize, m3: usize) -> Self {
        RmtgbConfig { m1, m2, m3, ..Default::default() }
    }

    pub fn theta_step(&self) -> f64 {
        self.theta_learning_rate.unwrap_or(self.shrinkage)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return invalid(format!("shrinkage {} outside (0, 1]", self.shrinkage));
        }
        if !(self.theta_init_std >= 0.0) || !self.theta_init_mean.is_finite() {
            return invalid("theta init needs a finite mean and std >= 0");
        }
        if !(self.theta_step() >= 0.0 && self.theta_step().is_finite()) {
            return invalid("theta learning rate must be finite and >= 0");
        }
        Ok(())
    }

    /// Initial `θ`, drawn i.i.d. from `N(mean, std²)` with `seed`.
    pub fn initial_theta(&self, num_tasks: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        if self.theta_init_std == 0.0 {
            return vec![self.theta_init_mean; num_tasks];
        }
        let normal = Normal::new(self.theta_init_mean, self.theta_init_std).expect("validated std");
        (0..num_tasks).map(|_| normal.sample(&mut rng)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmtgbModel {
    pub loss: LossKind,
    pub rounds: [usize; 3],
    pub shrinkage: f64,
    pub theta: Vec<f64>,
    pub shared: ComponentEnsemble,
    pub outlier: ComponentEnsemble,
    pub non_outlier: ComponentEnsemble,
    pub per_task: Vec<ComponentEnsemble>,
}

impl RmtgbModel {
    pub fn num_tasks(&self) -> usize {
        self.theta.len()
    }

    pub fn num_outputs(&self) -> usize {
        self.shared.num_outputs()
    }

    /// `σ(θ_t)` for every task.
    pub fn gates(&self) -> Vec<f64> {
        self.theta.iter().map(|&t| sigmoid(t)).collect()
    }

    /// Same model with every per-task ensemble cut to `m3` rounds.
    pub fn with_task_rounds(&self, m3: usize) -> Self {
        let mut out = self.clone();
        out.per_task = self.per_task.iter().map(|e| e.truncated(m3)).collect();
        out.rounds[2] = m3.min(self.rounds[2]);
        out
    }

    fn check(&self, dim: usize) -> Result<()> {
        self.shared.check_dim(dim)?;
        self.outlier.check_dim(dim)?;
        self.non_outlier.check_dim(dim)?;
        for e in &self.per_task {
            e.check_dim(dim)?;
        }
        Ok(())
    }

    /// Rows of `features` for tasks `task_of`.
    pub fn predict(&self, features: &ArrayView2<f64>, task_of: &[usize]) -> Result<ScoreMatrix> {
        if features.nrows() != task_of.len() {
            return invalid("features and task ids differ in length");
        }
        if let Some(t) = task_of.iter().find(|&&t| t >= self.num_tasks()) {
            return invalid(format!("unknown task id {t}"));
        }
        self.check(features.ncols())?;
        let shared = predict_gb(&self.shared, features)?;
        let outlier = predict_gb(&self.outlier, features)?;
        let non_outlier = predict_gb(&self.non_outlier, features)?;
        let mut task_scores = Array2::zeros(shared.raw_dim());
        for (t, ens) in self.per_task.iter().enumerate() {
            let rows: Vec<usize> = (0..task_of.len()).filter(|&i| task_of[i] == t).collect();
            if rows.is_empty() || ens.is_empty() {
                continue;
            }
            let s = predict_gb(ens, &features.select(Axis(0), &rows).view())?;
            for (r, &i) in rows.iter().enumerate() {
                task_scores.row_mut(i).assign(&s.row(r));
            }
        }
        let gates = self.gates();
        Ok(combine(&shared, &non_outlier, &outlier, &task_scores, task_of, &gates, 0..task_of.len()))
    }
}

/// Scores of every row of `features` for one task.
pub fn predict_rmtgb(model: &RmtgbModel, features: &ArrayView2<f64>, task_id: usize) -> Result<ScoreMatrix> {
    if task_id >= model.num_tasks() {
        return invalid(format!("unknown task id {task_id}"));
    }
    model.predict(features, &vec![task_id; features.nrows()])
}

/// The gated sum, evaluated left to right so that training caches and
/// prediction agree bit for bit.
fn combine(
    shared: &Array2<f64>,
    non_outlier: &Array2<f64>,
    outlier: &Array2<f64>,
    task: &Array2<f64>,
    task_of: &[usize],
    gates: &[f64],
    rows: impl Iterator<Item = usize>,
) -> Array2<f64> {
    let k = shared.ncols();
    let mut out = Array2::zeros(shared.raw_dim());
    for i in rows {
        let g = gates[task_of[i]];
        for j in 0..k {
            out[[i, j]] =
                shared[[i, j]] + (1.0 - g) * non_outlier[[i, j]] + g * outlier[[i, j]] + task[[i, j]];
        }
    }
    out
}

fn check_theta(mt: &MultiTaskDataset, theta: &[f64]) -> Result<()> {
    if theta.len() != mt.num_tasks() {
        return invalid(format!("theta has {} entries for {} tasks", theta.len(), mt.num_tasks()));
    }
    Ok(())
}

fn check_scores(mt: &MultiTaskDataset, loss: LossKind, scores: &ArrayView2<f64>) -> Result<()> {
    let k = loss.num_outputs(mt.num_classes());
    if scores.dim() != (mt.len(), k) {
        return invalid(format!("scores are {:?}, expected ({}, {k})", scores.dim(), mt.len()));
    }
    Ok(())
}

/// Negative loss gradient with respect to the shared component.
pub fn shared_residuals(loss: LossKind, mt: &MultiTaskDataset, current_scores: &ArrayView2<f64>) -> Result<Array2<f64>> {
    check_scores(mt, loss, current_scores)?;
    pseudo_residual(loss, mt.targets(), current_scores)
}

fn gated_residuals(
    loss: LossKind,
    mt: &MultiTaskDataset,
    current_scores: &ArrayView2<f64>,
    theta: &[f64],
    gate: impl Fn(f64) -> f64,
) -> Result<Array2<f64>> {
    check_theta(mt, theta)?;
    let mut r = shared_residuals(loss, mt, current_scores)?;
    let gates: Vec<f64> = theta.iter().map(|&t| gate(sigmoid(t))).collect();
    for (mut row, &t) in r.rows_mut().into_iter().zip(mt.task_of()) {
        row.iter_mut().for_each(|v| *v *= gates[t]);
    }
    Ok(r)
}

/// Pseudo-residual rows scaled by `σ(θ_t)`.
pub fn outlier_residuals(
    loss: LossKind,
    mt: &MultiTaskDataset,
    current_scores: &ArrayView2<f64>,
    theta: &[f64],
) -> Result<Array2<f64>> {
    gated_residuals(loss, mt, current_scores, theta, |s| s)
}

/// Pseudo-residual rows scaled by `1 − σ(θ_t)`.
pub fn non_outlier_residuals(
    loss: LossKind,
    mt: &MultiTaskDataset,
    current_scores: &ArrayView2<f64>,
    theta: &[f64],
) -> Result<Array2<f64>> {
    gated_residuals(loss, mt, current_scores, theta, |s| 1.0 - s)
}

/// `∂L/∂θ_t` of the summed training loss, where `L` is evaluated at
/// `current_scores` and the gated components output the raw (ungated)
/// `outlier_scores` and `non_outlier_scores`.
pub fn theta_gradient(
    loss: LossKind,
    mt: &MultiTaskDataset,
    current_scores: &ArrayView2<f64>,
    outlier_scores: &ArrayView2<f64>,
    non_outlier_scores: &ArrayView2<f64>,
    theta: &[f64],
) -> Result<Vec<f64>> {
    check_theta(mt, theta)?;
    check_scores(mt, loss, outlier_scores)?;
    check_scores(mt, loss, non_outlier_scores)?;
    let r = shared_residuals(loss, mt, current_scores)?;
    Ok(theta_gradient_raw(&r, outlier_scores, non_outlier_scores, mt.task_of(), theta))
}

fn theta_gradient_raw(
    residuals: &Array2<f64>,
    outlier_scores: &ArrayView2<f64>,
    non_outlier_scores: &ArrayView2<f64>,
    task_of: &[usize],
    theta: &[f64],
) -> Vec<f64> {
    let mut grad = vec![0.0; theta.len()];
    for (i, &t) in task_of.iter().enumerate() {
        let mut acc = 0.0;
        for j in 0..residuals.ncols() {
            acc -= residuals[[i, j]] * (outlier_scores[[i, j]] - non_outlier_scores[[i, j]]);
        }
        grad[t] += acc;
    }
    for (g, &th) in grad.iter_mut().zip(theta) {
        let s = sigmoid(th);
        *g *= s * (1.0 - s);
    }
    grad
}

/// Negative loss gradient with respect to one task's own component.
pub fn task_residuals(loss: LossKind, task_targets: &[f64], current_scores: &ArrayView2<f64>) -> Result<Array2<f64>> {
    if task_targets.is_empty() {
        return invalid("empty task slice");
    }
    pseudo_residual(loss, task_targets, current_scores)
}

/// Training progress: block (1..=3), round within the block (from 1), mean
/// training loss of the full model after the round.
pub type BlockObserver<'a> = &'a mut dyn FnMut(usize, usize, f64);

pub fn fit_rmtgb(mt: &MultiTaskDataset, config: &RmtgbConfig) -> Result<RmtgbModel> {
    fit_rmtgb_observed(mt, config, None)
}

pub fn fit_rmtgb_observed(
    mt: &MultiTaskDataset,
    config: &RmtgbConfig,
    mut observer: Option<BlockObserver<'_>>,
) -> Result<RmtgbModel> {
    let mut trainer = Trainer::new(mt, config)?;
    if config.m3 > 0 {
        trainer.require_task_sizes()?;
    }
    trainer.run_shared(config.m1, observer.as_deref_mut());
    trainer.run_gated(config.m2, observer.as_deref_mut());
    trainer.run_tasks(config.m3, observer);
    Ok(trainer.into_model())
}

/// Incremental trainer. Blocks must be run in order; running a block for
/// `a` then `b` more rounds is identical to running it for `a + b`.
#[derive(Clone)]
pub(crate) struct Trainer<'a> {
    mt: &'a MultiTaskDataset,
    loss: LossKind,
    shrinkage: f64,
    theta_step: f64,
    pooled_index: std::sync::Arc<SortedFeatures>,
    task_rows: std::sync::Arc<Vec<Vec<usize>>>,
    task_data: std::sync::Arc<Vec<(Array2<f64>, Vec<f64>, SortedFeatures)>>,
    shared_scores: Array2<f64>,
    outlier_scores: Array2<f64>,
    non_outlier_scores: Array2<f64>,
    task_scores: Array2<f64>,
    model: RmtgbModel,
}

impl<'a> Trainer<'a> {
    pub(crate) fn new(mt: &'a MultiTaskDataset, config: &RmtgbConfig) -> Result<Self> {
        config.validate()?;
        let loss = mt.loss_kind();
        let k = mt.num_outputs();
        let n = mt.len();
        let empty = ComponentEnsemble::empty(loss, k, config.shrinkage);
        let task_rows = mt.task_indices();
        let task_data = task_rows
            .iter()
            .map(|rows| {
                let x = mt.features().select(Axis(0), rows);
                let y = rows.iter().map(|&i| mt.targets()[i]).collect();
                let idx = SortedFeatures::new(&x.view());
                (x, y, idx)
            })
            .collect();
        Ok(Trainer {
            mt,
            loss,
            shrinkage: config.shrinkage,
            theta_step: config.theta_step(),
            pooled_index: SortedFeatures::new(&mt.features().view()).into(),
            task_rows: std::sync::Arc::new(task_rows),
            task_data: std::sync::Arc::new(task_data),
            shared_scores: Array2::zeros((n, k)),
            outlier_scores: Array2::zeros((n, k)),
            non_outlier_scores: Array2::zeros((n, k)),
            task_scores: Array2::zeros((n, k)),
            model: RmtgbModel {
                loss,
                rounds: [0; 3],
                shrinkage: config.shrinkage,
                theta: config.initial_theta(mt.num_tasks()),
                shared: empty.clone(),
                outlier: empty.clone(),
                non_outlier: empty.clone(),
                per_task: vec![empty; mt.num_tasks()],
            },
        })
    }

    pub(crate) fn require_task_sizes(&self) -> Result<()> {
        match self.task_rows.iter().position(|r| r.len() < 2) {
            Some(t) => invalid(format!("task {t} has fewer than 2 samples")),
            None => Ok(()),
        }
    }

    fn total_scores(&self) -> Array2<f64> {
        combine(
            &self.shared_scores,
            &self.non_outlier_scores,
            &self.outlier_scores,
            &self.task_scores,
            self.mt.task_of(),
            &self.model.gates(),
            0..self.mt.len(),
        )
    }

    fn mean_loss(&self) -> f64 {
        let total = total_loss(self.loss, self.mt.targets(), &self.total_scores().view())
            .expect("shapes checked at construction");
        total / self.mt.len() as f64
    }

    pub(crate) fn run_shared(&mut self, rounds: usize, mut observer: Option<&mut (dyn FnMut(usize, usize, f64) + '_)>) {
        let features = self.mt.features().view();
        let mut r = Array2::zeros(self.shared_scores.raw_dim());
        for _ in 0..rounds {
            let total = self.total_scores();
            pseudo_residual_into(self.loss, self.mt.targets(), &total.view(), &mut r);
            let stump = fit_stump_sorted(&self.pooled_index, &r.view());
            stump.add_scaled_to(&features, self.shrinkage, &mut self.shared_scores);
            self.model.shared.stumps.push(stump);
            self.model.rounds[0] += 1;
            if let Some(obs) = observer.as_mut() {
                obs(1, self.model.rounds[0], self.mean_loss());
            }
        }
    }

    pub(crate) fn run_gated(&mut self, rounds: usize, mut observer: Option<&mut (dyn FnMut(usize, usize, f64) + '_)>) {
        let features = self.mt.features().view();
        let task_of = self.mt.task_of();
        let mut r = Array2::zeros(self.shared_scores.raw_dim());
        for _ in 0..rounds {
            // both residual sets come from the round-start scores
            let total = self.total_scores();
            pseudo_residual_into(self.loss, self.mt.targets(), &total.view(), &mut r);
            let gates = self.model.gates();
            let mut r_out = r.clone();
            let mut r_non = r.clone();
            for (i, &t) in task_of.iter().enumerate() {
                r_out.row_mut(i).iter_mut().for_each(|v| *v *= gates[t]);
                r_non.row_mut(i).iter_mut().for_each(|v| *v *= 1.0 - gates[t]);
            }
            let out_stump = fit_stump_sorted(&self.pooled_index, &r_out.view());
            out_stump.add_scaled_to(&features, self.shrinkage, &mut self.outlier_scores);
            self.model.outlier.stumps.push(out_stump);
            let non_stump = fit_stump_sorted(&self.pooled_index, &r_non.view());
            non_stump.add_scaled_to(&features, self.shrinkage, &mut self.non_outlier_scores);
            self.model.non_outlier.stumps.push(non_stump);

            // θ step at the refreshed scores
            let total = self.total_scores();
            pseudo_residual_into(self.loss, self.mt.targets(), &total.view(), &mut r);
            let grad = theta_gradient_raw(
                &r,
                &self.outlier_scores.view(),
                &self.non_outlier_scores.view(),
                task_of,
                &self.model.theta,
            );
            for (th, g) in self.model.theta.iter_mut().zip(grad) {
                *th -= self.theta_step * g;
            }
            self.model.rounds[1] += 1;
            if let Some(obs) = observer.as_mut() {
                obs(2, self.model.rounds[1], self.mean_loss());
            }
        }
    }

    pub(crate) fn run_tasks(&mut self, rounds: usize, mut observer: Option<&mut (dyn FnMut(usize, usize, f64) + '_)>) {
        if rounds == 0 {
            return;
        }
        let gates = self.model.gates();
        let k = self.shared_scores.ncols();
        // Fixed part of each task's score, and its running own-component score.
        let mut fixed = Vec::with_capacity(self.task_rows.len());
        let mut own = Vec::with_capacity(self.task_rows.len());
        for rows in self.task_rows.iter() {
            fixed.push((
                self.shared_scores.select(Axis(0), rows),
                self.non_outlier_scores.select(Axis(0), rows),
                self.outlier_scores.select(Axis(0), rows),
            ));
            own.push(self.task_scores.select(Axis(0), rows));
        }
        for _ in 0..rounds {
            for (t, (x, y, index)) in self.task_data.iter().enumerate() {
                let (s, non, out) = &fixed[t];
                let g = gates[t];
                let mut total = Array2::zeros((x.nrows(), k));
                for i in 0..x.nrows() {
                    for j in 0..k {
                        total[[i, j]] = s[[i, j]] + (1.0 - g) * non[[i, j]] + g * out[[i, j]] + own[t][[i, j]];
                    }
                }
                let mut r = Array2::zeros(total.raw_dim());
                pseudo_residual_into(self.loss, y, &total.view(), &mut r);
                let stump = fit_stump_sorted(index, &r.view());
                stump.add_scaled_to(&x.view(), self.shrinkage, &mut own[t]);
                self.model.per_task[t].stumps.push(stump);
            }
            self.model.rounds[2] += 1;
            if let Some(obs) = observer.as_mut() {
                self.scatter_task_scores(&own);
                obs(3, self.model.rounds[2], self.mean_loss());
            }
        }
        self.scatter_task_scores(&own);
    }

    fn scatter_task_scores(&mut self, own: &[Array2<f64>]) {
        for (rows, scores) in self.task_rows.iter().zip(own) {
            for (r, &i) in rows.iter().enumerate() {
                self.task_scores.row_mut(i).assign(&scores.row(r));
            }
        }
    }

    pub(crate) fn into_model(self) -> RmtgbModel {
        self.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> MultiTaskDataset {
        let x = Array2::from_shape_fn((24, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let task_of: Vec<usize> = (0..24).map(|i| i % 3).collect();
        let y = (0..24)
            .map(|i| x[[i, 0]] * 2.0 - x[[i, 1]] + if task_of[i] == 2 { -3.0 * x[[i, 0]] } else { 0.0 })
            .collect();
        MultiTaskDataset::new(x, y, task_of, 3, 1).unwrap()
    }

    #[test]
    fn zero_model_residuals_are_targets() {
        let ds = toy();
        let zeros = Array2::zeros((ds.len(), 1));
        let r = shared_residuals(LossKind::SquaredError, &ds, &zeros.view()).unwrap();
        assert_eq!(r.column(0).to_vec(), ds.targets());
        let rt = task_residuals(LossKind::SquaredError, &ds.targets()[..3], &zeros.slice(ndarray::s![..3, ..])).unwrap();
        assert_eq!(rt.column(0).to_vec(), ds.targets()[..3].to_vec());
        assert!(task_residuals(LossKind::SquaredError, &[], &Array2::zeros((0, 1)).view()).is_err());
    }

    #[test]
    fn gated_residuals_split_exactly() {
        let ds = toy();
        let scores = Array2::from_shape_fn((ds.len(), 1), |(i, _)| (i as f64).cos());
        let theta = [0.0, -1e6, 1e6];
        let r = shared_residuals(LossKind::SquaredError, &ds, &scores.view()).unwrap();
        let ro = outlier_residuals(LossKind::SquaredError, &ds, &scores.view(), &theta).unwrap();
        let rn = non_outlier_residuals(LossKind::SquaredError, &ds, &scores.view(), &theta).unwrap();
        for i in 0..ds.len() {
            let (a, b, c) = (r[[i, 0]], ro[[i, 0]], rn[[i, 0]]);
            match ds.task_of()[i] {
                0 => assert!(b == 0.5 * a && c == 0.5 * a),
                1 => assert!(b == 0.0 && c == a),
                _ => assert!(b == a && c == 0.0),
            }
        }
        assert!(outlier_residuals(LossKind::SquaredError, &ds, &scores.view(), &[0.0]).is_err());
    }

    #[test]
    fn theta_gradient_single_sample() {
        let ds = MultiTaskDataset::new(array![[0.0]], vec![1.0], vec![0], 1, 1).unwrap();
        // r = y − F = 1 with F = 0; outlier − non_outlier = 2; σ(0) = ½
        let g = theta_gradient(
            LossKind::SquaredError,
            &ds,
            &array![[0.0]].view(),
            &array![[1.0]].view(),
            &array![[-1.0]].view(),
            &[0.0],
        )
        .unwrap();
        assert_eq!(g, vec![-0.5]);
        let same = theta_gradient(
            LossKind::SquaredError,
            &ds,
            &array![[0.3]].view(),
            &array![[0.7]].view(),
            &array![[0.7]].view(),
            &[1.3],
        )
        .unwrap();
        assert_eq!(same, vec![0.0]);
    }

    #[test]
    fn empty_model_predicts_zero_and_gate_collapses() {
        let ds = toy();
        let m = fit_rmtgb(&ds, &RmtgbConfig::with_rounds(0, 0, 0)).unwrap();
        let p = m.predict(&ds.features().view(), ds.task_of()).unwrap();
        assert!(p.iter().all(|&v| v == 0.0));

        let mut m = fit_rmtgb(&ds, &RmtgbConfig::with_rounds(2, 0, 2)).unwrap();
        let stumps = fit_rmtgb(&ds, &RmtgbConfig::with_rounds(3, 0, 0)).unwrap().shared.stumps;
        m.outlier.stumps = stumps.clone();
        m.non_outlier.stumps = stumps;
        let a = predict_rmtgb(&m, &ds.features().view(), 1).unwrap();
        m.theta[1] = -4.0;
        let b = predict_rmtgb(&m, &ds.features().view(), 1).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(predict_rmtgb(&m, &ds.features().view(), 3).is_err());
    }

    #[test]
    fn half_gate_prediction() {
        let ds = toy();
        let mut m = fit_rmtgb(&ds, &RmtgbConfig::with_rounds(2, 3, 2)).unwrap();
        m.theta = vec![0.0; 3];
        let x = ds.features().view();
        let p = predict_rmtgb(&m, &x, 2).unwrap();
        let s = predict_gb(&m.shared, &x).unwrap();
        let o = predict_gb(&m.outlier, &x).unwrap();
        let n = predict_gb(&m.non_outlier, &x).unwrap();
        let t = predict_gb(&m.per_task[2], &x).unwrap();
        let expect = &s + &((&n + &o) * 0.5) + &t;
        for (a, b) in p.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = toy();
        let cfg = RmtgbConfig { seed: 11, ..RmtgbConfig::with_rounds(3, 4, 2) };
        assert_eq!(fit_rmtgb(&ds, &cfg).unwrap(), fit_rmtgb(&ds, &cfg).unwrap());
        let other = RmtgbConfig { seed: 12, ..cfg };
        assert_ne!(fit_rmtgb(&ds, &cfg).unwrap().theta, fit_rmtgb(&ds, &other).unwrap().theta);
    }

    #[test]
    fn incremental_training_matches_direct() {
        let ds = toy();
        let cfg = RmtgbConfig { seed: 5, ..RmtgbConfig::with_rounds(4, 6, 5) };
        let direct = fit_rmtgb(&ds, &cfg).unwrap();
        let mut tr = Trainer::new(&ds, &cfg).unwrap();
        tr.run_shared(1, None);
        tr.run_shared(3, None);
        tr.run_gated(2, None);
        tr.run_gated(4, None);
        tr.run_tasks(5, None);
        assert_eq!(tr.into_model(), direct);
        let shorter = fit_rmtgb(&ds, &RmtgbConfig { m3: 2, ..cfg }).unwrap();
        assert_eq!(direct.with_task_rounds(2), shorter);
    }

    #[test]
    fn training_prediction_matches_cache() {
        let ds = toy();
        let cfg = RmtgbConfig { seed: 3, ..RmtgbConfig::with_rounds(3, 3, 3) };
        let mut tr = Trainer::new(&ds, &cfg).unwrap();
        tr.run_shared(3, None);
        tr.run_gated(3, None);
        tr.run_tasks(3, None);
        let cached = tr.total_scores();
        let m = tr.into_model();
        assert_eq!(m.predict(&ds.features().view(), ds.task_of()).unwrap(), cached);
    }

    #[test]
    fn shared_block_loss_non_increasing() {
        let ds = toy();
        let mut losses = Vec::new();
        let mut obs = |b: usize, _: usize, l: f64| {
            if b == 1 {
                losses.push(l)
            }
        };
        fit_rmtgb_observed(&ds, &RmtgbConfig::with_rounds(15, 0, 0), Some(&mut obs)).unwrap();
        assert_eq!(losses.len(), 15);
        assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn small_task_rejected_only_with_block3() {
        let ds = MultiTaskDataset::new(array![[1.0], [2.0], [3.0]], vec![1.0, 2.0, 3.0], vec![0, 0, 1], 2, 1).unwrap();
        assert!(fit_rmtgb(&ds, &RmtgbConfig::with_rounds(2, 2, 1)).is_err());
        assert!(fit_rmtgb(&ds, &RmtgbConfig::with_rounds(2, 2, 0)).is_ok());
    }

    #[test]
    fn json_layout() {
        let ds = toy();
        let m = fit_rmtgb(&ds, &RmtgbConfig::with_rounds(1, 0, 1)).unwrap();
        let v = serde_json::to_value(&m).unwrap();
        for key in ["loss", "rounds", "shrinkage", "theta", "shared", "outlier", "non_outlier", "per_task"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["rounds"], serde_json::json!([1, 0, 1]));
        assert_eq!(v["outlier"]["stumps"], serde_json::json!([]));
        let back: RmtgbModel = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }
}

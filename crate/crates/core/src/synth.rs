//! Synthetic multi-task benchmarks built from random Fourier features.
//!
//! Each latent function is
//! `f(x) = Σ_i weight_i · √(2α/D) · cos(w_iᵀ x / d_x + b_i)` with
//! `d_x = length_scale · d`, an approximate draw from a stationary Gaussian
//! process prior with variance `α`. Inlier tasks mix one common function
//! with a private one; outlier tasks swap the common function for their own
//! independent draw.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dataset::MultiTaskDataset;
use crate::error::{invalid, Error, Result};

/// Resampling attempts allowed when enforcing class balance.
pub const MAX_BALANCE_RETRIES: usize = 50;

/// Smallest admissible share of the minority class in every task.
pub const MIN_CLASS_SHARE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RffFunction {
    /// `D x d` matrix of frequencies.
    pub frequencies: Array2<f64>,
    pub phases: Array1<f64>,
    pub weights: Array1<f64>,
    pub amplitude: f64,
    pub length_scale: f64,
}

impl RffFunction {
    pub fn input_dim(&self) -> usize {
        self.frequencies.ncols()
    }

    pub fn num_features(&self) -> usize {
        self.frequencies.nrows()
    }

    /// The input divisor `length_scale · d`.
    pub fn input_scale(&self) -> f64 {
        self.length_scale * self.input_dim() as f64
    }

    pub fn eval(&self, x: &ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.input_dim() {
            return invalid(format!("input has {} entries, function expects {}", x.len(), self.input_dim()));
        }
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &ArrayView1<f64>) -> f64 {
        let scale = self.input_scale();
        let coef = (2.0 * self.amplitude / self.num_features() as f64).sqrt();
        self.frequencies
            .rows()
            .into_iter()
            .zip(self.phases.iter().zip(&self.weights))
            .map(|(w, (b, theta))| {
                let proj: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi / scale).sum();
                theta * coef * (proj + b).cos()
            })
            .sum()
    }
}

pub fn rff_eval(f: &RffFunction, x: &ArrayView1<f64>) -> Result<f64> {
    f.eval(x)
}

/// Draws frequencies and weights from `N(0, 1)` and phases from `U[0, 2π)`.
pub fn sample_rff<R: Rng + ?Sized>(
    dim: usize,
    num_features: usize,
    length_scale: f64,
    amplitude: f64,
    rng: &mut R,
) -> Result<RffFunction> {
    if dim == 0 || num_features == 0 {
        return invalid("RFF needs d >= 1 and D >= 1");
    }
    if !(length_scale > 0.0 && length_scale.is_finite()) {
        return invalid(format!("length scale must be positive, got {length_scale}"));
    }
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return invalid(format!("amplitude must be >= 0, got {amplitude}"));
    }
    let frequencies = Array2::from_shape_simple_fn((num_features, dim), || StandardNormal.sample(rng));
    let phase = Uniform::new(0.0, 2.0 * PI).expect("valid range");
    let phases = Array1::from_shape_simple_fn(num_features, || phase.sample(rng));
    let weights = Array1::from_shape_simple_fn(num_features, || StandardNormal.sample(rng));
    Ok(RffFunction { frequencies, phases, weights, amplitude, length_scale })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_tasks: usize,
    pub num_outliers: usize,
    pub dim: usize,
    pub train_per_task: usize,
    pub test_per_task: usize,
    pub mix_weight: f64,
    pub task_kind: TaskKind,
    pub rff_features: usize,
    pub length_scale: f64,
    pub amplitude: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Ten tasks (the last two outliers), five inputs, 300 training and
    /// 1000 test samples per task, mixing weight 0.9. With five inputs the
    /// length scale 0.25 gives `d_x = 1.25`.
    pub fn benchmark_preset(task_kind: TaskKind) -> Self {
        SynthConfig {
            num_tasks: 10,
            num_outliers: 2,
            dim: 5,
            train_per_task: 300,
            test_per_task: 1000,
            mix_weight: 0.9,
            task_kind,
            rff_features: 100,
            length_scale: 0.25,
            amplitude: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 || self.dim == 0 || self.rff_features == 0 {
            return invalid("num_tasks, dim and rff_features must be positive");
        }
        if self.num_outliers > self.num_tasks {
            return invalid(format!("{} outliers among {} tasks", self.num_outliers, self.num_tasks));
        }
        if !(0.0..=1.0).contains(&self.mix_weight) {
            return invalid(format!("mix weight {} outside [0, 1]", self.mix_weight));
        }
        if self.train_per_task == 0 || self.test_per_task == 0 {
            return invalid("every task needs train and test samples");
        }
        if !(self.length_scale > 0.0) {
            return invalid("length scale must be positive");
        }
        Ok(())
    }

    /// Outliers are the last `num_outliers` task ids.
    pub fn outlier_ids(&self) -> Vec<usize> {
        (self.num_tasks - self.num_outliers..self.num_tasks).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBatch {
    pub train: MultiTaskDataset,
    pub test: MultiTaskDataset,
    pub outlier_task_ids: Vec<usize>,
}

/// The latent functions of one batch.
#[derive(Debug, Clone)]
pub struct TaskFunctions {
    pub common: RffFunction,
    pub private: Vec<RffFunction>,
    /// Replacement common function for each outlier task, indexed by task id.
    pub outlier_common: Vec<Option<RffFunction>>,
    pub mix_weight: f64,
}

impl TaskFunctions {
    fn sample<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<Self> {
        let draw = |rng: &mut R| sample_rff(cfg.dim, cfg.rff_features, cfg.length_scale, cfg.amplitude, rng);
        let common = draw(rng)?;
        let private = (0..cfg.num_tasks).map(|_| draw(rng)).collect::<Result<Vec<_>>>()?;
        let first_outlier = cfg.num_tasks - cfg.num_outliers;
        let outlier_common = (0..cfg.num_tasks)
            .map(|t| if t >= first_outlier { draw(rng).map(Some) } else { Ok(None) })
            .collect::<Result<Vec<_>>>()?;
        Ok(TaskFunctions { common, private, outlier_common, mix_weight: cfg.mix_weight })
    }

    /// Noise-free response of task `task` at `x`.
    pub fn response(&self, task: usize, x: &ArrayView1<f64>) -> f64 {
        let common = self.outlier_common[task].as_ref().unwrap_or(&self.common);
        self.mix_weight * common.eval_unchecked(x) + (1.0 - self.mix_weight) * self.private[task].eval_unchecked(x)
    }
}

fn sample_inputs<R: Rng + ?Sized>(cfg: &SynthConfig, per_task: usize, rng: &mut R) -> (Array2<f64>, Vec<usize>) {
    let u = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let n = per_task * cfg.num_tasks;
    let x = Array2::from_shape_simple_fn((n, cfg.dim), || u.sample(rng));
    let task_of = (0..n).map(|i| i / per_task).collect();
    (x, task_of)
}

fn responses(f: &TaskFunctions, x: &Array2<f64>, task_of: &[usize]) -> Vec<f64> {
    x.rows().into_iter().zip(task_of).map(|(row, &t)| f.response(t, &row)).collect()
}

/// Labels `sign(F)` with `F < 0 → 0` and `F >= 0 → 1`.
pub fn binarize(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| if v < 0.0 { 0.0 } else { 1.0 }).collect()
}

fn balanced(labels: &[f64], task_of: &[usize], num_tasks: usize) -> bool {
    let mut ones = vec![0usize; num_tasks];
    let mut counts = vec![0usize; num_tasks];
    for (&y, &t) in labels.iter().zip(task_of) {
        counts[t] += 1;
        ones[t] += (y == 1.0) as usize;
    }
    counts.iter().zip(&ones).all(|(&n, &k)| {
        let minority = k.min(n - k) as f64;
        minority >= MIN_CLASS_SHARE * n as f64
    })
}

/// Generates the train and test sets of one benchmark batch.
pub fn gen_multitask<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<SyntheticBatch> {
    Ok(gen_multitask_with_functions(cfg, rng)?.0)
}

pub fn gen_multitask_with_functions<R: Rng + ?Sized>(
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<(SyntheticBatch, TaskFunctions)> {
    cfg.validate()?;
    let (x_train, t_train) = sample_inputs(cfg, cfg.train_per_task, rng);
    let (x_test, t_test) = sample_inputs(cfg, cfg.test_per_task, rng);
    let attempts = match cfg.task_kind {
        TaskKind::Regression => 1,
        TaskKind::Classification => MAX_BALANCE_RETRIES + 1,
    };
    for _ in 0..attempts {
        let functions = TaskFunctions::sample(cfg, rng)?;
        let mut y_train = responses(&functions, &x_train, &t_train);
        let mut y_test = responses(&functions, &x_test, &t_test);
        let num_classes = match cfg.task_kind {
            TaskKind::Regression => 1,
            TaskKind::Classification => {
                y_train = binarize(&y_train);
                y_test = binarize(&y_test);
                if !balanced(&y_train, &t_train, cfg.num_tasks) || !balanced(&y_test, &t_test, cfg.num_tasks) {
                    continue;
                }
                2
            }
        };
        let batch = SyntheticBatch {
            train: MultiTaskDataset::new(x_train, y_train, t_train, cfg.num_tasks, num_classes)?,
            test: MultiTaskDataset::new(x_test, y_test, t_test, cfg.num_tasks, num_classes)?,
            outlier_task_ids: cfg.outlier_ids(),
        };
        return Ok((batch, functions));
    }
    Err(Error::Generation(format!(
        "no function draw gave every task a minority class share >= {MIN_CLASS_SHARE} after {MAX_BALANCE_RETRIES} retries \
         (tasks {}, length scale {}, mix weight {})",
        cfg.num_tasks, cfg.length_scale, cfg.mix_weight
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_feature_evaluates_to_one() {
        let f = RffFunction {
            frequencies: array![[0.0, 0.0]],
            phases: array![0.0],
            weights: array![1.0],
            amplitude: 0.5,
            length_scale: 1.0,
        };
        for x in [array![0.3, -0.9], array![1.0, 1.0]] {
            assert_eq!(f.eval(&x.view()).unwrap(), 1.0);
        }
        assert!(f.eval(&array![1.0].view()).is_err());
    }

    #[test]
    fn bounded_by_weight_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = sample_rff(3, 20, 0.5, 2.0, &mut rng).unwrap();
        let bound = (2.0 * 2.0 / 20.0f64).sqrt() * f.weights.iter().map(|w| w.abs()).sum::<f64>();
        for _ in 0..200 {
            let x = Array1::from_shape_simple_fn(3, || rng.random_range(-3.0..3.0));
            assert!(f.eval(&x.view()).unwrap().abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn seeded_draws_repeat() {
        let a = sample_rff(2, 8, 1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = sample_rff(2, 8, 1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let c = sample_rff(2, 8, 1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        let probe = array![0.2, -0.4];
        assert_ne!(a.eval(&probe.view()).unwrap(), c.eval(&probe.view()).unwrap());
        assert!(a.phases.iter().all(|&p| (0.0..2.0 * PI).contains(&p)));
    }

    #[test]
    fn bad_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_rff(2, 8, 0.0, 1.0, &mut rng).is_err());
        assert!(sample_rff(2, 8, -1.0, 1.0, &mut rng).is_err());
        assert!(sample_rff(0, 8, 1.0, 1.0, &mut rng).is_err());
        let mut cfg = SynthConfig::benchmark_preset(TaskKind::Regression);
        cfg.num_outliers = 11;
        assert!(gen_multitask(&cfg, &mut rng).is_err());
    }

    #[test]
    fn binarize_maps_zero_to_one() {
        assert_eq!(binarize(&[-0.5, 0.0, 2.0]), vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn preset_shapes() {
        let cfg = SynthConfig::benchmark_preset(TaskKind::Regression);
        let b = gen_multitask(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(b.train.len(), 3000);
        assert_eq!(b.test.len(), 10000);
        assert_eq!(b.train.dim(), 5);
        assert_eq!(b.outlier_task_ids, vec![8, 9]);
        assert!(b.train.features().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn full_mix_weight_shares_targets() {
        let cfg = SynthConfig { mix_weight: 1.0, num_outliers: 0, num_tasks: 3, ..SynthConfig::benchmark_preset(TaskKind::Regression) };
        let (_, f) = gen_multitask_with_functions(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let x = array![0.1, 0.2, -0.3, 0.4, -0.5];
        let v: Vec<f64> = (0..3).map(|t| f.response(t, &x.view())).collect();
        assert!(v.iter().all(|&a| a == v[0]));
    }

    #[test]
    fn classification_batches_are_balanced() {
        let cfg = SynthConfig::benchmark_preset(TaskKind::Classification);
        for seed in 0..3 {
            let b = gen_multitask(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for ds in [&b.train, &b.test] {
                assert_eq!(ds.num_classes(), 2);
                for (t, rows) in ds.task_indices().iter().enumerate() {
                    let ones = rows.iter().filter(|&&i| ds.targets()[i] == 1.0).count();
                    let minority = ones.min(rows.len() - ones);
                    assert!(minority * 10 >= rows.len(), "seed {seed} task {t}: {minority}/{}", rows.len());
                }
            }
        }
    }

    #[test]
    fn nearly_constant_functions_exhaust_retries() {
        // A huge length scale flattens every function, so one class dominates each task.
        let cfg = SynthConfig { length_scale: 1e6, ..SynthConfig::benchmark_preset(TaskKind::Classification) };
        match gen_multitask(&cfg, &mut ChaCha8Rng::seed_from_u64(0)) {
            Err(Error::Generation(_)) => {}
            other => panic!("expected a generation error, got {other:?}"),
        }
    }
}

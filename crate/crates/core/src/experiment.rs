//! Repeated-batch benchmark: per batch, generate or split the data,
//! grid-search every model with cross-validation on the training part,
//! refit the best configuration and score it on the held-out part.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::MultiTaskDataset;
use crate::error::{invalid, Error, Result};
use crate::eval::{
    align_theta, fit_family, grid_search_cv, mean_std, per_task_metric, point_predictions, rank_models,
    split_train_test, stratified_folds, FitSettings, MetricKind, ModelFamily, ModelGrid, Rounds, Scorer,
};
use crate::io::write_json;
use crate::loss::LossKind;
use crate::synth::{gen_multitask, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic { config: SynthConfig },
    /// A fixed dataset, split anew in every batch.
    Dataset {
        name: String,
        #[serde(skip)]
        data: Option<MultiTaskDataset>,
        split_ratio: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub models: Vec<ModelFamily>,
    pub grids: BTreeMap<ModelFamily, ModelGrid>,
    pub num_batches: usize,
    pub seed: u64,
    pub folds: usize,
    pub settings: FitSettings,
    /// Worker threads; 0 uses every core.
    #[serde(skip)]
    pub jobs: usize,
}

impl ExperimentConfig {
    /// Every model with its default grid.
    pub fn new(source: DataSource, num_batches: usize, seed: u64) -> Self {
        ExperimentConfig {
            source,
            models: ModelFamily::ALL.to_vec(),
            grids: ModelFamily::ALL.iter().map(|&m| (m, m.default_grid())).collect(),
            num_batches,
            seed,
            folds: 5,
            settings: FitSettings::default(),
            jobs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_batches == 0 {
            return invalid("at least one batch is required");
        }
        if self.models.is_empty() {
            return invalid("at least one model is required");
        }
        let mut seen = self.models.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.models.len() {
            return invalid("models are listed more than once");
        }
        for m in &self.models {
            self.grid(*m)?.validate(*m)?;
        }
        if let DataSource::Synthetic { config } = &self.source {
            config.validate()?;
        }
        Ok(())
    }

    fn grid(&self, model: ModelFamily) -> Result<&ModelGrid> {
        self.grids
            .get(&model)
            .ok_or_else(|| Error::InvalidArgument(format!("no grid for model {model}")))
    }
}

/// The random stream of batch `b`; independent of how many batches run.
pub fn batch_rng(root_seed: u64, batch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(batch as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutcome {
    pub model: ModelFamily,
    pub best: Rounds,
    pub cv_score: f64,
    /// `(metric, per-task values)` on the training split.
    pub train: Vec<(MetricKind, Vec<f64>)>,
    pub test: Vec<(MetricKind, Vec<f64>)>,
    /// Gate values `σ(θ_t)` of the refitted gated model.
    pub sigma: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub batch: usize,
    pub outlier_task_ids: Vec<usize>,
    pub models: Vec<ModelOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub loss: LossKind,
    pub num_tasks: usize,
    pub batches: Vec<BatchOutcome>,
}

fn run_batch(cfg: &ExperimentConfig, batch: usize) -> Result<BatchOutcome> {
    let mut rng = batch_rng(cfg.seed, batch);
    let (train, test, outlier_task_ids) = match &cfg.source {
        DataSource::Synthetic { config } => {
            let b = gen_multitask(config, &mut rng)?;
            (b.train, b.test, b.outlier_task_ids)
        }
        DataSource::Dataset { data, split_ratio, .. } => {
            let Some(data) = data else {
                return invalid("dataset source has no data loaded");
            };
            let (tr, te) = split_train_test(data, *split_ratio, &mut rng)?;
            (tr, te, Vec::new())
        }
    };
    let fold_of = stratified_folds(&train, cfg.folds, &mut rng)?;
    let settings = FitSettings { seed: rng.random(), ..cfg.settings };
    let loss = train.loss_kind();
    let scorer = Scorer::for_loss(loss);

    let mut models = Vec::with_capacity(cfg.models.len());
    for &model in &cfg.models {
        let search = grid_search_cv(model, cfg.grid(model)?, &train, &fold_of, &settings, scorer)?;
        let fitted = fit_family(model, &train, search.best, &settings)?;
        let evaluate = |ds: &MultiTaskDataset| -> Result<Vec<(MetricKind, Vec<f64>)>> {
            let pred = point_predictions(loss, &fitted.predict_dataset(ds)?);
            MetricKind::for_loss(loss)
                .into_iter()
                .map(|k| Ok((k, per_task_metric(k, ds, &pred)?)))
                .collect()
        };
        let sigma = match model {
            ModelFamily::Rmtgb => fitted.rmtgb().map(|m| m.gates()),
            _ => None,
        };
        models.push(ModelOutcome {
            model,
            best: search.best,
            cv_score: search.best_score,
            train: evaluate(&train)?,
            test: evaluate(&test)?,
            sigma,
        });
    }
    Ok(BatchOutcome { batch, outlier_task_ids, models })
}

/// Runs every batch, concurrently up to `cfg.jobs` threads. The result does
/// not depend on the thread count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let batches = pool.install(|| {
        (0..cfg.num_batches)
            .into_par_iter()
            .map(|b| run_batch(cfg, b).map_err(|e| Error::InvalidArgument(format!("batch {b} failed: {e}"))))
            .collect::<Result<Vec<_>>>()
    })?;
    let (loss, num_tasks) = match &cfg.source {
        DataSource::Synthetic { config } => (
            if config.task_kind == crate::synth::TaskKind::Regression {
                LossKind::SquaredError
            } else {
                LossKind::CrossEntropy
            },
            config.num_tasks,
        ),
        DataSource::Dataset { data, .. } => {
            let d = data.as_ref().expect("checked in run_batch");
            (d.loss_kind(), d.num_tasks())
        }
    };
    Ok(ExperimentReport { config: cfg.clone(), loss, num_tasks, batches })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: ModelFamily,
    pub metric: MetricKind,
    pub train_mean: f64,
    pub train_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
}

impl ExperimentReport {
    fn outcomes(&self, model: ModelFamily) -> impl Iterator<Item = &ModelOutcome> {
        self.batches.iter().flat_map(move |b| b.models.iter().filter(move |m| m.model == model))
    }

    /// Batch means (over tasks) of one metric for one model.
    pub fn batch_means(&self, model: ModelFamily, metric: MetricKind, test: bool) -> Vec<f64> {
        self.outcomes(model)
            .filter_map(|o| {
                let values = if test { &o.test } else { &o.train };
                values.iter().find(|(k, _)| *k == metric).map(|(_, v)| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect()
    }

    /// Mean and spread over batches of each batch's task-averaged metric.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for &model in &self.config.models {
            for metric in MetricKind::for_loss(self.loss) {
                let (train_mean, train_std) = mean_std(&self.batch_means(model, metric, false));
                let (test_mean, test_std) = mean_std(&self.batch_means(model, metric, true));
                rows.push(SummaryRow { model, metric, train_mean, train_std, test_mean, test_std });
            }
        }
        rows
    }

    /// Gate vectors of the gated model per batch, raw and aligned to the first batch.
    pub fn sigma_vectors(&self) -> Result<Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>> {
        let raw: Vec<Vec<f64>> = self.outcomes(ModelFamily::Rmtgb).filter_map(|o| o.sigma.clone()).collect();
        if raw.is_empty() {
            return Ok(None);
        }
        let aligned = align_theta(&raw)?;
        Ok(Some((raw, aligned)))
    }

    /// Average test rank of the models on the primary metric, one scenario
    /// per task (task values averaged over batches).
    pub fn ranks(&self) -> Result<Option<crate::eval::RankSummary>> {
        if self.config.models.len() < 2 {
            return Ok(None);
        }
        let metric = MetricKind::for_loss(self.loss)[0];
        let mut table = vec![vec![0.0; self.config.models.len()]; self.num_tasks];
        for (j, &model) in self.config.models.iter().enumerate() {
            let mut count = 0;
            for o in self.outcomes(model) {
                let (_, values) = o.test.iter().find(|(k, _)| *k == metric).expect("primary metric present");
                for (t, v) in values.iter().enumerate() {
                    table[t][j] += v;
                }
                count += 1;
            }
            for row in table.iter_mut() {
                row[j] /= count as f64;
            }
        }
        let flags = vec![metric.higher_is_better(); table.len()];
        rank_models(&table, &flags).map(Some)
    }

    /// Writes `metrics.csv`, `summary.csv`, `ranks.csv`, `best_params.csv`,
    /// `sigma_theta.csv` (when the gated model ran) and `manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;

        let mut s = String::from("batch,model,task,metric,value\n");
        for b in &self.batches {
            for o in &b.models {
                for (metric, values) in &o.test {
                    for (t, v) in values.iter().enumerate() {
                        writeln!(s, "{},{},{t},{},{v}", b.batch, o.model, metric.name()).unwrap();
                    }
                }
            }
        }
        fs::write(dir.join("metrics.csv"), s)?;

        let mut s = String::from("model,metric,train_mean,train_std,test_mean,test_std\n");
        for r in self.summary() {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.model,
                r.metric.name(),
                r.train_mean,
                r.train_std,
                r.test_mean,
                r.test_std
            )
            .unwrap();
        }
        fs::write(dir.join("summary.csv"), s)?;

        let mut s = String::from("model,avg_rank,cd\n");
        if let Some(r) = self.ranks()? {
            for (m, rank) in self.config.models.iter().zip(&r.avg_rank) {
                writeln!(s, "{m},{rank},{}", r.critical_distance).unwrap();
            }
        }
        fs::write(dir.join("ranks.csv"), s)?;

        let mut s = String::from("batch,model,m1,m2,m3,cv_score\n");
        for b in &self.batches {
            for o in &b.models {
                writeln!(s, "{},{},{},{},{},{}", b.batch, o.model, o.best.m1, o.best.m2, o.best.m3, o.cv_score).unwrap();
            }
        }
        fs::write(dir.join("best_params.csv"), s)?;

        if let Some((raw, aligned)) = self.sigma_vectors()? {
            let batches = self.batches.iter().filter(|b| b.models.iter().any(|o| o.sigma.is_some()));
            let mut s = String::from("batch,task,sigma,sigma_aligned\n");
            for ((b, r), a) in batches.zip(&raw).zip(&aligned) {
                for (t, (x, y)) in r.iter().zip(a).enumerate() {
                    writeln!(s, "{},{t},{x},{y}", b.batch).unwrap();
                }
            }
            fs::write(dir.join("sigma_theta.csv"), s)?;
        }

        let manifest = serde_json::json!({
            "crate_version": env!("CARGO_PKG_VERSION"),
            "config": self.config,
            "loss": self.loss,
            "num_tasks": self.num_tasks,
            "outlier_task_ids": self.batches.first().map(|b| b.outlier_task_ids.clone()),
        });
        write_json(&manifest, &dir.join("manifest.json"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::TaskKind;

    fn small(kind: TaskKind) -> ExperimentConfig {
        let mut synth = SynthConfig::benchmark_preset(kind);
        synth.num_tasks = 3;
        synth.num_outliers = 1;
        synth.train_per_task = 30;
        synth.test_per_task = 20;
        let mut cfg = ExperimentConfig::new(DataSource::Synthetic { config: synth }, 2, 11);
        cfg.models = vec![ModelFamily::Rmtgb, ModelFamily::DataPooling];
        cfg.grids.insert(ModelFamily::Rmtgb, ModelGrid { m1: vec![0, 2], m2: vec![2], m3: vec![0, 3] });
        cfg.grids.insert(ModelFamily::DataPooling, ModelGrid { m1: vec![3, 5], m2: vec![0], m3: vec![0] });
        cfg
    }

    #[test]
    fn earlier_batches_do_not_depend_on_batch_count() {
        let mut cfg = small(TaskKind::Regression);
        let two = run_experiment(&cfg).unwrap();
        cfg.num_batches = 3;
        let three = run_experiment(&cfg).unwrap();
        assert_eq!(two.batches[..], three.batches[..2]);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut cfg = small(TaskKind::Classification);
        let a = run_experiment(&cfg).unwrap();
        cfg.jobs = 2;
        assert_eq!(run_experiment(&cfg).unwrap().batches, a.batches);
    }

    #[test]
    fn report_files() {
        let cfg = small(TaskKind::Regression);
        let report = run_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        report.write(dir.path()).unwrap();
        let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        // batches x models x tasks x metrics, plus the header
        assert_eq!(metrics.lines().count(), 2 * 2 * 3 * 2 + 1);
        let sigma = fs::read_to_string(dir.path().join("sigma_theta.csv")).unwrap();
        assert_eq!(sigma.lines().count(), 2 * 3 + 1);
        let ranks = fs::read_to_string(dir.path().join("ranks.csv")).unwrap();
        assert_eq!(ranks.lines().count(), 3);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = small(TaskKind::Regression);
        cfg.num_batches = 0;
        assert!(run_experiment(&cfg).is_err());
        let mut cfg = small(TaskKind::Regression);
        cfg.models.clear();
        assert!(run_experiment(&cfg).is_err());
        let mut cfg = small(TaskKind::Regression);
        cfg.grids.remove(&ModelFamily::DataPooling);
        assert!(run_experiment(&cfg).is_err());
    }
}

//! Metrics, splitting, cross-validated grid search, gate alignment and
//! average-rank statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boosting::{fit_baseline, BaselineKind, BaselineModel, GbParams};
use crate::dataset::MultiTaskDataset;
use crate::error::{invalid, Error, Result};
use crate::loss::{LossKind, ScoreMatrix};
use crate::model::{fit_rmtgb, RmtgbConfig, RmtgbModel, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    MacroRecall,
    Rmse,
    Mae,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::MacroRecall => "macro_recall",
            MetricKind::Rmse => "rmse",
            MetricKind::Mae => "mae",
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, MetricKind::Accuracy | MetricKind::MacroRecall)
    }

    /// Metrics reported for a loss, primary metric first.
    pub fn for_loss(loss: LossKind) -> [MetricKind; 2] {
        match loss {
            LossKind::SquaredError => [MetricKind::Rmse, MetricKind::Mae],
            LossKind::CrossEntropy => [MetricKind::Accuracy, MetricKind::MacroRecall],
        }
    }
}

/// Classification predictions are class labels, regression predictions values.
pub fn metric(kind: MetricKind, targets: &[f64], predictions: &[f64]) -> Result<f64> {
    if targets.len() != predictions.len() {
        return invalid(format!("{} targets vs {} predictions", targets.len(), predictions.len()));
    }
    if targets.is_empty() {
        return invalid("metric of an empty sample");
    }
    let n = targets.len() as f64;
    let pairs = targets.iter().zip(predictions);
    Ok(match kind {
        MetricKind::Accuracy => pairs.filter(|(y, p)| y == p).count() as f64 / n,
        MetricKind::Rmse => (pairs.map(|(y, p)| (y - p) * (y - p)).sum::<f64>() / n).sqrt(),
        MetricKind::Mae => pairs.map(|(y, p)| (y - p).abs()).sum::<f64>() / n,
        MetricKind::MacroRecall => {
            // classes absent from the targets are skipped
            let mut per_class: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
            for (y, p) in pairs {
                let e = per_class.entry(*y as i64).or_default();
                e.0 += 1;
                e.1 += (y == p) as usize;
            }
            per_class.values().map(|&(n, hit)| hit as f64 / n as f64).sum::<f64>() / per_class.len() as f64
        }
    })
}

/// Argmax labels for classification scores, the raw column for regression.
pub fn point_predictions(loss: LossKind, scores: &ScoreMatrix) -> Vec<f64> {
    match loss {
        LossKind::SquaredError => scores.column(0).to_vec(),
        LossKind::CrossEntropy => scores
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best as f64
            })
            .collect(),
    }
}

/// Metric of every task, in task order.
pub fn per_task_metric(kind: MetricKind, ds: &MultiTaskDataset, predictions: &[f64]) -> Result<Vec<f64>> {
    let mut ys = vec![Vec::new(); ds.num_tasks()];
    let mut ps = vec![Vec::new(); ds.num_tasks()];
    for ((&t, &y), &p) in ds.task_of().iter().zip(ds.targets()).zip(predictions) {
        ys[t].push(y);
        ps[t].push(p);
    }
    ys.iter().zip(&ps).map(|(y, p)| metric(kind, y, p)).collect()
}

/// Per-task random split; each task keeps at least one sample on each side.
pub fn split_train_test<R: Rng + ?Sized>(
    ds: &MultiTaskDataset,
    ratio: f64,
    rng: &mut R,
) -> Result<(MultiTaskDataset, MultiTaskDataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return invalid(format!("split ratio {ratio} outside (0, 1)"));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (t, mut rows) in ds.task_indices().into_iter().enumerate() {
        if rows.len() < 2 {
            return invalid(format!("task {t} has {} sample(s); splitting needs 2", rows.len()));
        }
        rows.shuffle(rng);
        let n_train = ((rows.len() as f64 * ratio).round() as usize).clamp(1, rows.len() - 1);
        train.extend_from_slice(&rows[..n_train]);
        test.extend_from_slice(&rows[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.select(&train)?, ds.select(&test)?))
}

/// Fold id of every row. Rows are stratified by task, and by class within
/// task for classification, so every fold sees every task.
pub fn stratified_folds<R: Rng + ?Sized>(ds: &MultiTaskDataset, folds: usize, rng: &mut R) -> Result<Vec<usize>> {
    if folds < 2 {
        return invalid("cross-validation needs at least 2 folds");
    }
    if let Some(t) = ds.task_counts().iter().position(|&c| c < folds) {
        return invalid(format!("task {t} has fewer samples than the {folds} folds"));
    }
    let mut groups: BTreeMap<(usize, i64), Vec<usize>> = BTreeMap::new();
    for (i, (&t, &y)) in ds.task_of().iter().zip(ds.targets()).enumerate() {
        let class = if ds.num_classes() > 1 { y as i64 } else { 0 };
        groups.entry((t, class)).or_default().push(i);
    }
    let mut fold_of = vec![0; ds.len()];
    // Continue the round-robin across the classes of one task so its folds stay balanced.
    let mut offset = 0;
    let mut current_task = usize::MAX;
    for ((t, _), mut rows) in groups {
        if t != current_task {
            current_task = t;
            offset = 0;
        }
        rows.shuffle(rng);
        for (j, &i) in rows.iter().enumerate() {
            fold_of[i] = (offset + j) % folds;
        }
        offset = (offset + rows.len()) % folds;
    }
    Ok(fold_of)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelFamily {
    #[serde(rename = "rmtgb")]
    Rmtgb,
    #[serde(rename = "mtgb")]
    Mtgb,
    #[serde(rename = "st-gb")]
    SingleTask,
    #[serde(rename = "dp-gb")]
    DataPooling,
    #[serde(rename = "taf-gb")]
    TaskAsFeature,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 5] = [
        ModelFamily::Rmtgb,
        ModelFamily::Mtgb,
        ModelFamily::SingleTask,
        ModelFamily::DataPooling,
        ModelFamily::TaskAsFeature,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Rmtgb => "rmtgb",
            ModelFamily::Mtgb => "mtgb",
            ModelFamily::SingleTask => "st-gb",
            ModelFamily::DataPooling => "dp-gb",
            ModelFamily::TaskAsFeature => "taf-gb",
        }
    }

    fn baseline(self) -> Option<BaselineKind> {
        match self {
            ModelFamily::SingleTask => Some(BaselineKind::SingleTask),
            ModelFamily::DataPooling => Some(BaselineKind::DataPooling),
            ModelFamily::TaskAsFeature => Some(BaselineKind::TaskAsFeature),
            _ => None,
        }
    }

    /// Round counts searched for this family by default.
    pub fn default_grid(self) -> ModelGrid {
        let rounds = vec![20, 30, 50, 100];
        match self {
            ModelFamily::Rmtgb => ModelGrid { m1: vec![0, 20, 30, 50], m2: vec![20, 30, 50], m3: vec![0, 20, 30, 50, 100] },
            ModelFamily::Mtgb => ModelGrid { m1: vec![20, 30, 50], m2: vec![0], m3: vec![0, 20, 30, 50, 100] },
            ModelFamily::SingleTask => ModelGrid { m1: vec![0], m2: vec![0], m3: rounds },
            ModelFamily::DataPooling | ModelFamily::TaskAsFeature => {
                ModelGrid { m1: rounds, m2: vec![0], m3: vec![0] }
            }
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelFamily::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model '{s}' (expected rmtgb, mtgb, st-gb, dp-gb, taf-gb)")))
    }
}

/// Round counts per training block.
///
/// Single-task boosting uses the third block only; pooled and task-as-feature
/// boosting use the first block only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rounds {
    pub m1: usize,
    pub m2: usize,
    pub m3: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelGrid {
    pub m1: Vec<usize>,
    pub m2: Vec<usize>,
    pub m3: Vec<usize>,
}

impl ModelGrid {
    /// Candidates in grid order (`m3` varies fastest).
    pub fn candidates(&self) -> Vec<Rounds> {
        let mut out = Vec::new();
        for &m1 in &self.m1 {
            for &m2 in &self.m2 {
                for &m3 in &self.m3 {
                    out.push(Rounds { m1, m2, m3 });
                }
            }
        }
        out
    }

    pub fn validate(&self, family: ModelFamily) -> Result<()> {
        if self.m1.is_empty() || self.m2.is_empty() || self.m3.is_empty() {
            return invalid(format!("{family} grid has an empty axis"));
        }
        let only_zero = |v: &[usize]| v.iter().all(|&m| m == 0);
        let ok = match family {
            ModelFamily::Rmtgb => true,
            ModelFamily::Mtgb => only_zero(&self.m2),
            ModelFamily::SingleTask => only_zero(&self.m1) && only_zero(&self.m2),
            ModelFamily::DataPooling | ModelFamily::TaskAsFeature => only_zero(&self.m2) && only_zero(&self.m3),
        };
        if !ok {
            return invalid(format!("{family} grid sets rounds on a block the model does not have"));
        }
        Ok(())
    }
}

/// Settings shared by every fit of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub shrinkage: f64,
    pub theta_init_mean: f64,
    pub theta_init_std: f64,
    pub theta_learning_rate: Option<f64>,
    pub seed: u64,
}

impl Default for FitSettings {
    fn default() -> Self {
        let c = RmtgbConfig::default();
        FitSettings {
            shrinkage: c.shrinkage,
            theta_init_mean: c.theta_init_mean,
            theta_init_std: c.theta_init_std,
            theta_learning_rate: c.theta_learning_rate,
            seed: c.seed,
        }
    }
}

impl FitSettings {
    pub fn rmtgb_config(&self, rounds: Rounds) -> RmtgbConfig {
        RmtgbConfig {
            m1: rounds.m1,
            m2: rounds.m2,
            m3: rounds.m3,
            shrinkage: self.shrinkage,
            theta_init_mean: self.theta_init_mean,
            theta_init_std: self.theta_init_std,
            theta_learning_rate: self.theta_learning_rate,
            seed: self.seed,
        }
    }
}

/// Any fitted model of the compared families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "model")]
pub enum FittedModel {
    #[serde(rename = "rmtgb")]
    Rmtgb(RmtgbModel),
    #[serde(rename = "mtgb")]
    Mtgb(RmtgbModel),
    #[serde(rename = "baseline")]
    Baseline(BaselineModel),
}

impl FittedModel {
    pub fn predict(&self, features: &ArrayView2<f64>, task_of: &[usize]) -> Result<ScoreMatrix> {
        match self {
            FittedModel::Rmtgb(m) | FittedModel::Mtgb(m) => m.predict(features, task_of),
            FittedModel::Baseline(b) => b.predict(features, task_of),
        }
    }

    pub fn predict_dataset(&self, ds: &MultiTaskDataset) -> Result<ScoreMatrix> {
        self.predict(&ds.features().view(), ds.task_of())
    }

    pub fn rmtgb(&self) -> Option<&RmtgbModel> {
        match self {
            FittedModel::Rmtgb(m) | FittedModel::Mtgb(m) => Some(m),
            FittedModel::Baseline(_) => None,
        }
    }
}

pub fn fit_family(
    family: ModelFamily,
    train: &MultiTaskDataset,
    rounds: Rounds,
    settings: &FitSettings,
) -> Result<FittedModel> {
    let single = single_axis(family, rounds);
    match family {
        ModelFamily::Rmtgb => Ok(FittedModel::Rmtgb(fit_rmtgb(train, &settings.rmtgb_config(rounds))?)),
        ModelFamily::Mtgb => {
            if rounds.m2 != 0 {
                return invalid("mtgb has no outlier block (m2 must be 0)");
            }
            Ok(FittedModel::Mtgb(fit_rmtgb(train, &settings.rmtgb_config(rounds))?))
        }
        _ => {
            let kind = family.baseline().expect("baseline family");
            let params = GbParams::new(single, settings.shrinkage);
            Ok(FittedModel::Baseline(fit_baseline(kind, train, params)?))
        }
    }
}

fn single_axis(family: ModelFamily, r: Rounds) -> usize {
    match family {
        ModelFamily::SingleTask => r.m3,
        _ => r.m1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    /// Negative RMSE over all validation rows.
    NegRmse,
    Accuracy,
}

impl Scorer {
    pub fn for_loss(loss: LossKind) -> Self {
        match loss {
            LossKind::SquaredError => Scorer::NegRmse,
            LossKind::CrossEntropy => Scorer::Accuracy,
        }
    }

    pub fn score(self, loss: LossKind, ds: &MultiTaskDataset, scores: &ScoreMatrix) -> Result<f64> {
        let pred = point_predictions(loss, scores);
        match self {
            Scorer::NegRmse => Ok(-metric(MetricKind::Rmse, ds.targets(), &pred)?),
            Scorer::Accuracy => metric(MetricKind::Accuracy, ds.targets(), &pred),
        }
    }
}

/// Validation score of every candidate trained on `train`.
///
/// Nested round counts share their training prefix, so each distinct
/// training path is run once; the scores equal those of separate fits.
pub fn validation_scores(
    family: ModelFamily,
    candidates: &[Rounds],
    train: &MultiTaskDataset,
    valid: &MultiTaskDataset,
    settings: &FitSettings,
    scorer: Scorer,
) -> Result<Vec<f64>> {
    let loss = train.loss_kind();
    let score = |scores: ScoreMatrix| scorer.score(loss, valid, &scores);
    let x = valid.features().view();
    let tasks = valid.task_of();
    let mut out = vec![f64::NAN; candidates.len()];

    if let Some(kind) = family.baseline() {
        let max = candidates.iter().map(|&r| single_axis(family, r)).max().unwrap_or(0);
        let full = fit_baseline(kind, train, GbParams::new(max, settings.shrinkage))?;
        for (o, &r) in out.iter_mut().zip(candidates) {
            *o = score(full.truncated(single_axis(family, r)).predict(&x, tasks)?)?;
        }
        return Ok(out);
    }

    if family == ModelFamily::Mtgb && candidates.iter().any(|r| r.m2 != 0) {
        return invalid("mtgb has no outlier block (m2 must be 0)");
    }
    let mut m1s: Vec<usize> = candidates.iter().map(|r| r.m1).collect();
    let mut m2s: Vec<usize> = candidates.iter().map(|r| r.m2).collect();
    m1s.sort_unstable();
    m1s.dedup();
    m2s.sort_unstable();
    m2s.dedup();
    let max_m3 = candidates.iter().map(|r| r.m3).max().unwrap_or(0);

    let mut shared = Trainer::new(train, &settings.rmtgb_config(Rounds { m1: 0, m2: 0, m3: 0 }))?;
    if max_m3 > 0 {
        shared.require_task_sizes()?;
    }
    let mut done1 = 0;
    for &m1 in &m1s {
        shared.run_shared(m1 - done1, None);
        done1 = m1;
        let mut gated = shared.clone();
        let mut done2 = 0;
        for &m2 in &m2s {
            gated.run_gated(m2 - done2, None);
            done2 = m2;
            let wanted: Vec<usize> = (0..candidates.len())
                .filter(|&c| candidates[c].m1 == m1 && candidates[c].m2 == m2)
                .collect();
            if wanted.is_empty() {
                continue;
            }
            let mut tasks_trainer = gated.clone();
            tasks_trainer.run_tasks(max_m3, None);
            let model = tasks_trainer.into_model();
            for c in wanted {
                out[c] = score(model.with_task_rounds(candidates[c].m3).predict(&x, tasks)?)?;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: Rounds,
    pub best_score: f64,
    /// Mean cross-validation score of every candidate, in grid order.
    pub scores: Vec<(Rounds, f64)>,
}

/// Exhaustive `k`-fold grid search; the best candidate maximizes the mean
/// fold score, ties going to the earliest candidate.
pub fn grid_search_cv(
    family: ModelFamily,
    grid: &ModelGrid,
    train: &MultiTaskDataset,
    fold_of: &[usize],
    settings: &FitSettings,
    scorer: Scorer,
) -> Result<GridSearchResult> {
    grid.validate(family)?;
    let candidates = grid.candidates();
    let folds = fold_of.iter().copied().max().map_or(0, |m| m + 1);
    if fold_of.len() != train.len() || folds < 2 {
        return invalid("fold assignment must cover every row with at least 2 folds");
    }
    let mut totals = vec![0.0; candidates.len()];
    for f in 0..folds {
        let (tr, va): (Vec<usize>, Vec<usize>) = (0..train.len()).partition(|&i| fold_of[i] != f);
        let (tr, va) = (train.select(&tr)?, train.select(&va)?);
        let fold_scores = validation_scores(family, &candidates, &tr, &va, settings, scorer)?;
        for (t, s) in totals.iter_mut().zip(fold_scores) {
            *t += s;
        }
    }
    let scores: Vec<(Rounds, f64)> = candidates.into_iter().zip(totals.into_iter().map(|t| t / folds as f64)).collect();
    let mut best = 0;
    for (i, (_, s)) in scores.iter().enumerate() {
        if *s > scores[best].1 {
            best = i;
        }
    }
    Ok(GridSearchResult { best: scores[best].0, best_score: scores[best].1, scores })
}

/// Pearson correlation; zero when either vector has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Flips every gate vector negatively correlated with the first one to `1 − σ`.
pub fn align_theta(sigma_vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let Some(reference) = sigma_vectors.first() else {
        return invalid("no gate vectors to align");
    };
    if sigma_vectors.iter().any(|v| v.len() != reference.len()) {
        return invalid("gate vectors differ in length");
    }
    Ok(sigma_vectors
        .iter()
        .map(|v| {
            if pearson(reference, v) < 0.0 {
                v.iter().map(|s| 1.0 - s).collect()
            } else {
                v.clone()
            }
        })
        .collect())
}

/// Upper 5% critical values of the studentized range divided by √2, for
/// `k = 2..=10` compared models.
const NEMENYI_Q05: [f64; 9] = [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164];

pub fn nemenyi_q05(num_models: usize) -> Result<f64> {
    match num_models {
        2..=10 => Ok(NEMENYI_Q05[num_models - 2]),
        _ => invalid(format!("Nemenyi constants cover 2..=10 models, got {num_models}")),
    }
}

/// `q · √(k(k+1) / (6N))` at the 5% level.
pub fn critical_distance(num_models: usize, num_scenarios: usize) -> Result<f64> {
    if num_scenarios == 0 {
        return invalid("critical distance needs at least one scenario");
    }
    let k = num_models as f64;
    Ok(nemenyi_q05(num_models)? * (k * (k + 1.0) / (6.0 * num_scenarios as f64)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub avg_rank: Vec<f64>,
    pub critical_distance: f64,
    pub num_scenarios: usize,
    pub num_models: usize,
}

/// Fractional ranks (1 = best, ties averaged) of one row of scores.
pub fn fractional_ranks(scores: &[f64], higher_is_better: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let c = scores[a].total_cmp(&scores[b]);
        if higher_is_better { c.reverse() } else { c }
    });
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Average ranks of `k` models over `N` scenarios (rows of `table`) and the
/// Nemenyi critical distance. `higher_is_better` has one flag per scenario.
pub fn rank_models(table: &[Vec<f64>], higher_is_better: &[bool]) -> Result<RankSummary> {
    let Some(first) = table.first() else {
        return invalid("empty score table");
    };
    let k = first.len();
    if k < 2 {
        return invalid("ranking needs at least 2 models");
    }
    if table.iter().any(|r| r.len() != k) || higher_is_better.len() != table.len() {
        return invalid("ragged score table");
    }
    let mut avg = vec![0.0; k];
    for (row, &hib) in table.iter().zip(higher_is_better) {
        for (a, r) in avg.iter_mut().zip(fractional_ranks(row, hib)) {
            *a += r;
        }
    }
    let n = table.len();
    avg.iter_mut().for_each(|a| *a /= n as f64);
    Ok(RankSummary { avg_rank: avg, critical_distance: critical_distance(k, n)?, num_scenarios: n, num_models: k })
}

/// Batch-level values of one metric for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub kind: MetricKind,
    /// `per_task[t]` lists the task's value in every batch.
    pub per_task: BTreeMap<usize, Vec<f64>>,
    pub batch_means: Vec<f64>,
    pub overall_mean: f64,
    pub overall_std: f64,
}

impl MetricReport {
    /// Averages each batch over its tasks first, then across batches.
    pub fn from_batches(kind: MetricKind, per_batch_per_task: &[Vec<f64>]) -> Result<Self> {
        if per_batch_per_task.is_empty() || per_batch_per_task.iter().any(|b| b.is_empty()) {
            return invalid("metric report needs at least one non-empty batch");
        }
        let mut per_task: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut batch_means = Vec::with_capacity(per_batch_per_task.len());
        for batch in per_batch_per_task {
            for (t, &v) in batch.iter().enumerate() {
                per_task.entry(t).or_default().push(v);
            }
            batch_means.push(batch.iter().sum::<f64>() / batch.len() as f64);
        }
        let (mean, std) = mean_std(&batch_means);
        Ok(MetricReport { kind, per_task, batch_means, overall_mean: mean, overall_std: std })
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn metric_examples() {
        let y = [0.0, 1.0, 1.0];
        assert_eq!(metric(MetricKind::Accuracy, &y, &y).unwrap(), 1.0);
        assert_eq!(metric(MetricKind::Rmse, &y, &y).unwrap(), 0.0);
        assert_eq!(metric(MetricKind::Mae, &y, &y).unwrap(), 0.0);
        assert_eq!(metric(MetricKind::Mae, &[0.0, 2.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(metric(MetricKind::Rmse, &[0.0, 2.0], &[0.0, 0.0]).unwrap(), 2f64.sqrt());
        // majority-class predictor on a binary problem
        let y = [1.0, 1.0, 1.0, 0.0];
        assert_eq!(metric(MetricKind::MacroRecall, &y, &[1.0; 4]).unwrap(), 0.5);
        // class 2 is predicted but never present: skipped
        assert_eq!(metric(MetricKind::MacroRecall, &[0.0, 1.0], &[0.0, 2.0]).unwrap(), 0.5);
        assert!(metric(MetricKind::Accuracy, &[], &[]).is_err());
        assert!(metric(MetricKind::Accuracy, &[1.0], &[]).is_err());
    }

    fn ds(n_per_task: usize, tasks: usize, classes: usize) -> MultiTaskDataset {
        let n = n_per_task * tasks;
        let x = Array2::from_shape_fn((n, 2), |(i, j)| ((i * 31 + j * 17) % 23) as f64);
        let y = (0..n).map(|i| if classes > 1 { (i % classes) as f64 } else { (i % 7) as f64 * 0.3 }).collect();
        MultiTaskDataset::new(x, y, (0..n).map(|i| i % tasks).collect(), tasks, classes).unwrap()
    }

    #[test]
    fn split_properties() {
        let d = ds(10, 3, 1);
        let (tr, te) = split_train_test(&d, 0.8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(tr.len() + te.len(), d.len());
        assert_eq!(tr.task_counts(), vec![8, 8, 8]);
        let (tr2, _) = split_train_test(&d, 0.8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(tr, tr2);
        let tiny = ds(1, 2, 1);
        assert!(split_train_test(&tiny, 0.8, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn folds_cover_every_task() {
        let d = ds(12, 3, 2);
        let f = stratified_folds(&d, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for fold in 0..5 {
            let mut seen = [false; 3];
            for (i, &fi) in f.iter().enumerate() {
                if fi == fold {
                    seen[d.task_of()[i]] = true;
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
        assert!(stratified_folds(&ds(3, 2, 1), 5, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn default_grid_sizes() {
        assert_eq!(ModelFamily::Rmtgb.default_grid().candidates().len(), 60);
        assert_eq!(ModelFamily::Mtgb.default_grid().candidates().len(), 15);
        assert_eq!(ModelFamily::SingleTask.default_grid().candidates().len(), 4);
        for f in ModelFamily::ALL {
            f.default_grid().validate(f).unwrap();
            assert_eq!(f.name().parse::<ModelFamily>().unwrap(), f);
        }
        let bad = ModelGrid { m1: vec![1], m2: vec![0], m3: vec![0] };
        assert!(bad.validate(ModelFamily::SingleTask).is_err());
    }

    #[test]
    fn staged_scores_equal_separate_fits() {
        let d = ds(20, 3, 1);
        let va = ds(6, 3, 1);
        let settings = FitSettings { seed: 9, ..Default::default() };
        for family in ModelFamily::ALL {
            let grid = match family {
                ModelFamily::Rmtgb => ModelGrid { m1: vec![0, 2, 3], m2: vec![1, 4], m3: vec![0, 2, 5] },
                ModelFamily::Mtgb => ModelGrid { m1: vec![1, 3], m2: vec![0], m3: vec![0, 4] },
                ModelFamily::SingleTask => ModelGrid { m1: vec![0], m2: vec![0], m3: vec![2, 5] },
                _ => ModelGrid { m1: vec![1, 6], m2: vec![0], m3: vec![0] },
            };
            let cands = grid.candidates();
            let staged = validation_scores(family, &cands, &d, &va, &settings, Scorer::NegRmse).unwrap();
            for (c, s) in cands.iter().zip(staged) {
                let m = fit_family(family, &d, *c, &settings).unwrap();
                let direct = Scorer::NegRmse.score(LossKind::SquaredError, &va, &m.predict_dataset(&va).unwrap()).unwrap();
                assert_eq!(s, direct, "{family} {c:?}");
            }
        }
    }

    #[test]
    fn grid_search_singleton_and_ties() {
        let d = ds(10, 2, 1);
        let folds = stratified_folds(&d, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let grid = ModelGrid { m1: vec![4], m2: vec![0], m3: vec![0] };
        let r = grid_search_cv(ModelFamily::DataPooling, &grid, &d, &folds, &FitSettings::default(), Scorer::NegRmse).unwrap();
        assert_eq!(r.best, Rounds { m1: 4, m2: 0, m3: 0 });
        // two identical candidates tie: the first wins
        let grid = ModelGrid { m1: vec![0], m2: vec![0], m3: vec![3, 3] };
        let r = grid_search_cv(ModelFamily::SingleTask, &grid, &d, &folds, &FitSettings::default(), Scorer::NegRmse).unwrap();
        assert_eq!(r.scores[0].1, r.scores[1].1);
        assert_eq!(r.best, Rounds { m1: 0, m2: 0, m3: 3 });
    }

    #[test]
    fn align_examples() {
        let v = vec![0.1, 0.9, 0.4];
        let w: Vec<f64> = v.iter().map(|x| 1.0 - x).collect();
        let out = align_theta(&[v.clone(), w, v.clone()]).unwrap();
        for o in &out {
            for (a, b) in o.iter().zip(&v) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        let flat = vec![0.5, 0.5, 0.5];
        assert_eq!(align_theta(&[v.clone(), flat.clone()]).unwrap()[1], flat);
        assert!(align_theta(&[]).is_err());
        assert!(align_theta(&[v, vec![0.1]]).is_err());
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(fractional_ranks(&[0.9, 0.8, 0.9], true), vec![1.5, 3.0, 1.5]);
        assert_eq!(fractional_ranks(&[0.3, 0.1, 0.2], false), vec![3.0, 1.0, 2.0]);
        let s = rank_models(&[vec![1.0, 2.0], vec![2.0, 1.0]], &[true, true]).unwrap();
        assert_eq!(s.avg_rank, vec![1.5, 1.5]);
        assert!(rank_models(&[vec![1.0]], &[true]).is_err());
        assert!(rank_models(&[], &[]).is_err());
    }

    #[test]
    fn critical_distances() {
        assert!((critical_distance(5, 5).unwrap() - 2.728).abs() < 1e-3);
        assert!((critical_distance(5, 10).unwrap() - 1.929).abs() < 1e-3);
        assert!(critical_distance(11, 10).is_err());
        assert!(critical_distance(5, 11).unwrap() < critical_distance(5, 10).unwrap());
        assert!(critical_distance(4, 10).unwrap() < critical_distance(5, 10).unwrap());
    }

    #[test]
    fn report_aggregation_order() {
        let r = MetricReport::from_batches(MetricKind::Rmse, &[vec![1.0, 3.0], vec![2.0, 2.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(r.batch_means, vec![2.0, 2.0, 0.0]);
        assert!((r.overall_mean - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_task[&0], vec![1.0, 2.0, 0.0]);
    }
}

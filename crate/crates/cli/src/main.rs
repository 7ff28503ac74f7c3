use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rmtgb::experiment::batch_rng;
use rmtgb::eval::{fit_family, per_task_metric, point_predictions, FitSettings};
use rmtgb::io::{read_dataset_file, read_json, write_dataset_file, write_json};
use rmtgb::model::fit_rmtgb_observed;
use rmtgb::synth::{gen_multitask, SynthConfig, TaskKind};
use rmtgb::{
    loss_value, run_experiment, DataSource, ExperimentConfig, FittedModel, MetricKind, ModelFamily, ModelGrid,
    MultiTaskDataset, Rounds,
};

#[derive(Parser)]
#[command(name = "rmtgb", version, about = "Robust multi-task gradient boosting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one synthetic train/test batch as CSV files.
    Synth(SynthArgs),
    /// Fit one model on a dataset CSV and write it as JSON.
    Train(TrainArgs),
    /// Score a dataset CSV with a saved model.
    Predict(PredictArgs),
    /// Run the repeated-batch benchmark and write a report directory.
    Benchmark(BenchmarkArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    #[value(name = "paper-synth-reg")]
    SynthReg,
    #[value(name = "paper-synth-clf")]
    SynthClf,
}

#[derive(Args)]
struct SynthOverrides {
    /// Override the random-feature length scale.
    #[arg(long)]
    length_scale: Option<f64>,
    /// Override the random-feature amplitude.
    #[arg(long)]
    amplitude: Option<f64>,
    /// Synthetic generator config as JSON; replaces the preset.
    #[arg(long, value_name = "FILE.json")]
    synth_config: Option<PathBuf>,
}

impl SynthOverrides {
    fn config(&self, preset: Preset) -> Result<SynthConfig> {
        let mut cfg = match &self.synth_config {
            Some(path) => read_json(path).with_context(|| format!("reading {}", path.display()))?,
            None => SynthConfig::benchmark_preset(match preset {
                Preset::SynthReg => TaskKind::Regression,
                Preset::SynthClf => TaskKind::Classification,
            }),
        };
        if let Some(v) = self.length_scale {
            cfg.length_scale = v;
        }
        if let Some(v) = self.amplitude {
            cfg.amplitude = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "paper-synth-reg")]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: SynthOverrides,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset CSV with columns task,y,x0,...
    #[arg(long)]
    data: PathBuf,
    /// Number of classes; 1 means regression.
    #[arg(long, default_value_t = 1)]
    classes: usize,
}

impl DataArgs {
    fn load(&self) -> Result<MultiTaskDataset> {
        read_dataset_file(&self.data, self.classes).with_context(|| format!("reading {}", self.data.display()))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_model)]
    model: ModelFamily,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    m1: usize,
    #[arg(long, default_value_t = 0)]
    m2: usize,
    #[arg(long, default_value_t = 0)]
    m3: usize,
    #[arg(long, default_value_t = 1.0)]
    shrinkage: f64,
    /// Step size of the gate parameters; defaults to the shrinkage.
    #[arg(long)]
    theta_lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Model JSON written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Output CSV of per-sample predictions.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long, value_enum, conflicts_with = "data")]
    preset: Option<Preset>,
    /// Benchmark a dataset CSV instead of a synthetic preset.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    batches: usize,
    /// Comma-separated subset of rmtgb,mtgb,st-gb,dp-gb,taf-gb.
    #[arg(long, value_delimiter = ',', value_parser = parse_model)]
    models: Option<Vec<ModelFamily>>,
    /// JSON object mapping model names to {"m1": [...], "m2": [...], "m3": [...]}.
    #[arg(long, value_name = "FILE.json")]
    grid: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 1.0)]
    shrinkage: f64,
    /// Worker threads for batches; 0 uses every core.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: SynthOverrides,
}

fn parse_model(s: &str) -> Result<ModelFamily, String> {
    s.parse().map_err(|e: rmtgb::Error| e.to_string())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig { seed: args.seed, ..args.overrides.config(args.preset)? };
    let batch = gen_multitask(&cfg, &mut batch_rng(args.seed, 0))?;
    fs::create_dir_all(&args.out)?;
    write_dataset_file(&batch.train, &args.out.join("train.csv"))?;
    write_dataset_file(&batch.test, &args.out.join("test.csv"))?;
    let manifest = serde_json::json!({
        "seed": args.seed,
        "config": cfg,
        "num_classes": batch.train.num_classes(),
        "outlier_task_ids": batch.outlier_task_ids,
        "train_rows": batch.train.len(),
        "test_rows": batch.test.len(),
    });
    write_json(&manifest, &args.out.join("manifest.json"))?;
    println!("wrote train={} test={} outliers={:?}", batch.train.len(), batch.test.len(), batch.outlier_task_ids);
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let ds = args.data.load()?;
    let rounds = Rounds { m1: args.m1, m2: args.m2, m3: args.m3 };
    let settings = FitSettings {
        shrinkage: args.shrinkage,
        theta_learning_rate: args.theta_lr,
        seed: args.seed,
        ..FitSettings::default()
    };
    let model = match args.model {
        ModelFamily::Rmtgb | ModelFamily::Mtgb => {
            if args.model == ModelFamily::Mtgb && args.m2 != 0 {
                bail!("mtgb has no outlier block; use --m2 0");
            }
            let mut log = |block: usize, round: usize, loss: f64| println!("block={block} round={round} loss={loss}");
            let m = fit_rmtgb_observed(&ds, &settings.rmtgb_config(rounds), Some(&mut log))?;
            if args.model == ModelFamily::Rmtgb {
                FittedModel::Rmtgb(m)
            } else {
                FittedModel::Mtgb(m)
            }
        }
        family => {
            let fitted = fit_family(family, &ds, rounds, &settings)?;
            let FittedModel::Baseline(b) = &fitted else { unreachable!("baseline family") };
            let total = match family {
                ModelFamily::SingleTask => args.m3,
                _ => args.m1,
            };
            for r in 1..=total {
                let scores = b.truncated(r).predict(&ds.features().view(), ds.task_of())?;
                println!("round={r} loss={}", loss_value(ds.loss_kind(), ds.targets(), &scores.view())?);
            }
            fitted
        }
    };
    write_json(&model, &args.out)?;
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model: FittedModel = read_json(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let ds = args.data.load()?;
    let scores = model.predict_dataset(&ds)?;
    let pred = point_predictions(ds.loss_kind(), &scores);
    let mut s = String::from("task,prediction\n");
    for (t, p) in ds.task_of().iter().zip(&pred) {
        s.push_str(&format!("{t},{p}\n"));
    }
    fs::write(&args.out, s)?;
    for kind in MetricKind::for_loss(ds.loss_kind()) {
        let per_task = per_task_metric(kind, &ds, &pred)?;
        let mean = per_task.iter().sum::<f64>() / per_task.len() as f64;
        println!("metric={} value={mean}", kind.name());
    }
    Ok(())
}

fn read_grids(path: &Path) -> Result<BTreeMap<ModelFamily, ModelGrid>> {
    let raw: BTreeMap<String, ModelGrid> = read_json(path).with_context(|| format!("reading {}", path.display()))?;
    raw.into_iter().map(|(k, v)| Ok((parse_model(&k).map_err(anyhow::Error::msg)?, v))).collect()
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<()> {
    let source = match (&args.data, args.preset) {
        (Some(path), _) => DataSource::Dataset {
            name: path.display().to_string(),
            data: Some(read_dataset_file(path, args.classes).with_context(|| format!("reading {}", path.display()))?),
            split_ratio: 0.8,
        },
        (None, preset) => {
            DataSource::Synthetic { config: args.overrides.config(preset.unwrap_or(Preset::SynthReg))? }
        }
    };
    let mut cfg = ExperimentConfig::new(source, args.batches, args.seed);
    if let Some(models) = &args.models {
        cfg.models = models.clone();
    }
    if let Some(path) = &args.grid {
        cfg.grids.extend(read_grids(path)?);
    }
    cfg.folds = args.folds;
    cfg.settings.shrinkage = args.shrinkage;
    cfg.jobs = args.jobs;
    let report = run_experiment(&cfg)?;
    report.write(&args.out)?;
    for row in report.summary() {
        println!(
            "model={} metric={} train_mean={} test_mean={} test_std={}",
            row.model,
            row.metric.name(),
            row.train_mean,
            row.test_mean,
            row.test_std
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! The experiment verbs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use mtgp::data::{
    generate_synthetic, load_series, load_series_files, mae, split, write_predictions, write_series,
    PredictionRow, SplitStrategy, SyntheticData, TaskedDataset,
};
use mtgp::gp::{Noise, TrainedModel};
use mtgp::kernel::ComponentParams;
use mtgp::multitask::{KernelFamily, Points};
use mtgp::spectral::{init_hyperparams, GmmComponent, KernelLayout};
use mtgp::trainer::{optimize, RestartSummary, StopReason, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig, SplitRule};
use crate::error::{io_err, json_err, CliError, CliResult};
use crate::model::{LoadedModel, ModelFile, Normalization};
use crate::output::{with_run_dir, RunDir};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Dataset with splits applied, in original and in fitting units.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub raw: TaskedDataset,
    pub fitted: TaskedDataset,
    pub normalization: Vec<Normalization>,
    pub splits: Vec<SplitStrategy>,
    pub synthetic: Option<SyntheticData>,
    pub dropped: usize,
}

pub fn prepare_data(config: &ExperimentConfig) -> CliResult<PreparedData> {
    prepare(config, false)
}

fn prepare(config: &ExperimentConfig, use_all: bool) -> CliResult<PreparedData> {
    config.validate()?;
    let (mut dataset, synthetic, dropped) = match &config.data {
        DataSource::Synthetic { n, interval, q } => {
            let syn = generate_synthetic(config.seed, *n, *interval, *q)?;
            (syn.dataset.clone(), Some(syn), 0)
        }
        DataSource::Csv { paths, schema } => {
            let loaded = if paths.len() == 1 {
                load_series(&paths[0], schema)?
            } else {
                let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
                load_series_files(&refs, schema)?
            };
            (loaded.dataset, None, loaded.dropped)
        }
    };
    let mut splits = Vec::with_capacity(dataset.num_tasks());
    for t in 0..dataset.num_tasks() {
        let s = if use_all {
            SplitStrategy::All
        } else {
            config.split_rule(t).resolve(config.seed, t)
        };
        dataset = split(&dataset, t, s)?;
        splits.push(s);
    }
    let normalization: Vec<Normalization> = dataset
        .tasks()
        .iter()
        .map(|t| {
            if config.standardize {
                let train: Vec<f64> = t.train_indices().iter().map(|&i| t.values[i]).collect();
                Normalization::fit(&train)
            } else {
                Normalization::IDENTITY
            }
        })
        .collect();
    let fitted = dataset.map_values(|t, v| normalization[t].forward(v));
    Ok(PreparedData {
        raw: dataset,
        fitted,
        normalization,
        splits,
        synthetic,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedSeeds {
    pub experiment: u64,
    pub synthetic: Option<u64>,
    pub sample: Option<u64>,
    pub init: u64,
    pub train: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSummary {
    pub n: usize,
    pub interval: (f64, f64),
    pub q: usize,
    pub components: Vec<ComponentParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSummary {
    pub tasks: Vec<String>,
    pub points: Vec<usize>,
    pub train_points: Vec<usize>,
    pub dropped: usize,
    pub normalization: Vec<Normalization>,
}

/// Everything needed to rerun an invocation: the resolved config, seeds and
/// the tool version.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub seeds: ResolvedSeeds,
    pub q: usize,
    pub splits: Vec<SplitStrategy>,
    pub synthetic: Option<SyntheticSummary>,
    pub data: DataSummary,
    pub outputs: Vec<String>,
}

fn train_seed(config: &ExperimentConfig) -> u64 {
    config.seed.wrapping_add(config.train.seed)
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig, data: &PreparedData) -> Self {
        let mut config = config.clone();
        // pin the split seeds so the config alone reproduces the run
        config.splits = data
            .splits
            .iter()
            .map(|s| match *s {
                SplitStrategy::RandomHalf { seed } => SplitRule::RandomHalf { seed: Some(seed) },
                SplitStrategy::FirstHalf => SplitRule::FirstHalf,
                SplitStrategy::LastHalf => SplitRule::LastHalf,
                SplitStrategy::All => SplitRule::All,
            })
            .collect();
        let synthetic = match (&config.data, &data.synthetic) {
            (DataSource::Synthetic { n, interval, q }, Some(syn)) => Some(SyntheticSummary {
                n: *n,
                interval: *interval,
                q: *q,
                components: syn.signal_components.clone(),
            }),
            _ => None,
        };
        Self {
            tool: "mtgp".into(),
            version: VERSION.into(),
            command: command.into(),
            seeds: ResolvedSeeds {
                experiment: config.seed,
                synthetic: data.synthetic.as_ref().map(|_| config.seed),
                sample: data.synthetic.as_ref().map(|s| s.sample_seed),
                init: config.seed,
                train: train_seed(&config),
            },
            q: config.q,
            splits: data.splits.clone(),
            synthetic,
            data: DataSummary {
                tasks: data.raw.labels(),
                points: data.raw.tasks().iter().map(|t| t.len()).collect(),
                train_points: data.raw.tasks().iter().map(|t| t.train_indices().len()).collect(),
                dropped: data.dropped,
                normalization: data.normalization.clone(),
            },
            outputs: Vec::new(),
            config,
        }
    }

    fn write(mut self, dir: &mut RunDir) -> CliResult<serde_json::Value> {
        let path = dir.file("manifest.json");
        self.outputs = dir.names();
        let value = serde_json::to_value(&self).map_err(json_err(&path))?;
        write_json(&path, &value)?;
        Ok(value)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMetrics {
    /// Test MAE per task label, in original units; null for tasks without test points.
    pub mae: BTreeMap<String, Option<f64>>,
    pub nlml: f64,
    pub initial_nlml: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub best_restart: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub seed: u64,
    pub q: usize,
    pub tasks: Vec<String>,
    pub kernels: BTreeMap<String, KernelMetrics>,
}

/// A trained kernel with its predictions at every dataset point.
#[derive(Debug, Clone)]
pub struct KernelRun {
    pub family: KernelFamily,
    pub model: TrainedModel,
    pub metrics: KernelMetrics,
    pub predictions: Vec<PredictionRow>,
    pub restarts: Vec<RestartSummary>,
}

/// Initializes, trains and evaluates one kernel family on prepared data.
pub fn run_kernel(data: &PreparedData, family: KernelFamily, config: &ExperimentConfig) -> CliResult<KernelRun> {
    let started = Instant::now();
    let m = data.fitted.num_tasks();
    let layout = KernelLayout {
        family,
        q: config.q,
        m,
        p: 1,
    };
    let init = init_hyperparams(&data.fitted, layout, config.seed, &config.init)?;
    let noise_floor = config.train.noise_floor;
    let noise = Noise::uniform(
        config.noise_mode,
        init.noise_variance.max(10.0 * noise_floor),
        m,
    );
    let train_cfg = TrainConfig {
        seed: train_seed(config),
        ..config.train.clone()
    };
    let train = data.fitted.training();
    let outcome = optimize(&init.spec, &noise, &train.points, &train.y, &train_cfg)?;
    let model = TrainedModel::fit(outcome.spec.clone(), outcome.noise.clone(), train.points, train.y)?;

    let all = data.fitted.all();
    let pred = model.predict_many(&all.points)?;
    let labels = data.raw.labels();
    let mut predictions = Vec::with_capacity(pred.len());
    let mut errors: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); m];
    for (p, &(t, i)) in pred.iter().zip(&all.origin) {
        let series = &data.raw.tasks()[t];
        let norm = data.normalization[t];
        let mean = norm.inverse(p.mean);
        let truth = series.values[i];
        if !series.train[i] {
            errors[t].0.push(mean);
            errors[t].1.push(truth);
        }
        predictions.push(PredictionRow {
            task: labels[t].clone(),
            x: series.inputs[i],
            y_true: Some(truth),
            y_mean: mean,
            y_std: p.std() * norm.scale,
            is_train: series.train[i],
        });
    }
    let mut maes = BTreeMap::new();
    for (t, (p, a)) in errors.iter().enumerate() {
        let v = if p.is_empty() { None } else { Some(mae(p, a)?) };
        maes.insert(labels[t].clone(), v);
    }
    let initial_nlml = outcome
        .restarts
        .first()
        .and_then(|r| r.initial_nlml)
        .unwrap_or(outcome.nlml);
    info!(
        "{family}: nlml {:.4} after {} iterations ({:?}) in {:.1}s",
        outcome.nlml,
        outcome.trace.len(),
        outcome.stop,
        started.elapsed().as_secs_f64()
    );
    Ok(KernelRun {
        family,
        model,
        metrics: KernelMetrics {
            mae: maes,
            nlml: outcome.nlml,
            initial_nlml,
            iterations: outcome.trace.len(),
            stop: outcome.stop,
            best_restart: outcome.best_restart,
        },
        predictions,
        restarts: outcome.restarts,
    })
}

/// Candidate first, then baselines, without repeats.
pub fn families(config: &ExperimentConfig) -> Vec<KernelFamily> {
    let mut out = vec![config.kernel];
    for &b in &config.baselines {
        if !out.contains(&b) {
            out.push(b);
        }
    }
    out
}

/// Trains the candidate and every baseline on one shared dataset and split,
/// writing the dataset, per-kernel predictions, metrics and a manifest.
pub fn cmd_compare(config: &ExperimentConfig) -> CliResult<Metrics> {
    run_comparison("compare", config)
}

/// The comparison protocol on a generated signal/integral/derivative dataset.
pub fn cmd_synth(config: &ExperimentConfig) -> CliResult<Metrics> {
    if !matches!(config.data, DataSource::Synthetic { .. }) {
        return Err(CliError::Config("synth needs a synthetic data source".into()));
    }
    run_comparison("synth", config)
}

fn run_comparison(command: &str, config: &ExperimentConfig) -> CliResult<Metrics> {
    let data = prepare_data(config)?;
    with_run_dir(&config.output_dir, |dir| {
        write_series(&data.raw, &dir.file("dataset.csv"))?;
        let mut metrics = Metrics {
            seed: config.seed,
            q: config.q,
            tasks: data.raw.labels(),
            kernels: BTreeMap::new(),
        };
        for family in families(config) {
            let run = run_kernel(&data, family, config)?;
            write_predictions(&run.predictions, &dir.file(&format!("predictions_{}.csv", family.name())))?;
            metrics.kernels.insert(family.name().to_string(), run.metrics);
        }
        write_json(&dir.file("metrics.json"), &metrics)?;
        Manifest::new(command, config, &data).write(dir)?;
        Ok(metrics)
    })
}

#[derive(Debug, Clone)]
pub struct FitSummary {
    pub model_path: PathBuf,
    pub nlml: f64,
    pub metrics: KernelMetrics,
}

/// Trains the candidate kernel and saves it as `model.json`.
pub fn cmd_fit(config: &ExperimentConfig) -> CliResult<FitSummary> {
    let data = prepare_data(config)?;
    with_run_dir(&config.output_dir, |dir| {
        let run = run_kernel(&data, config.kernel, config)?;
        write_predictions(&run.predictions, &dir.file("predictions.csv"))?;
        let model_path = dir.file("model.json");
        let mut manifest = Manifest::new("fit", config, &data);
        manifest.outputs = vec!["predictions.csv".into(), "model.json".into(), "manifest.json".into()];
        let manifest_value = serde_json::to_value(&manifest).map_err(json_err(&model_path))?;
        let file = ModelFile::new(&run.model, data.raw.labels(), data.normalization.clone(), manifest_value);
        file.save(&model_path)?;
        manifest.write(dir)?;
        Ok(FitSummary {
            model_path,
            nlml: run.model.nlml(),
            metrics: run.metrics,
        })
    })
}

#[derive(Debug, Deserialize)]
struct InputRow {
    task: String,
    x: f64,
    #[serde(default)]
    y: Option<f64>,
}

#[derive(Debug, Serialize)]
struct PredictManifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    model: &'a Path,
    inputs: &'a Path,
    rows: usize,
    outputs: Vec<String>,
}

/// Reads `task,x[,y]` rows and writes predictions in original units.
/// Tasks are given by label or by index.
pub fn cmd_predict(model_path: &Path, inputs: &Path, out: &Path) -> CliResult<Vec<PredictionRow>> {
    let loaded = LoadedModel::load(model_path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(inputs)
        .map_err(|e| CliError::Config(format!("{}: {e}", inputs.display())))?;
    let mut rows = Vec::new();
    for (line, rec) in reader.deserialize::<InputRow>().enumerate() {
        let rec = rec.map_err(|e| CliError::Config(format!("{} line {}: {e}", inputs.display(), line + 2)))?;
        rows.push(rec);
    }
    let tasks = rows
        .iter()
        .map(|r| loaded.task_index(&r.task))
        .collect::<CliResult<Vec<_>>>()?;
    let points = Points::scalar(rows.iter().map(|r| r.x).collect(), tasks.clone())?;
    let preds = loaded.predict(&points)?;
    let training = &loaded.file.training;
    let out_rows: Vec<PredictionRow> = rows
        .iter()
        .zip(&tasks)
        .zip(&preds)
        .map(|((r, &t), p)| PredictionRow {
            task: loaded.file.tasks[t].clone(),
            x: r.x,
            y_true: r.y,
            y_mean: p.mean,
            y_std: p.std,
            is_train: training.task.iter().zip(&training.x).any(|(&tt, &xx)| tt == t && xx == r.x),
        })
        .collect();
    with_run_dir(out, |dir| {
        write_predictions(&out_rows, &dir.file("predictions.csv"))?;
        let path = dir.file("manifest.json");
        let manifest = PredictManifest {
            tool: "mtgp",
            version: VERSION,
            command: "predict",
            model: model_path,
            inputs,
            rows: out_rows.len(),
            outputs: dir.names(),
        };
        write_json(&path, &manifest)?;
        Ok(())
    })?;
    Ok(out_rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmReport {
    pub kernel: KernelFamily,
    pub q: usize,
    pub components: Vec<GmmComponent>,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub seed: u64,
    pub bin_width: f64,
    pub interpolated_fraction: f64,
    pub noise_variance: f64,
}

/// Writes the spectral density the initializer sees and the mixture fitted to it.
/// Every point counts as training data here.
pub fn cmd_inspect_init(config: &ExperimentConfig) -> CliResult<GmmReport> {
    let data = prepare(config, true)?;
    let layout = KernelLayout {
        family: config.kernel,
        q: config.q,
        m: data.fitted.num_tasks(),
        p: 1,
    };
    let init = init_hyperparams(&data.fitted, layout, config.seed, &config.init)?;
    with_run_dir(&config.output_dir, |dir| {
        let path = dir.file("periodogram.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let write = |w: &mut csv::Writer<fs::File>, rec: [String; 2]| {
            w.write_record(&rec)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        };
        write(&mut w, ["frequency".into(), "power".into()])?;
        for (f, p) in init.density.frequencies.iter().zip(&init.density.power) {
            write(&mut w, [format!("{f}"), format!("{p}")])?;
        }
        w.flush().map_err(io_err(&path))?;
        let report = GmmReport {
            kernel: config.kernel,
            q: config.q,
            components: init.gmm.components.clone(),
            iterations: init.gmm.iterations,
            log_likelihood: init.gmm.log_likelihood.last().copied().unwrap_or(f64::NAN),
            seed: init.gmm.seed,
            bin_width: init.density.bin_width(),
            interpolated_fraction: init.interpolated_fraction,
            noise_variance: init.noise_variance,
        };
        write_json(&dir.file("gmm.json"), &report)?;
        Manifest::new("inspect-init", config, &data).write(dir)?;
        Ok(report)
    })
}

//! Datasets, synthetic generation, numerical calculus, splits and metrics.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeDelta};
use log::info;
use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::sample_prior;
use crate::kernel::ComponentParams;
use crate::multitask::{CoregionalizationSet, KernelParams, KernelSpec, Points};

const ISO_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// One task's series with its train/test mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSeries {
    pub label: String,
    pub inputs: Vec<f64>,
    pub values: Vec<f64>,
    pub train: Vec<bool>,
}

impl TaskSeries {
    /// Series with every point marked as training data.
    pub fn new(label: impl Into<String>, inputs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let train = vec![true; inputs.len()];
        let s = Self {
            label: label.into(),
            inputs,
            values,
            train,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.values.len() {
            return Err(Error::LengthMismatch {
                left: self.inputs.len(),
                right: self.values.len(),
            });
        }
        if self.train.len() != self.inputs.len() {
            return Err(Error::LengthMismatch {
                left: self.inputs.len(),
                right: self.train.len(),
            });
        }
        if self.inputs.iter().chain(&self.values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "task '{}' contains non-finite values",
                self.label
            )));
        }
        if self.inputs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Precondition(format!(
                "inputs of task '{}' are not strictly increasing",
                self.label
            )));
        }
        Ok(())
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.train[i]).collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.train[i]).collect()
    }
}

/// Observations for `M` tasks on a one-dimensional input axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskedDataset {
    tasks: Vec<TaskSeries>,
    /// Calendar time of input 0.0 when inputs came from ISO timestamps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time_origin: Option<NaiveDateTime>,
}

/// Points drawn from a dataset together with where they came from.
#[derive(Debug, Clone)]
pub struct Subset {
    pub points: Points,
    pub y: Vec<f64>,
    /// `(task, position within task)` for every point.
    pub origin: Vec<(usize, usize)>,
}

impl TaskedDataset {
    pub fn new(tasks: Vec<TaskSeries>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::EmptyInput("dataset has no tasks".into()));
        }
        for t in &tasks {
            t.validate()?;
        }
        Ok(Self {
            tasks,
            time_origin: None,
        })
    }

    pub fn with_time_origin(mut self, origin: Option<NaiveDateTime>) -> Self {
        self.time_origin = origin;
        self
    }

    pub fn time_origin(&self) -> Option<NaiveDateTime> {
        self.time_origin
    }

    pub fn tasks(&self) -> &[TaskSeries] {
        &self.tasks
    }

    pub fn task(&self, i: usize) -> Result<&TaskSeries> {
        self.tasks.get(i).ok_or(Error::TaskOutOfRange {
            index: i,
            tasks: self.tasks.len(),
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn labels(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.label.clone()).collect()
    }

    pub fn total_len(&self) -> usize {
        self.tasks.iter().map(|t| t.len()).sum()
    }

    fn subset(&self, keep: impl Fn(&TaskSeries, usize) -> bool) -> Subset {
        let mut xs = Vec::new();
        let mut ids = Vec::new();
        let mut y = Vec::new();
        let mut origin = Vec::new();
        for (ti, t) in self.tasks.iter().enumerate() {
            for i in 0..t.len() {
                if keep(t, i) {
                    xs.push(t.inputs[i]);
                    ids.push(ti);
                    y.push(t.values[i]);
                    origin.push((ti, i));
                }
            }
        }
        Subset {
            points: Points::scalar(xs, ids).expect("dataset inputs are finite"),
            y,
            origin,
        }
    }

    /// Training points in task-block order.
    pub fn training(&self) -> Subset {
        self.subset(|t, i| t.train[i])
    }

    pub fn testing(&self) -> Subset {
        self.subset(|t, i| !t.train[i])
    }

    pub fn all(&self) -> Subset {
        self.subset(|_, _| true)
    }

    /// Replaces the values of every task through `f(task, value)`.
    pub fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> TaskedDataset {
        let mut out = self.clone();
        for (ti, t) in out.tasks.iter_mut().enumerate() {
            for v in &mut t.values {
                *v = f(ti, *v);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitStrategy {
    RandomHalf { seed: u64 },
    FirstHalf,
    LastHalf,
    /// Every point is training data.
    All,
}

/// Marks `floor(N/2)` points of `task` as training data according to `strategy`.
pub fn split(dataset: &TaskedDataset, task: usize, strategy: SplitStrategy) -> Result<TaskedDataset> {
    let n = dataset.task(task)?.len();
    let half = n / 2;
    let mut train = vec![false; n];
    match strategy {
        SplitStrategy::FirstHalf => train[..half].iter_mut().for_each(|t| *t = true),
        SplitStrategy::LastHalf => train[n - half..].iter_mut().for_each(|t| *t = true),
        SplitStrategy::RandomHalf { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in sample(&mut rng, n, half) {
                train[i] = true;
            }
        }
        SplitStrategy::All => train.iter_mut().for_each(|t| *t = true),
    }
    let mut out = dataset.clone();
    out.tasks[task].train = train;
    Ok(out)
}

fn check_xy(y: &[f64], x: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: x.len(),
        });
    }
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("x must be strictly increasing".into()));
    }
    Ok(())
}

/// Cumulative trapezoid integral starting at zero.
pub fn cumulative_integral(y: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_xy(y, x)?;
    let mut out = Vec::with_capacity(y.len());
    let mut acc = 0.0;
    for i in 0..y.len() {
        if i > 0 {
            acc += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
        }
        out.push(acc);
    }
    Ok(out)
}

/// Second-order finite-difference derivative: three-point central stencil at
/// interior points and three-point one-sided stencils at the ends.
pub fn derivative(y: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_xy(y, x)?;
    let n = y.len();
    match n {
        0 => return Ok(Vec::new()),
        1 => return Ok(vec![0.0]),
        2 => {
            let d = (y[1] - y[0]) / (x[1] - x[0]);
            return Ok(vec![d, d]);
        }
        _ => {}
    }
    // derivative at x[at] of the quadratic through points (i, i+1, i+2)
    let lagrange = |i: usize, at: usize| -> f64 {
        let (x0, x1, x2) = (x[i], x[i + 1], x[i + 2]);
        let t = x[at];
        y[i] * ((t - x1) + (t - x2)) / ((x0 - x1) * (x0 - x2))
            + y[i + 1] * ((t - x0) + (t - x2)) / ((x1 - x0) * (x1 - x2))
            + y[i + 2] * ((t - x0) + (t - x1)) / ((x2 - x0) * (x2 - x1))
    };
    let mut out = Vec::with_capacity(n);
    out.push(lagrange(0, 0));
    for i in 1..n - 1 {
        let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
        if (h0 - h1).abs() <= 1e-12 * h0.max(h1) {
            out.push((y[i + 1] - y[i - 1]) / (h0 + h1));
        } else {
            out.push(lagrange(i - 1, i));
        }
    }
    out.push(lagrange(n - 3, n - 1));
    Ok(out)
}

/// Mean absolute error.
pub fn mae(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: actual.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("no values to compare".into()));
    }
    Ok(pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / pred.len() as f64)
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n).map(|i| lo + step * i as f64).collect()
        }
    }
}

/// A generated signal/integral/derivative dataset and the SM parameters
/// behind the signal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticData {
    pub dataset: TaskedDataset,
    pub signal_components: Vec<ComponentParams>,
    pub sample_seed: u64,
}

/// Draws a signal from a zero-mean GP with a `q`-component SM kernel on a
/// uniform grid, then adds its cumulative integral and derivative as tasks.
pub fn generate_synthetic(seed: u64, n: usize, interval: (f64, f64), q: usize) -> Result<SyntheticData> {
    if n < 3 {
        return Err(Error::Precondition("synthetic series needs at least 3 points".into()));
    }
    if q == 0 {
        return Err(Error::InvalidParameter("synthetic signal needs Q >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut components = Vec::with_capacity(q);
    for _ in 0..q {
        let w = rng.random_range(0.5..1.5);
        let mu = rng.random_range(0.05..0.4);
        let var = rng.random_range(0.001..0.01);
        components.push(ComponentParams::spectral(w, vec![mu], vec![var])?);
    }
    let sample_seed = rng.next_u64();
    let spec = KernelSpec::new(
        q,
        1,
        1,
        KernelParams::SmLmc {
            coreg: CoregionalizationSet::new(1, vec![vec![1.0]; q])?,
            components: components.clone(),
        },
    )?;
    let x = linspace(interval.0, interval.1, n);
    let points = Points::scalar(x.clone(), vec![0; n])?;
    let signal = sample_prior(&spec, &points, sample_seed)?;
    let integral = cumulative_integral(&signal, &x)?;
    let deriv = derivative(&signal, &x)?;
    let dataset = TaskedDataset::new(vec![
        TaskSeries::new("signal", x.clone(), signal)?,
        TaskSeries::new("integral", x.clone(), integral)?,
        TaskSeries::new("derivative", x, deriv)?,
    ])?;
    Ok(SyntheticData {
        dataset,
        signal_components: components,
        sample_seed,
    })
}

/// Column names of a series CSV file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesSchema {
    pub timestamp: String,
    pub value: String,
    /// When absent, or missing from the header, the whole file is one task.
    pub task: Option<String>,
}

impl Default for SeriesSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            value: "value".into(),
            task: Some("task".into()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedSeries {
    pub dataset: TaskedDataset,
    /// Rows dropped because the value was missing.
    pub dropped: usize,
}

enum Stamp {
    Numeric(f64),
    Calendar(NaiveDateTime),
}

fn parse_timestamp(raw: &str) -> Option<Stamp> {
    let s = raw.trim();
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(Stamp::Numeric(v));
    }
    for fmt in [ISO_FORMAT, "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(Stamp::Calendar(t));
        }
    }
    DateTime::parse_from_rfc3339(s)
        .ok()
        .map(|t| Stamp::Calendar(t.naive_utc()))
}

fn is_missing(raw: &str) -> bool {
    let s = raw.trim();
    s.is_empty() || s.eq_ignore_ascii_case("nan")
}

/// Reads `timestamp,value[,task]` rows. ISO timestamps become hours since the
/// earliest sample; numeric timestamps are taken as hours unchanged.
pub fn load_series(path: &Path, schema: &SeriesSchema) -> Result<LoadedSeries> {
    let default_label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "task".into());
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h.trim() == name).ok_or(Error::Parse {
            line: 1,
            message: format!("missing column '{name}'"),
        })
    };
    let ts_col = column(&schema.timestamp)?;
    let val_col = column(&schema.value)?;
    let task_col = schema
        .task
        .as_deref()
        .and_then(|t| headers.iter().position(|h| h.trim() == t));

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(usize, Stamp, f64)>> = HashMap::new();
    let mut dropped = 0;
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        let field = |c: usize| record.get(c).unwrap_or("");
        if is_missing(field(val_col)) {
            dropped += 1;
            continue;
        }
        let value: f64 = field(val_col).trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("unparseable value '{}'", field(val_col)),
        })?;
        let stamp = parse_timestamp(field(ts_col)).ok_or_else(|| Error::Parse {
            line,
            message: format!("unparseable timestamp '{}'", field(ts_col)),
        })?;
        let label = match task_col {
            Some(c) => field(c).trim().to_string(),
            None => default_label.clone(),
        };
        if !rows.contains_key(&label) {
            order.push(label.clone());
        }
        rows.entry(label).or_default().push((line, stamp, value));
    }
    if order.is_empty() {
        return Err(Error::EmptyInput(format!("no usable rows in {}", path.display())));
    }

    let calendar = rows.values().flatten().any(|r| matches!(r.1, Stamp::Calendar(_)));
    if calendar && rows.values().flatten().any(|r| matches!(r.1, Stamp::Numeric(_))) {
        return Err(Error::Parse {
            line: 0,
            message: "file mixes numeric and calendar timestamps".into(),
        });
    }
    let origin = rows
        .values()
        .flatten()
        .filter_map(|r| match r.1 {
            Stamp::Calendar(t) => Some(t),
            Stamp::Numeric(_) => None,
        })
        .min();

    let mut tasks = Vec::with_capacity(order.len());
    for label in order {
        let mut pts: Vec<(usize, f64, f64)> = rows[&label]
            .iter()
            .map(|(line, stamp, v)| {
                let x = match (stamp, origin) {
                    (Stamp::Numeric(x), _) => *x,
                    (Stamp::Calendar(t), Some(o)) => (*t - o).num_milliseconds() as f64 / 3.6e6,
                    (Stamp::Calendar(_), None) => unreachable!("origin exists for calendar stamps"),
                };
                (*line, x, *v)
            })
            .collect();
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        if let Some(w) = pts.windows(2).find(|w| w[0].1 == w[1].1) {
            return Err(Error::Parse {
                line: w[1].0,
                message: format!("duplicate timestamp in task '{label}'"),
            });
        }
        let inputs = pts.iter().map(|p| p.1).collect();
        let values = pts.iter().map(|p| p.2).collect();
        tasks.push(TaskSeries::new(label, inputs, values)?);
    }
    if dropped > 0 {
        info!("dropped {dropped} row(s) with missing values from {}", path.display());
    }
    Ok(LoadedSeries {
        dataset: TaskedDataset::new(tasks)?.with_time_origin(origin),
        dropped,
    })
}

/// One file per task; the task label is the file stem.
pub fn load_series_files(paths: &[&Path], schema: &SeriesSchema) -> Result<LoadedSeries> {
    let single = SeriesSchema {
        task: None,
        ..schema.clone()
    };
    let mut tasks = Vec::new();
    let mut dropped = 0;
    let mut origin: Option<NaiveDateTime> = None;
    let mut loaded = Vec::new();
    for path in paths {
        let l = load_series(path, &single)?;
        dropped += l.dropped;
        if let Some(o) = l.dataset.time_origin() {
            origin = Some(origin.map_or(o, |cur| cur.min(o)));
        }
        loaded.push(l.dataset);
    }
    for ds in loaded {
        // shift every file onto the common calendar origin
        let shift = match (ds.time_origin(), origin) {
            (Some(o), Some(common)) => (o - common).num_milliseconds() as f64 / 3.6e6,
            _ => 0.0,
        };
        for mut t in ds.tasks {
            t.inputs.iter_mut().for_each(|x| *x += shift);
            tasks.push(t);
        }
    }
    Ok(LoadedSeries {
        dataset: TaskedDataset::new(tasks)?.with_time_origin(origin),
        dropped,
    })
}

fn format_timestamp(x: f64, origin: Option<NaiveDateTime>) -> String {
    match origin {
        Some(o) => {
            let t = o + TimeDelta::milliseconds((x * 3.6e6).round() as i64);
            t.format(ISO_FORMAT).to_string()
        }
        None => format!("{x}"),
    }
}

/// Writes `timestamp,value,task` rows, task by task.
pub fn write_series(dataset: &TaskedDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "value", "task"])?;
    for t in dataset.tasks() {
        for (x, v) in t.inputs.iter().zip(&t.values) {
            w.write_record([
                format_timestamp(*x, dataset.time_origin()),
                format!("{v}"),
                t.label.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub task: String,
    pub x: f64,
    pub y_true: Option<f64>,
    pub y_mean: f64,
    pub y_std: f64,
    pub is_train: bool,
}

/// Writes `task,x,y_true,y_mean,y_std,is_train`; a missing truth is an empty field.
pub fn write_predictions(rows: &[PredictionRow], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    writeln!(f, "task,x,y_true,y_mean,y_std,is_train")?;
    for r in rows {
        let truth = r.y_true.map(|v| format!("{v}")).unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{},{},{}",
            r.task, r.x, truth, r.y_mean, r.y_std, r.is_train
        )?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[2.0, 3.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(mae(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
        assert!(mae(&[], &[]).is_err());
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn integral_and_derivative_of_constant() {
        let x = linspace(-1.0, 3.0, 9);
        let y = vec![2.5; 9];
        let int = cumulative_integral(&y, &x).unwrap();
        let der = derivative(&y, &x).unwrap();
        for i in 0..9 {
            assert!((int[i] - 2.5 * (x[i] - x[0])).abs() < 1e-12);
            assert!(der[i].abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_of_identity_is_one_inside() {
        let x = linspace(0.0, 1.0, 11);
        let der = derivative(&x, &x).unwrap();
        for d in &der[1..10] {
            assert_eq!(*d, 1.0);
        }
        assert!((der[0] - 1.0).abs() < 1e-12 && (der[10] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn calculus_rejects_bad_inputs() {
        assert!(derivative(&[1.0, 2.0], &[0.0]).is_err());
        assert!(cumulative_integral(&[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn first_half_split() {
        let x = linspace(0.0, 9.0, 10);
        let ds = TaskedDataset::new(vec![TaskSeries::new("a", x.clone(), x).unwrap()]).unwrap();
        let s = split(&ds, 0, SplitStrategy::FirstHalf).unwrap();
        assert_eq!(s.tasks()[0].train_indices(), vec![0, 1, 2, 3, 4]);
        let s = split(&ds, 0, SplitStrategy::LastHalf).unwrap();
        assert_eq!(s.tasks()[0].train_indices(), vec![5, 6, 7, 8, 9]);
        assert!(split(&ds, 1, SplitStrategy::FirstHalf).is_err());
    }

    #[test]
    fn random_half_is_seeded() {
        let x = linspace(0.0, 1.0, 31);
        let ds = TaskedDataset::new(vec![TaskSeries::new("a", x.clone(), x).unwrap()]).unwrap();
        let a = split(&ds, 0, SplitStrategy::RandomHalf { seed: 4 }).unwrap();
        let b = split(&ds, 0, SplitStrategy::RandomHalf { seed: 4 }).unwrap();
        assert_eq!(a, b);
        let t = &a.tasks()[0];
        assert_eq!(t.train_indices().len(), 15);
        let mut all: Vec<usize> = t.train_indices().into_iter().chain(t.test_indices()).collect();
        all.sort();
        assert_eq!(all, (0..31).collect::<Vec<_>>());
    }

    #[test]
    fn unsorted_inputs_rejected() {
        assert!(TaskSeries::new("a", vec![0.0, 2.0, 1.0], vec![0.0; 3]).is_err());
        assert!(TaskedDataset::new(vec![]).is_err());
    }
}

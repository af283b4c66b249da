//! Trained-model files.

use std::fs;
use std::path::Path;

use mtgp::gp::{Noise, TrainedModel};
use mtgp::multitask::{KernelFamily, KernelParams, KernelSpec, Points};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, CliError, CliResult};

pub const MODEL_SCHEMA_VERSION: u64 = 1;

/// Largest NLML disagreement tolerated when a model file is reloaded.
pub const NLML_TOLERANCE: f64 = 1e-10;

/// Affine map between original task units and the units the GP was fitted in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub scale: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization { mean: 0.0, scale: 1.0 };

    /// Mean and population deviation of `values`; a flat series keeps scale 1.
    pub fn fit(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::IDENTITY;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let scale = if var > 0.0 && var.is_finite() { var.sqrt() } else { 1.0 };
        Self { mean, scale }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.scale
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.scale + self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingData {
    pub x: Vec<f64>,
    pub task: Vec<usize>,
    /// Normalized targets.
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u64,
    pub family: KernelFamily,
    pub q: usize,
    pub m: usize,
    pub p: usize,
    pub params: KernelParams,
    /// Unconstrained parameter vector of the kernel.
    pub free_params: Vec<f64>,
    pub param_labels: Vec<String>,
    pub noise: Noise,
    pub nlml: f64,
    pub tasks: Vec<String>,
    pub normalization: Vec<Normalization>,
    pub training: TrainingData,
    pub manifest: serde_json::Value,
}

/// A model file together with the conditioned GP it describes.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub file: ModelFile,
    pub model: TrainedModel,
}

/// Prediction in original task units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPrediction {
    pub mean: f64,
    pub std: f64,
}

impl ModelFile {
    pub fn new(
        model: &TrainedModel,
        tasks: Vec<String>,
        normalization: Vec<Normalization>,
        manifest: serde_json::Value,
    ) -> Self {
        let spec = model.spec();
        let points = model.points();
        Self {
            schema_version: MODEL_SCHEMA_VERSION,
            family: spec.family(),
            q: spec.components(),
            m: spec.tasks(),
            p: spec.input_dim(),
            params: spec.params().clone(),
            free_params: spec.pack(),
            param_labels: spec.param_labels(),
            noise: model.noise().clone(),
            nlml: model.nlml(),
            tasks,
            normalization,
            training: TrainingData {
                x: (0..points.len()).flat_map(|i| points.x(i).to_vec()).collect(),
                task: points.tasks().to_vec(),
                y: model.targets().to_vec(),
            },
            manifest,
        }
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(json_err(path))?;
        fs::write(path, text).map_err(io_err(path))
    }

    /// Parses a model file, checking the schema version before anything else.
    pub fn parse(text: &str, path: &Path) -> CliResult<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(json_err(path))?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| CliError::Config(format!("{}: missing schema_version", path.display())))?;
        if found != MODEL_SCHEMA_VERSION {
            return Err(CliError::SchemaVersion {
                found,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        serde_json::from_value(value).map_err(json_err(path))
    }

    /// Rebuilds the GP and checks that it reproduces the stored NLML.
    pub fn restore(self) -> CliResult<LoadedModel> {
        let spec = KernelSpec::new(self.q, self.m, self.p, self.params.clone())?;
        if spec.family() != self.family {
            return Err(CliError::Config(format!(
                "model declares {} but its parameters are {}",
                self.family,
                spec.family()
            )));
        }
        if self.tasks.len() != self.m || self.normalization.len() != self.m {
            return Err(CliError::Config("task labels or normalization do not match M".into()));
        }
        let points = Points::new(self.p, self.training.x.clone(), self.training.task.clone())?;
        let model = TrainedModel::fit(spec, self.noise.clone(), points, self.training.y.clone())?;
        let diff = (model.nlml() - self.nlml).abs();
        if !(diff <= NLML_TOLERANCE * (1.0 + self.nlml.abs())) {
            return Err(CliError::Config(format!(
                "stored NLML {} does not match recomputed {}",
                self.nlml,
                model.nlml()
            )));
        }
        Ok(LoadedModel { file: self, model })
    }
}

impl LoadedModel {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        ModelFile::parse(&text, path)?.restore()
    }

    /// Looks a task up by label, falling back to a numeric index.
    pub fn task_index(&self, name: &str) -> CliResult<usize> {
        let name = name.trim();
        if let Some(i) = self.file.tasks.iter().position(|t| t == name) {
            return Ok(i);
        }
        match name.parse::<usize>() {
            Ok(i) if i < self.file.m => Ok(i),
            Ok(i) => Err(mtgp::Error::TaskOutOfRange {
                index: i,
                tasks: self.file.m,
            }
            .into()),
            Err(_) => Err(CliError::UnknownTask(name.to_string())),
        }
    }

    pub fn predict(&self, points: &Points) -> CliResult<Vec<PointPrediction>> {
        let raw = self.model.predict_many(points)?;
        Ok(raw
            .iter()
            .zip(points.tasks())
            .map(|(p, &t)| {
                let n = self.file.normalization[t];
                PointPrediction {
                    mean: n.inverse(p.mean),
                    std: p.std() * n.scale,
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_inverts() {
        let n = Normalization::fit(&[1.0, 2.0, 3.0, 6.0]);
        assert_eq!(n.mean, 3.0);
        for v in [-2.0, 0.0, 7.5] {
            assert!((n.inverse(n.forward(v)) - v).abs() < 1e-12);
        }
        assert_eq!(Normalization::fit(&[4.0, 4.0]).scale, 1.0);
    }

    #[test]
    fn wrong_version_is_reported() {
        let err = ModelFile::parse(r#"{"schema_version": 2}"#, Path::new("m.json")).unwrap_err();
        assert!(matches!(err, CliError::SchemaVersion { found: 2, expected: 1 }));
    }
}

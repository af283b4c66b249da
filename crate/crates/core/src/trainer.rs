//! Marginal-likelihood optimization.

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gp::{jittered_cholesky, noisy_covariance_with, Factorization, Noise, NlmlTerms, NoiseMode};
use crate::multitask::{check_points, KernelSpec, LagTable, Points};
use crate::spectral::rejitter;

/// Kernel free parameters followed by `ln(noise variance - floor)` for each
/// noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    kernel_len: usize,
    noise_mode: NoiseMode,
    noise_floor: f64,
}

impl ParamVector {
    pub fn from_model(spec: &KernelSpec, noise: &Noise) -> Result<Self> {
        Self::with_floor(spec, noise, 0.0)
    }

    /// Packs with a lower bound on every noise variance.
    pub fn with_floor(spec: &KernelSpec, noise: &Noise, floor: f64) -> Result<Self> {
        if !(floor >= 0.0 && floor.is_finite()) {
            return Err(Error::InvalidParameter("noise floor must be non-negative".into()));
        }
        let mut values = spec.pack();
        let kernel_len = values.len();
        for t in 0..noise.len() {
            let v = noise.variance(t);
            if !(v > floor) {
                return Err(Error::InvalidParameter(format!(
                    "noise variance {v} does not exceed the floor {floor}"
                )));
            }
            values.push((v - floor).ln());
        }
        Ok(Self {
            values,
            kernel_len,
            noise_mode: noise.mode(),
            noise_floor: floor,
        })
    }

    pub fn noise_floor(&self) -> f64 {
        self.noise_floor
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel_len
    }

    pub fn kernel_part(&self) -> &[f64] {
        &self.values[..self.kernel_len]
    }

    pub fn noise_part(&self) -> &[f64] {
        &self.values[self.kernel_len..]
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        check_dim(self.values.len(), values.len())?;
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    /// Rebuilds the kernel and noise using `template` for the structure.
    pub fn unpack(&self, template: &KernelSpec) -> Result<(KernelSpec, Noise)> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite parameter vector".into()));
        }
        let spec = template.with_free_params(self.kernel_part())?;
        let raw: Vec<f64> = self
            .noise_part()
            .iter()
            .map(|v| (v.exp() + self.noise_floor).ln())
            .collect();
        let noise = Noise::unpack(self.noise_mode, &raw);
        noise.validate(spec.tasks())?;
        Ok((spec, noise))
    }

    pub fn labels(&self, template: &KernelSpec) -> Vec<String> {
        let mut labels = template.param_labels();
        match self.noise_mode {
            NoiseMode::Shared => labels.push("ln_noise".into()),
            NoiseMode::PerTask => {
                labels.extend((0..self.noise_part().len()).map(|t| format!("ln_noise[{t}]")))
            }
        }
        labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Analytic,
    /// Central finite differences, mainly for checking the analytic path.
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_iters: usize,
    pub learning_rate: f64,
    /// Stop once an accepted step improves the NLML by less than
    /// `tolerance * (1 + |nlml|)`.
    pub tolerance: f64,
    /// Total number of starts, the first being the given initialization.
    pub restarts: usize,
    /// Consecutive rejected steps before giving up.
    pub max_rejections: usize,
    pub gradient: GradientMode,
    pub seed: u64,
    /// Lower bound on every noise variance.
    pub noise_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iters: 300,
            learning_rate: 0.05,
            tolerance: 1e-7,
            restarts: 3,
            max_rejections: 12,
            gradient: GradientMode::Analytic,
            seed: 0,
            noise_floor: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidParameter("tolerance must be non-negative".into()));
        }
        if !(self.noise_floor >= 0.0 && self.noise_floor.is_finite()) {
            return Err(Error::InvalidParameter("noise floor must be non-negative".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidParameter("at least one start is required".into()));
        }
        Ok(())
    }
}

/// The NLML as a function of a [`ParamVector`] for fixed training data.
pub struct Objective<'a> {
    template: &'a KernelSpec,
    points: &'a Points,
    y: DVector<f64>,
    table: LagTable,
}

/// Everything computed while evaluating the objective at one point.
pub struct Evaluation {
    pub spec: KernelSpec,
    pub noise: Noise,
    pub factor: Factorization,
    pub alpha: DVector<f64>,
    pub terms: NlmlTerms,
}

impl Evaluation {
    pub fn nlml(&self) -> f64 {
        self.terms.total()
    }
}

impl<'a> Objective<'a> {
    pub fn new(template: &'a KernelSpec, points: &'a Points, y: &[f64]) -> Result<Self> {
        check_dim(points.len(), y.len())?;
        check_points(template, points)?;
        if points.is_empty() {
            return Err(Error::EmptyInput("no training points".into()));
        }
        Ok(Self {
            template,
            points,
            y: DVector::from_column_slice(y),
            table: LagTable::new(points),
        })
    }

    pub fn evaluate(&self, params: &ParamVector) -> Result<Evaluation> {
        let (spec, noise) = params.unpack(self.template)?;
        let k = noisy_covariance_with(&spec, &noise, self.points, &self.table)?;
        let factor = jittered_cholesky(&k)?;
        let (terms, alpha) = NlmlTerms::from_factor(&factor, &self.y);
        if !terms.total().is_finite() {
            return Err(Error::Numerical("non-finite NLML".into()));
        }
        Ok(Evaluation {
            spec,
            noise,
            factor,
            alpha,
            terms,
        })
    }

    pub fn value(&self, params: &ParamVector) -> Result<f64> {
        Ok(self.evaluate(params)?.nlml())
    }

    /// Gradient of the NLML from `0.5 tr((K^-1 - alpha alpha^T) dK)`.
    pub fn analytic_gradient(&self, params: &ParamVector, eval: &Evaluation) -> Vec<f64> {
        let n = self.points.len();
        let kinv: DMatrix<f64> = eval.factor.chol.inverse();
        let alpha = &eval.alpha;
        let mut grad = vec![0.0; params.len()];
        let (kgrad, ngrad) = grad.split_at_mut(params.kernel_len);
        let mut coefs = vec![0.0; self.table.len()];
        let mut pair = 0;
        for a in 0..n {
            for b in a..n {
                let w = kinv[(a, b)] - alpha[a] * alpha[b];
                coefs[self.table.index[pair] as usize] += if a == b { 0.5 * w } else { w };
                pair += 1;
            }
        }
        for (key, coef) in coefs.iter().enumerate() {
            let (tm, tn) = self.table.tasks[key];
            eval.spec
                .accumulate_gradient(self.table.lag(key), tm, tn, *coef, kgrad);
        }
        for a in 0..n {
            let t = self.points.task(a);
            let w = kinv[(a, a)] - alpha[a] * alpha[a];
            let slot = match eval.noise {
                Noise::Shared(_) => 0,
                Noise::PerTask(_) => t,
            };
            ngrad[slot] += 0.5 * w * (eval.noise.variance(t) - params.noise_floor);
        }
        grad
    }

    /// Central differences with step `1e-6 (1 + |p|)`.
    pub fn numeric_gradient(&self, params: &ParamVector) -> Result<Vec<f64>> {
        let mut grad = Vec::with_capacity(params.len());
        let mut probe = params.clone();
        for i in 0..params.len() {
            let p = params.values[i];
            let h = 1e-6 * (1.0 + p.abs());
            probe.values[i] = p + h;
            let up = self.value(&probe)?;
            probe.values[i] = p - h;
            let down = self.value(&probe)?;
            probe.values[i] = p;
            grad.push((up - down) / (2.0 * h));
        }
        Ok(grad)
    }

    pub fn gradient(&self, params: &ParamVector, eval: &Evaluation, mode: GradientMode) -> Result<Vec<f64>> {
        match mode {
            GradientMode::Analytic => Ok(self.analytic_gradient(params, eval)),
            GradientMode::Numeric => self.numeric_gradient(params),
        }
    }
}

/// NLML gradient of `(spec, noise)` on the given data, in [`ParamVector`] order.
pub fn gradient(
    spec: &KernelSpec,
    noise: &Noise,
    points: &Points,
    y: &[f64],
    mode: GradientMode,
) -> Result<Vec<f64>> {
    let objective = Objective::new(spec, points, y)?;
    let params = ParamVector::from_model(spec, noise)?;
    let eval = objective.evaluate(&params)?;
    objective.gradient(&params, &eval, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub nlml: f64,
    pub learning_rate: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    Rejections,
    NoIterations,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestartSummary {
    pub seed: u64,
    pub initial_nlml: Option<f64>,
    pub final_nlml: Option<f64>,
    pub iterations: usize,
    pub stop: Option<StopReason>,
}

/// Result of a full optimization with restarts.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub spec: KernelSpec,
    pub noise: Noise,
    pub nlml: f64,
    pub best_restart: usize,
    pub trace: Vec<TraceEntry>,
    pub stop: StopReason,
    pub restarts: Vec<RestartSummary>,
}

struct RunResult {
    params: ParamVector,
    nlml: f64,
    trace: Vec<TraceEntry>,
    stop: StopReason,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam steps that are only accepted when the NLML does not increase.
/// Rejections halve the learning rate and reset the moment estimates;
/// acceptances grow the learning rate slightly.
fn descend(objective: &Objective, start: ParamVector, config: &TrainConfig) -> Result<RunResult> {
    let mut params = start;
    let eval = objective.evaluate(&params)?;
    let mut f = eval.nlml();
    let mut g = objective.gradient(&params, &eval, config.gradient)?;
    drop(eval);
    let dim = params.len();
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut t = 0i32;
    let mut lr = config.learning_rate;
    let mut rejections = 0;
    let mut trace = Vec::with_capacity(config.max_iters);
    let mut stop = StopReason::MaxIterations;
    for it in 0..config.max_iters {
        let t_next = t + 1;
        let mut m_next = m.clone();
        let mut v_next = v.clone();
        let mut cand = params.values.clone();
        for i in 0..dim {
            m_next[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v_next[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let mh = m_next[i] / (1.0 - BETA1.powi(t_next));
            let vh = v_next[i] / (1.0 - BETA2.powi(t_next));
            cand[i] -= lr * mh / (vh.sqrt() + EPS);
        }
        let cand = params.with_values(cand)?;
        let accepted = match objective.evaluate(&cand) {
            Ok(e) if e.nlml() <= f => Some(e),
            Ok(_) => None,
            Err(err) => {
                debug!("candidate rejected: {err}");
                None
            }
        };
        match accepted {
            Some(e) => {
                let improvement = f - e.nlml();
                f = e.nlml();
                g = objective.gradient(&cand, &e, config.gradient)?;
                params = cand;
                m = m_next;
                v = v_next;
                t = t_next;
                lr = (lr * 1.1).min(config.learning_rate * 4.0);
                rejections = 0;
                trace.push(TraceEntry {
                    iteration: it,
                    nlml: f,
                    learning_rate: lr,
                    accepted: true,
                });
                if improvement < config.tolerance * (1.0 + f.abs()) {
                    stop = StopReason::Converged;
                    break;
                }
            }
            None => {
                // stale momentum can point uphill; restart the moments from the current gradient
                m.iter_mut().for_each(|x| *x = 0.0);
                v.iter_mut().for_each(|x| *x = 0.0);
                t = 0;
                lr *= 0.5;
                rejections += 1;
                trace.push(TraceEntry {
                    iteration: it,
                    nlml: f,
                    learning_rate: lr,
                    accepted: false,
                });
                if rejections >= config.max_rejections {
                    stop = StopReason::Rejections;
                    break;
                }
            }
        }
    }
    Ok(RunResult {
        params,
        nlml: f,
        trace,
        stop,
    })
}

/// Minimizes the NLML from `init` and from `restarts - 1` perturbed copies
/// of it, keeping the lowest final NLML (earlier starts win ties).
pub fn optimize(
    init: &KernelSpec,
    noise: &Noise,
    points: &Points,
    y: &[f64],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    noise.validate(init.tasks())?;
    let objective = Objective::new(init, points, y)?;
    let start = ParamVector::with_floor(init, noise, config.noise_floor)?;
    let nlml = objective
        .value(&start)
        .map_err(|e| Error::Init(format!("NLML at the initial parameters: {e}")))?;

    if config.max_iters == 0 {
        return Ok(TrainOutcome {
            spec: init.clone(),
            noise: noise.clone(),
            nlml,
            best_restart: 0,
            trace: Vec::new(),
            stop: StopReason::NoIterations,
            restarts: vec![RestartSummary {
                seed: config.seed,
                initial_nlml: Some(nlml),
                final_nlml: Some(nlml),
                iterations: 0,
                stop: Some(StopReason::NoIterations),
            }],
        });
    }

    let mut best: Option<(usize, RunResult)> = None;
    let mut summaries = Vec::with_capacity(config.restarts);
    let mut last_err = None;
    for r in 0..config.restarts {
        let seed = config.seed.wrapping_add(r as u64);
        let params = if r == 0 {
            Ok(start.clone())
        } else {
            rejitter(init, seed).and_then(|s| ParamVector::with_floor(&s, noise, config.noise_floor))
        };
        let mut summary = RestartSummary {
            seed,
            initial_nlml: None,
            final_nlml: None,
            iterations: 0,
            stop: None,
        };
        let run = params.and_then(|p| {
            summary.initial_nlml = objective.value(&p).ok();
            descend(&objective, p, config)
        });
        match run {
            Ok(run) => {
                info!(
                    "start {r}: nlml {:.6} after {} iterations ({:?})",
                    run.nlml,
                    run.trace.len(),
                    run.stop
                );
                summary.final_nlml = Some(run.nlml);
                summary.iterations = run.trace.len();
                summary.stop = Some(run.stop);
                if best.as_ref().is_none_or(|(_, b)| run.nlml < b.nlml) {
                    best = Some((r, run));
                }
            }
            Err(e) => {
                warn!("start {r} failed: {e}");
                last_err = Some(e);
            }
        }
        summaries.push(summary);
    }
    let (best_restart, run) = match best {
        Some(b) => b,
        None => return Err(last_err.unwrap_or_else(|| Error::Numerical("no start succeeded".into()))),
    };
    let (spec, noise) = run.params.unpack(init)?;
    Ok(TrainOutcome {
        spec,
        noise,
        nlml: run.nlml,
        best_restart,
        trace: run.trace,
        stop: run.stop,
        restarts: summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::ComponentParams;
    use crate::multitask::{CoregionalizationSet, KernelParams};

    fn small_problem() -> (KernelSpec, Noise, Points, Vec<f64>) {
        let spec = KernelSpec::new(
            1,
            2,
            1,
            KernelParams::GcsmCc {
                coreg: CoregionalizationSet::new(2, vec![vec![1.0, 0.3, 0.8]]).unwrap(),
                components: vec![ComponentParams::new(1.0, vec![0.2], vec![0.05], vec![0.1], vec![0.2]).unwrap()],
            },
        )
        .unwrap();
        let xs: Vec<f64> = (0..12).map(|i| i as f64 * 0.7).collect();
        let tasks: Vec<usize> = (0..12).map(|i| i % 2).collect();
        let y = xs.iter().map(|x| (0.9 * x).sin()).collect();
        (spec, Noise::Shared(0.1), Points::scalar(xs, tasks).unwrap(), y)
    }

    #[test]
    fn analytic_matches_numeric_small() {
        let (spec, noise, pts, y) = small_problem();
        let a = gradient(&spec, &noise, &pts, &y, GradientMode::Analytic).unwrap();
        let n = gradient(&spec, &noise, &pts, &y, GradientMode::Numeric).unwrap();
        for (x, z) in a.iter().zip(&n) {
            assert!((x - z).abs() <= 1e-5 * (1.0 + z.abs()), "{a:?} vs {n:?}");
        }
    }

    #[test]
    fn zero_iterations_keep_init() {
        let (spec, noise, pts, y) = small_problem();
        let cfg = TrainConfig {
            max_iters: 0,
            ..TrainConfig::default()
        };
        let out = optimize(&spec, &noise, &pts, &y, &cfg).unwrap();
        assert_eq!(out.spec, spec);
        assert_eq!(out.noise, noise);
    }

    #[test]
    fn nlml_never_increases() {
        let (spec, noise, pts, y) = small_problem();
        let cfg = TrainConfig {
            max_iters: 40,
            restarts: 1,
            ..TrainConfig::default()
        };
        let out = optimize(&spec, &noise, &pts, &y, &cfg).unwrap();
        let init = crate::gp::nlml(&spec, &noise, &pts, &y).unwrap();
        let mut prev = init;
        for e in &out.trace {
            assert!(e.nlml <= prev);
            prev = e.nlml;
        }
        assert!(out.nlml <= init);
    }

    #[test]
    fn deterministic() {
        let (spec, noise, pts, y) = small_problem();
        let cfg = TrainConfig {
            max_iters: 20,
            restarts: 2,
            ..TrainConfig::default()
        };
        let a = optimize(&spec, &noise, &pts, &y, &cfg).unwrap();
        let b = optimize(&spec, &noise, &pts, &y, &cfg).unwrap();
        assert_eq!(a.nlml.to_bits(), b.nlml.to_bits());
        assert_eq!(a.spec, b.spec);
    }

    #[test]
    fn bad_config_rejected() {
        let (spec, noise, pts, y) = small_problem();
        let cfg = TrainConfig {
            restarts: 0,
            ..TrainConfig::default()
        };
        assert!(optimize(&spec, &noise, &pts, &y, &cfg).is_err());
    }
}

//! Hyperparameter initialization from empirical spectral densities.

use std::f64::consts::PI;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::data::TaskedDataset;
use crate::error::{Error, Result};
use crate::kernel::{BaselineKernelParams, ComponentParams, MaternOrder};
use crate::multitask::{
    CoregionalizationSet, CsmParams, KernelFamily, KernelParams, KernelSpec, MosmChannel, MosmParams,
};

/// One-sided power estimate on positive frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensityEstimate {
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
}

impl SpectralDensityEstimate {
    pub fn new(frequencies: Vec<f64>, power: Vec<f64>) -> Result<Self> {
        if frequencies.len() != power.len() {
            return Err(Error::LengthMismatch {
                left: frequencies.len(),
                right: power.len(),
            });
        }
        if frequencies.is_empty() {
            return Err(Error::EmptyInput("spectral density has no bins".into()));
        }
        if frequencies.iter().any(|f| !(f.is_finite() && *f > 0.0))
            || frequencies.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidParameter(
                "frequencies must be positive and strictly increasing".into(),
            ));
        }
        if power.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidParameter("power must be finite and non-negative".into()));
        }
        Ok(Self { frequencies, power })
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn total_power(&self) -> f64 {
        self.power.iter().sum()
    }

    /// Spacing of the frequency grid (median spacing for irregular grids).
    pub fn bin_width(&self) -> f64 {
        if self.frequencies.len() < 2 {
            return self.frequencies[0];
        }
        let mut d: Vec<f64> = self.frequencies.windows(2).map(|w| w[1] - w[0]).collect();
        d.sort_by(f64::total_cmp);
        d[d.len() / 2]
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.power.iter().enumerate() {
            if *p > self.power[best] {
                best = i;
            }
        }
        best
    }
}

/// Periodogram of a uniformly sampled series after mean removal. The powers
/// sum to the population variance of `y`.
pub fn periodogram(y: &[f64], dt: f64) -> Result<SpectralDensityEstimate> {
    let n = y.len();
    if n < 8 {
        return Err(Error::Precondition(format!("periodogram needs at least 8 samples, got {n}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter("sampling interval must be positive".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("series contains non-finite values".into()));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = y.iter().map(|v| Complex64::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let nn = (n * n) as f64;
    let half = n / 2;
    let mut frequencies = Vec::with_capacity(half);
    let mut power = Vec::with_capacity(half);
    for (k, x) in buf.iter().enumerate().take(half + 1).skip(1) {
        let scale = if 2 * k == n { 1.0 } else { 2.0 };
        frequencies.push(k as f64 / (n as f64 * dt));
        power.push(scale * x.norm_sqr() / nn);
    }
    SpectralDensityEstimate::new(frequencies, power)
}

/// Relative tolerance on grid spacing when deciding whether inputs are uniform.
const GRID_TOL: f64 = 1e-6;

fn median_spacing(x: &[f64]) -> f64 {
    let mut d: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Periodogram of `(x, y)` pairs that must lie on a uniform grid.
pub fn periodogram_of_series(x: &[f64], y: &[f64]) -> Result<SpectralDensityEstimate> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Precondition("series too short for a periodogram".into()));
    }
    let dt = (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64;
    if x.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > GRID_TOL * dt.abs()) {
        return Err(Error::Precondition(
            "inputs are not on a uniform grid; resample first".into(),
        ));
    }
    periodogram(y, dt)
}

/// A series linearly interpolated onto a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub inputs: Vec<f64>,
    pub values: Vec<f64>,
    pub dt: f64,
    /// Share of grid points that did not coincide with an original sample.
    pub interpolated_fraction: f64,
}

/// Interpolates onto `x0 + k dt`; `dt` defaults to the median input spacing.
pub fn resample_uniform(x: &[f64], y: &[f64], dt: Option<f64>) -> Result<Resampled> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Precondition("need at least two samples to resample".into()));
    }
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("inputs must be strictly increasing".into()));
    }
    let dt = dt.unwrap_or_else(|| median_spacing(x));
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter("resampling interval must be positive".into()));
    }
    let span = x[x.len() - 1] - x[0];
    let steps = (span / dt + GRID_TOL).floor() as usize;
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    let mut interpolated = 0usize;
    let mut j = 0;
    for k in 0..=steps {
        let t = x[0] + k as f64 * dt;
        while j + 2 < x.len() && x[j + 1] < t {
            j += 1;
        }
        let (x0, x1) = (x[j], x[j + 1]);
        let v = if (t - x0).abs() <= GRID_TOL * dt {
            y[j]
        } else if (t - x1).abs() <= GRID_TOL * dt {
            y[j + 1]
        } else {
            interpolated += 1;
            let u = ((t - x0) / (x1 - x0)).clamp(0.0, 1.0);
            y[j] + u * (y[j + 1] - y[j])
        };
        inputs.push(t);
        values.push(v);
    }
    Ok(Resampled {
        interpolated_fraction: interpolated as f64 / inputs.len() as f64,
        inputs,
        values,
        dt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Gaussian mixture fitted to a spectral density by power-weighted EM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GMMFit {
    /// Sorted by mean; weights sum to one.
    pub components: Vec<GmmComponent>,
    /// Frequencies with positive power that took part in the fit.
    pub support: Vec<f64>,
    /// `responsibilities[k][i]` of component `i` for support point `k`.
    pub responsibilities: Vec<Vec<f64>>,
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    /// Seed of the attempt that produced this fit.
    pub seed: u64,
}

pub const GMM_TOLERANCE: f64 = 1e-8;
pub const GMM_MAX_ITERS: usize = 500;
pub const GMM_MAX_RESTARTS: usize = 5;
const COLLAPSE: f64 = 1e-12;

struct Degenerate;

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - 0.5 * (x - mean) * (x - mean) / var
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// E-step: responsibilities and the weighted log-likelihood.
fn expectation(f: &[f64], p: &[f64], comps: &[GmmComponent], resp: &mut [Vec<f64>]) -> f64 {
    let mut ll = 0.0;
    let mut logs = vec![0.0; comps.len()];
    for (k, (&fk, &pk)) in f.iter().zip(p).enumerate() {
        for (i, c) in comps.iter().enumerate() {
            logs[i] = c.weight.ln() + log_normal(fk, c.mean, c.variance);
        }
        let lse = log_sum_exp(&logs);
        for (i, l) in logs.iter().enumerate() {
            resp[k][i] = (l - lse).exp();
        }
        ll += pk * lse;
    }
    ll
}

fn em_attempt(f: &[f64], p: &[f64], q: usize, floor: f64, seed: u64) -> std::result::Result<GMMFit, Degenerate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng, weights: &[f64]| -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    };

    // power-weighted k-means++ seeding
    let mut means = vec![f[pick(&mut rng, p)]];
    while means.len() < q {
        let d2: Vec<f64> = f
            .iter()
            .zip(p)
            .map(|(x, w)| w * means.iter().map(|m| (x - m) * (x - m)).fold(f64::INFINITY, f64::min))
            .collect();
        let weights = if d2.iter().sum::<f64>() > 0.0 {
            d2
        } else {
            p.iter()
                .zip(f)
                .map(|(w, x)| if means.contains(x) { 0.0 } else { *w })
                .collect()
        };
        means.push(f[pick(&mut rng, &weights)]);
    }
    let grand_mean: f64 = f.iter().zip(p).map(|(x, w)| x * w).sum();
    let spread: f64 = f.iter().zip(p).map(|(x, w)| w * (x - grand_mean).powi(2)).sum();
    let var0 = (spread / q as f64).max(floor).max(COLLAPSE);
    let mut comps: Vec<GmmComponent> = means
        .into_iter()
        .map(|mean| GmmComponent {
            weight: 1.0 / q as f64,
            mean,
            variance: var0,
        })
        .collect();

    let mut resp = vec![vec![0.0; q]; f.len()];
    let mut trace = vec![expectation(f, p, &comps, &mut resp)];
    let mut iterations = 0;
    while iterations < GMM_MAX_ITERS {
        iterations += 1;
        for (i, c) in comps.iter_mut().enumerate() {
            let nk: f64 = resp.iter().zip(p).map(|(r, w)| r[i] * w).sum();
            if !(nk > COLLAPSE) {
                return Err(Degenerate);
            }
            let mean = resp.iter().zip(p).zip(f).map(|((r, w), x)| r[i] * w * x).sum::<f64>() / nk;
            let var = resp
                .iter()
                .zip(p)
                .zip(f)
                .map(|((r, w), x)| r[i] * w * (x - mean) * (x - mean))
                .sum::<f64>()
                / nk;
            let var = var.max(floor);
            if !(var.is_finite() && var >= COLLAPSE && mean.is_finite()) {
                return Err(Degenerate);
            }
            *c = GmmComponent {
                weight: nk,
                mean,
                variance: var,
            };
        }
        let ll = expectation(f, p, &comps, &mut resp);
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(ll);
        if !ll.is_finite() {
            return Err(Degenerate);
        }
        if ll - prev < GMM_TOLERANCE {
            break;
        }
    }

    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|a, b| comps[*a].mean.total_cmp(&comps[*b].mean));
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    let components = order
        .iter()
        .map(|&i| GmmComponent {
            weight: comps[i].weight / total,
            ..comps[i]
        })
        .collect();
    let responsibilities = resp
        .iter()
        .map(|r| order.iter().map(|&i| r[i]).collect())
        .collect();
    Ok(GMMFit {
        components,
        support: f.to_vec(),
        responsibilities,
        log_likelihood: trace,
        iterations,
        seed,
    })
}

/// Fits a `q`-component mixture to the density, treating every frequency as
/// a sample weighted by its power. Variances are floored at `df^2 / 12`, the
/// spread of a single frequency bin.
pub fn fit_gmm(density: &SpectralDensityEstimate, q: usize, seed: u64) -> Result<GMMFit> {
    if q == 0 {
        return Err(Error::InvalidParameter("mixture needs at least one component".into()));
    }
    let (f, p): (Vec<f64>, Vec<f64>) = density
        .frequencies
        .iter()
        .zip(&density.power)
        .filter(|(_, p)| **p > 0.0)
        .map(|(f, p)| (*f, *p))
        .unzip();
    if f.len() < q {
        return Err(Error::Precondition(format!(
            "{} frequencies carry power but {q} components were requested",
            f.len()
        )));
    }
    let total: f64 = p.iter().sum();
    let p: Vec<f64> = p.iter().map(|v| v / total).collect();
    let width = density.bin_width();
    let floor = width * width / 12.0;
    for attempt in 0..=GMM_MAX_RESTARTS {
        let s = seed.wrapping_add(attempt as u64);
        match em_attempt(&f, &p, q, floor, s) {
            Ok(fit) => return Ok(fit),
            Err(Degenerate) => warn!("mixture collapsed with seed {s}, restarting"),
        }
    }
    Err(Error::DegenerateMixture {
        restarts: GMM_MAX_RESTARTS,
    })
}

/// Ranges and scales used when drawing initial values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// Delays are drawn from `[-delay_range, delay_range]`.
    pub delay_range: f64,
    /// Phases are drawn from `[-phase_range, phase_range]`.
    pub phase_range: f64,
    /// Standard deviation of coregionalization entries before the boost.
    pub factor_scale: f64,
    /// Added to every diagonal coregionalization entry.
    pub diagonal_boost: f64,
    /// Pool raw power across tasks instead of averaging normalized spectra.
    pub pooled: bool,
    /// Initial noise variance as a fraction of the target variance.
    pub noise_fraction: f64,
    pub matern_order: MaternOrder,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            delay_range: 0.5,
            phase_range: PI / 4.0,
            factor_scale: 0.1,
            diagonal_boost: 1.0,
            pooled: false,
            noise_fraction: 0.01,
            matern_order: MaternOrder::ThreeHalves,
        }
    }
}

/// Family and sizes of the kernel to initialize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelLayout {
    pub family: KernelFamily,
    pub q: usize,
    pub m: usize,
    pub p: usize,
}

#[derive(Debug, Clone)]
pub struct Initialization {
    pub spec: KernelSpec,
    pub noise_variance: f64,
    pub density: SpectralDensityEstimate,
    pub gmm: GMMFit,
    /// Mean over tasks of the share of interpolated grid points.
    pub interpolated_fraction: f64,
}

/// Combined spectral density of the training part of every task.
pub fn dataset_density(dataset: &TaskedDataset, pooled: bool) -> Result<(SpectralDensityEstimate, f64)> {
    let mut per_task = Vec::with_capacity(dataset.num_tasks());
    let mut fractions = 0.0;
    for t in dataset.tasks() {
        let idx = t.train_indices();
        if idx.is_empty() {
            return Err(Error::EmptyInput(format!("task '{}' has no training points", t.label)));
        }
        let x: Vec<f64> = idx.iter().map(|&i| t.inputs[i]).collect();
        let y: Vec<f64> = idx.iter().map(|&i| t.values[i]).collect();
        let r = resample_uniform(&x, &y, None)?;
        fractions += r.interpolated_fraction;
        let d = periodogram(&r.values, r.dt)?;
        let df = d.frequencies[0];
        per_task.push((d, df));
    }
    let df = per_task.iter().map(|(_, df)| *df).fold(f64::INFINITY, f64::min);
    let fmax = per_task
        .iter()
        .map(|(d, _)| *d.frequencies.last().expect("non-empty"))
        .fold(0.0, f64::max);
    let bins = (fmax / df + 1e-9).floor() as usize;
    let grid: Vec<f64> = (1..=bins).map(|k| k as f64 * df).collect();
    let mut power = vec![0.0; grid.len()];
    for (d, task_df) in &per_task {
        // power density interpolated onto the common grid
        let mut dens: Vec<f64> = grid
            .iter()
            .map(|g| interpolate(&d.frequencies, &d.power, *g) / task_df * df)
            .collect();
        if !pooled {
            let total: f64 = dens.iter().sum();
            if total > 0.0 {
                dens.iter_mut().for_each(|v| *v /= total);
            }
        }
        for (p, v) in power.iter_mut().zip(dens) {
            *p += v;
        }
    }
    if !pooled {
        let m = per_task.len() as f64;
        power.iter_mut().for_each(|v| *v /= m);
    }
    Ok((
        SpectralDensityEstimate::new(grid, power)?,
        fractions / per_task.len() as f64,
    ))
}

/// Linear interpolation, zero outside the sampled range.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let tol = 1e-9 * xs[xs.len() - 1];
    if x < xs[0] - tol || x > xs[xs.len() - 1] + tol {
        return 0.0;
    }
    let j = xs.partition_point(|v| *v < x);
    if j == 0 {
        return ys[0];
    }
    if j >= xs.len() {
        return ys[xs.len() - 1];
    }
    if (xs[j] - x).abs() <= tol {
        return ys[j];
    }
    let u = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
    ys[j - 1] + u * (ys[j] - ys[j - 1])
}

fn draw_factor(rng: &mut ChaCha8Rng, m: usize, config: &InitConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(m * (m + 1) / 2);
    for r in 0..m {
        loop {
            let row: Vec<f64> = (0..=r)
                .map(|c| {
                    let z: f64 = rng.sample(StandardNormal);
                    config.factor_scale * z + if c == r { config.diagonal_boost } else { 0.0 }
                })
                .collect();
            let off = row[..r].iter().map(|v| v.abs()).fold(0.0, f64::max);
            if row[r].abs() > off {
                out.extend(row);
                break;
            }
        }
    }
    out
}

fn uniform(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

/// Delays, one per input dimension.
fn draw_delay(rng: &mut ChaCha8Rng, p: usize, config: &InitConfig) -> Vec<f64> {
    (0..p).map(|_| uniform(rng, config.delay_range)).collect()
}

/// Phase vector whose sum is uniform in the phase range.
fn draw_phase(rng: &mut ChaCha8Rng, p: usize, config: &InitConfig) -> Vec<f64> {
    let mut v = vec![0.0; p];
    v[0] = uniform(rng, config.phase_range);
    v
}

fn pooled_variance(dataset: &TaskedDataset) -> f64 {
    let y = dataset.training().y;
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Builds a starting kernel for `layout` from the training data.
pub fn init_hyperparams(
    dataset: &TaskedDataset,
    layout: KernelLayout,
    seed: u64,
    config: &InitConfig,
) -> Result<Initialization> {
    let KernelLayout { family, q, m, p } = layout;
    if p != 1 {
        return Err(Error::Precondition(
            "initialization from data supports one-dimensional inputs only".into(),
        ));
    }
    if m != dataset.num_tasks() {
        return Err(Error::Dimension {
            expected: m,
            got: dataset.num_tasks(),
        });
    }
    if q == 0 {
        return Err(Error::InvalidParameter("Q must be at least 1".into()));
    }
    let (density, interpolated_fraction) = dataset_density(dataset, config.pooled)?;
    let gmm_q = if family.is_spectral() { q } else { 1 };
    let gmm = fit_gmm(&density, gmm_q, seed)?;
    let variance = pooled_variance(dataset);
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::Init("training targets have zero variance".into()));
    }
    debug!("initial mixture {:?}", gmm.components);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1417);
    let g = &gmm.components;
    let params = match family {
        KernelFamily::SeLmc | KernelFamily::MaternLmc => {
            let second: f64 = g.iter().map(|c| c.weight * (c.mean * c.mean + c.variance)).sum();
            let length = 1.0 / (2.0 * PI * second.sqrt());
            let base = BaselineKernelParams::new(variance.sqrt(), vec![length; p], config.matern_order)?;
            let coreg = CoregionalizationSet::new(m, vec![draw_factor(&mut rng, m, config)])?;
            if family == KernelFamily::SeLmc {
                KernelParams::SeLmc { coreg, base }
            } else {
                KernelParams::MaternLmc { coreg, base }
            }
        }
        KernelFamily::SmLmc => {
            let factors = (0..q).map(|_| draw_factor(&mut rng, m, config)).collect();
            let components = g
                .iter()
                .map(|c| ComponentParams::spectral(c.weight * variance, vec![c.mean], vec![c.variance]))
                .collect::<Result<_>>()?;
            KernelParams::SmLmc {
                coreg: CoregionalizationSet::new(m, factors)?,
                components,
            }
        }
        KernelFamily::Csm => {
            let mut phases = vec![vec![0.0; m]; q];
            for row in phases.iter_mut().skip(1) {
                for v in row.iter_mut() {
                    *v = uniform(&mut rng, config.phase_range);
                }
            }
            KernelParams::Csm(CsmParams {
                variance: g.iter().map(|c| c.variance).collect(),
                mean: g.iter().map(|c| c.mean).collect(),
                weights: g.iter().map(|c| vec![c.weight * variance; m]).collect(),
                phases,
            })
        }
        KernelFamily::Mosm => {
            let channels = g
                .iter()
                .map(|c| {
                    let var = 4.0 * PI * PI * c.variance;
                    let magnitude = (c.weight * variance / ((2.0 * PI).sqrt() * var.sqrt())).sqrt();
                    (0..m)
                        .map(|_| MosmChannel {
                            magnitude,
                            mean: vec![2.0 * PI * c.mean],
                            variance: vec![var],
                            delay: draw_delay(&mut rng, p, config),
                            phase: uniform(&mut rng, config.phase_range),
                        })
                        .collect()
                })
                .collect();
            KernelParams::Mosm(MosmParams { channels })
        }
        KernelFamily::GcsmC | KernelFamily::GcsmCc => {
            let components = g
                .iter()
                .map(|c| {
                    ComponentParams::new(
                        c.weight * variance,
                        vec![c.mean],
                        vec![c.variance],
                        draw_delay(&mut rng, p, config),
                        draw_phase(&mut rng, p, config),
                    )
                })
                .collect::<Result<_>>()?;
            let nf = if family == KernelFamily::GcsmC { 1 } else { q };
            let factors = (0..nf).map(|_| draw_factor(&mut rng, m, config)).collect();
            let coreg = CoregionalizationSet::new(m, factors)?;
            if family == KernelFamily::GcsmC {
                KernelParams::GcsmC { coreg, components }
            } else {
                KernelParams::GcsmCc { coreg, components }
            }
        }
    };
    let spec = KernelSpec::new(q, m, p, params)?;
    Ok(Initialization {
        spec,
        noise_variance: config.noise_fraction * variance,
        density,
        gmm,
        interpolated_fraction,
    })
}

/// Redraws delays, phases and coregionalization factors of `spec` while
/// keeping weights, means and variances.
pub fn rejitter(spec: &KernelSpec, seed: u64) -> Result<KernelSpec> {
    rejitter_with(spec, seed, &InitConfig::default())
}

pub fn rejitter_with(spec: &KernelSpec, seed: u64, config: &InitConfig) -> Result<KernelSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e71_77e7);
    let (q, m, p) = (spec.components(), spec.tasks(), spec.input_dim());
    let factors = |n: usize, rng: &mut ChaCha8Rng| -> Result<CoregionalizationSet> {
        CoregionalizationSet::new(m, (0..n).map(|_| draw_factor(rng, m, config)).collect())
    };
    let params = match spec.params().clone() {
        KernelParams::SeLmc { base, .. } => KernelParams::SeLmc {
            coreg: factors(1, &mut rng)?,
            base,
        },
        KernelParams::MaternLmc { base, .. } => KernelParams::MaternLmc {
            coreg: factors(1, &mut rng)?,
            base,
        },
        KernelParams::SmLmc { components, .. } => KernelParams::SmLmc {
            coreg: factors(q, &mut rng)?,
            components,
        },
        KernelParams::Csm(mut csm) => {
            for row in csm.phases.iter_mut().skip(1) {
                for v in row.iter_mut() {
                    *v = uniform(&mut rng, config.phase_range);
                }
            }
            KernelParams::Csm(csm)
        }
        KernelParams::Mosm(mut mosm) => {
            for ch in mosm.channels.iter_mut().flatten() {
                ch.delay = draw_delay(&mut rng, p, config);
                ch.phase = uniform(&mut rng, config.phase_range);
            }
            KernelParams::Mosm(mosm)
        }
        KernelParams::GcsmC { mut components, .. } => {
            for c in components.iter_mut() {
                c.time_delay = draw_delay(&mut rng, p, config);
                c.phase_delay = draw_phase(&mut rng, p, config);
            }
            KernelParams::GcsmC {
                coreg: factors(1, &mut rng)?,
                components,
            }
        }
        KernelParams::GcsmCc { mut components, .. } => {
            for c in components.iter_mut() {
                c.time_delay = draw_delay(&mut rng, p, config);
                c.phase_delay = draw_phase(&mut rng, p, config);
            }
            KernelParams::GcsmCc {
                coreg: factors(q, &mut rng)?,
                components,
            }
        }
    };
    KernelSpec::new(q, m, p, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, n: usize) -> Vec<f64> {
        (0..n).map(|t| (2.0 * PI * freq * t as f64).cos()).collect()
    }

    #[test]
    fn pure_tone_peak() {
        let d = periodogram(&tone(0.1, 256), 1.0).unwrap();
        let k = d.argmax();
        assert!((d.frequencies[k] - 0.1).abs() <= 1.0 / 256.0);
    }

    #[test]
    fn constant_has_no_power() {
        let d = periodogram(&[3.0; 16], 0.5).unwrap();
        assert!(d.power.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn short_series_rejected() {
        assert!(periodogram(&[1.0; 7], 1.0).is_err());
    }

    #[test]
    fn irregular_grid_needs_resampling() {
        let x: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        let y = vec![0.0; 10];
        assert!(matches!(periodogram_of_series(&x, &y), Err(Error::Precondition(_))));
        let r = resample_uniform(&x, &y, Some(1.0)).unwrap();
        assert_eq!(r.inputs.len(), 82);
        assert!(r.interpolated_fraction > 0.8);
    }

    #[test]
    fn resample_keeps_uniform_series() {
        let x: Vec<f64> = (0..20).map(|i| 0.5 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let r = resample_uniform(&x, &y, None).unwrap();
        assert_eq!(r.values, y);
        assert_eq!(r.interpolated_fraction, 0.0);
    }

    #[test]
    fn point_mass_mixture() {
        let mut power = vec![0.0; 20];
        power[6] = 2.0;
        let f: Vec<f64> = (1..=20).map(|k| k as f64 * 0.05).collect();
        let d = SpectralDensityEstimate::new(f.clone(), power).unwrap();
        let g = fit_gmm(&d, 1, 3).unwrap();
        assert!((g.components[0].mean - f[6]).abs() < 1e-12);
        assert!((g.components[0].weight - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_support_points() {
        let d = SpectralDensityEstimate::new(vec![0.1, 0.2, 0.3], vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(fit_gmm(&d, 2, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn factor_draws_are_diagonally_dominant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = InitConfig {
            factor_scale: 2.0,
            ..InitConfig::default()
        };
        for _ in 0..50 {
            let v = draw_factor(&mut rng, 4, &cfg);
            let c = CoregionalizationSet::new(4, vec![v]).unwrap().factor(0);
            for r in 0..4 {
                for k in 0..r {
                    assert!(c[(r, r)].abs() > c[(r, k)].abs());
                }
            }
        }
    }
}

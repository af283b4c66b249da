//! Multi-task covariance functions.
//!
//! Every family maps a pair of (input, task) points to a covariance value and
//! exposes its hyperparameters as a flat vector of unconstrained reals: log
//! transforms for weights, variances and scales, identity for means, delays,
//! phases and coregionalization factor entries.
//!
//! Task blocks are laid out contiguously when assembling a full matrix, but
//! inputs may differ per task, so no Kronecker factorization is used for
//! computation.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernel::{
    component_block_len, matern_shape, matern_shape_dr_over_r, sm_component, BaselineKernelParams,
    ComponentParams, CrossTerm, MaternOrder,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelFamily {
    #[serde(rename = "SE-LMC")]
    SeLmc,
    #[serde(rename = "MATERN-LMC")]
    MaternLmc,
    #[serde(rename = "SM-LMC")]
    SmLmc,
    #[serde(rename = "CSM")]
    Csm,
    #[serde(rename = "MOSM")]
    Mosm,
    #[serde(rename = "GCSM-C")]
    GcsmC,
    #[serde(rename = "GCSM-CC")]
    GcsmCc,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 7] = [
        KernelFamily::SeLmc,
        KernelFamily::MaternLmc,
        KernelFamily::SmLmc,
        KernelFamily::Csm,
        KernelFamily::Mosm,
        KernelFamily::GcsmC,
        KernelFamily::GcsmCc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::SeLmc => "SE-LMC",
            KernelFamily::MaternLmc => "MATERN-LMC",
            KernelFamily::SmLmc => "SM-LMC",
            KernelFamily::Csm => "CSM",
            KernelFamily::Mosm => "MOSM",
            KernelFamily::GcsmC => "GCSM-C",
            KernelFamily::GcsmCc => "GCSM-CC",
        }
    }

    /// Free-parameter count for `q` components, `m` tasks and input dimension `p`.
    pub fn degrees_of_freedom(self, q: usize, m: usize, p: usize) -> usize {
        let tri = (m * m + m) / 2;
        match self {
            KernelFamily::SeLmc | KernelFamily::MaternLmc => tri + p + 1,
            KernelFamily::SmLmc => q * (tri + 2 * p + 1),
            KernelFamily::Csm => 2 * q + m * (2 * q - 1),
            KernelFamily::Mosm => q * m * (3 * p + 2),
            KernelFamily::GcsmC => tri + q * (4 * p + 1),
            KernelFamily::GcsmCc => q * (tri + 4 * p + 1),
        }
    }

    /// Number of stationary terms summed by the kernel.
    pub fn component_count(self, q: usize) -> usize {
        match self {
            KernelFamily::SeLmc | KernelFamily::MaternLmc => 1,
            KernelFamily::SmLmc | KernelFamily::Csm | KernelFamily::Mosm => q,
            KernelFamily::GcsmC | KernelFamily::GcsmCc => q * q,
        }
    }

    pub fn is_spectral(self) -> bool {
        !matches!(self, KernelFamily::SeLmc | KernelFamily::MaternLmc)
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('_', "-");
        KernelFamily::ALL
            .into_iter()
            .find(|f| f.name() == norm)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown kernel family '{s}'")))
    }
}

fn tri_len(m: usize) -> usize {
    m * (m + 1) / 2
}

fn tri_index(row: usize, col: usize) -> usize {
    row * (row + 1) / 2 + col
}

/// Lower-triangular coregionalization factors `C_i`, stored row-major packed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoregionalizationSet {
    tasks: usize,
    factors: Vec<Vec<f64>>,
}

impl CoregionalizationSet {
    pub fn new(tasks: usize, factors: Vec<Vec<f64>>) -> Result<Self> {
        if tasks == 0 || factors.is_empty() {
            return Err(Error::EmptyInput("coregionalization set is empty".into()));
        }
        for f in &factors {
            check_dim(tri_len(tasks), f.len())?;
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("non-finite coregionalization entry".into()));
            }
            if (0..tasks).any(|r| f[tri_index(r, r)] == 0.0) {
                return Err(Error::InvalidParameter(
                    "coregionalization factor has a zero diagonal entry".into(),
                ));
            }
        }
        Ok(Self { tasks, factors })
    }

    /// Builds the set from dense matrices, rejecting entries above the diagonal.
    pub fn from_matrices(factors: &[DMatrix<f64>]) -> Result<Self> {
        let tasks = factors.first().map(|f| f.nrows()).unwrap_or(0);
        let mut packed = Vec::with_capacity(factors.len());
        for f in factors {
            if f.nrows() != tasks || f.ncols() != tasks {
                return Err(Error::Dimension {
                    expected: tasks,
                    got: f.ncols(),
                });
            }
            let mut v = Vec::with_capacity(tri_len(tasks));
            for r in 0..tasks {
                for c in 0..tasks {
                    if c <= r {
                        v.push(f[(r, c)]);
                    } else if f[(r, c)] != 0.0 {
                        return Err(Error::InvalidParameter(
                            "coregionalization factor is not lower triangular".into(),
                        ));
                    }
                }
            }
            packed.push(v);
        }
        Self::new(tasks, packed)
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn entry(&self, factor: usize, row: usize, col: usize) -> f64 {
        if col > row {
            0.0
        } else {
            self.factors[factor][tri_index(row, col)]
        }
    }

    pub fn packed(&self, factor: usize) -> &[f64] {
        &self.factors[factor]
    }

    pub fn factor(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.tasks, self.tasks, |r, c| self.entry(i, r, c))
    }

    /// `B_ij = C_i C_j^T`.
    pub fn coupling(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.factor(i) * self.factor(j).transpose()
    }
}

/// Per-task parameters of one MOSM component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosmChannel {
    pub magnitude: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub delay: Vec<f64>,
    pub phase: f64,
}

/// `channels[q][m]` holds the parameters of task `m` in component `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosmParams {
    pub channels: Vec<Vec<MosmChannel>>,
}

/// Cross-spectral mixture parameters. The phase of the first component is
/// pinned to zero for every task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsmParams {
    pub variance: Vec<f64>,
    pub mean: Vec<f64>,
    /// `weights[q][r]`
    pub weights: Vec<Vec<f64>>,
    /// `phases[q][r]`; row 0 is all zeros.
    pub phases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params")]
pub enum KernelParams {
    #[serde(rename = "SE-LMC")]
    SeLmc {
        coreg: CoregionalizationSet,
        base: BaselineKernelParams,
    },
    #[serde(rename = "MATERN-LMC")]
    MaternLmc {
        coreg: CoregionalizationSet,
        base: BaselineKernelParams,
    },
    #[serde(rename = "SM-LMC")]
    SmLmc {
        coreg: CoregionalizationSet,
        components: Vec<ComponentParams>,
    },
    #[serde(rename = "CSM")]
    Csm(CsmParams),
    #[serde(rename = "MOSM")]
    Mosm(MosmParams),
    #[serde(rename = "GCSM-C")]
    GcsmC {
        coreg: CoregionalizationSet,
        components: Vec<ComponentParams>,
    },
    #[serde(rename = "GCSM-CC")]
    GcsmCc {
        coreg: CoregionalizationSet,
        components: Vec<ComponentParams>,
    },
}

impl KernelParams {
    pub fn family(&self) -> KernelFamily {
        match self {
            KernelParams::SeLmc { .. } => KernelFamily::SeLmc,
            KernelParams::MaternLmc { .. } => KernelFamily::MaternLmc,
            KernelParams::SmLmc { .. } => KernelFamily::SmLmc,
            KernelParams::Csm(_) => KernelFamily::Csm,
            KernelParams::Mosm(_) => KernelFamily::Mosm,
            KernelParams::GcsmC { .. } => KernelFamily::GcsmC,
            KernelParams::GcsmCc { .. } => KernelFamily::GcsmCc,
        }
    }
}

/// Inputs paired with task labels; coordinates are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    coords: Vec<f64>,
    tasks: Vec<usize>,
}

impl Points {
    pub fn new(dim: usize, coords: Vec<f64>, tasks: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("input dimension must be positive".into()));
        }
        check_dim(tasks.len() * dim, coords.len())?;
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite input coordinate".into()));
        }
        Ok(Self { dim, coords, tasks })
    }

    /// One-dimensional inputs.
    pub fn scalar(xs: Vec<f64>, tasks: Vec<usize>) -> Result<Self> {
        Self::new(1, xs, tasks)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn task(&self, i: usize) -> usize {
        self.tasks[i]
    }

    pub fn tasks(&self) -> &[usize] {
        &self.tasks
    }

    pub fn select(&self, indices: &[usize]) -> Points {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        let mut tasks = Vec::with_capacity(indices.len());
        for &i in indices {
            coords.extend_from_slice(self.x(i));
            tasks.push(self.tasks[i]);
        }
        Points {
            dim: self.dim,
            coords,
            tasks,
        }
    }
}

#[derive(Debug, Clone)]
struct MosmCross {
    log_base: f64,
    sum_var: Vec<f64>,
    mean_diff: Vec<f64>,
    cross_var: Vec<f64>,
    cross_mean: Vec<f64>,
    delay: Vec<f64>,
    phase: f64,
}

/// Derived quantities cached at construction so per-entry evaluation is cheap.
#[derive(Debug, Clone)]
enum Prepared {
    Lmc {
        coupling: Vec<f64>,
    },
    SmLmc {
        coupling: Vec<Vec<f64>>,
    },
    Csm,
    Mosm {
        // [q][m * M + n]
        cross: Vec<Vec<MosmCross>>,
    },
    GcsmC {
        coupling: Vec<f64>,
        terms: Vec<CrossTerm>,
    },
    GcsmCc {
        // [i * Q + j][m * M + n]
        coupling: Vec<Vec<f64>>,
        terms: Vec<CrossTerm>,
    },
}

/// A fully specified multi-task kernel.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    family: KernelFamily,
    q: usize,
    m: usize,
    p: usize,
    params: KernelParams,
    prepared: Prepared,
}

impl PartialEq for KernelSpec {
    fn eq(&self, other: &Self) -> bool {
        (self.q, self.m, self.p) == (other.q, other.m, other.p) && self.params == other.params
    }
}

fn coupling_flat(coreg: &CoregionalizationSet, i: usize, j: usize) -> Vec<f64> {
    let m = coreg.tasks();
    let mut out = vec![0.0; m * m];
    for r in 0..m {
        for c in 0..m {
            let k_max = r.min(c);
            out[r * m + c] = (0..=k_max)
                .map(|k| coreg.entry(i, r, k) * coreg.entry(j, c, k))
                .sum();
        }
    }
    out
}

impl KernelSpec {
    pub fn new(q: usize, m: usize, p: usize, params: KernelParams) -> Result<Self> {
        if q == 0 || m == 0 || p == 0 {
            return Err(Error::InvalidParameter(format!(
                "Q, M and P must all be at least 1 (got Q={q}, M={m}, P={p})"
            )));
        }
        let family = params.family();
        let check_coreg = |coreg: &CoregionalizationSet, expected: usize| -> Result<()> {
            check_dim(m, coreg.tasks())?;
            check_dim(expected, coreg.len())
        };
        let check_components = |components: &[ComponentParams]| -> Result<()> {
            check_dim(q, components.len())?;
            for c in components {
                c.validate()?;
                check_dim(p, c.dim())?;
            }
            Ok(())
        };
        let prepared = match &params {
            KernelParams::SeLmc { coreg, base } | KernelParams::MaternLmc { coreg, base } => {
                check_coreg(coreg, 1)?;
                base.validate()?;
                check_dim(p, base.length_scale.len())?;
                Prepared::Lmc {
                    coupling: coupling_flat(coreg, 0, 0),
                }
            }
            KernelParams::SmLmc { coreg, components } => {
                check_coreg(coreg, q)?;
                check_components(components)?;
                Prepared::SmLmc {
                    coupling: (0..q).map(|i| coupling_flat(coreg, i, i)).collect(),
                }
            }
            KernelParams::Csm(csm) => {
                check_dim(q, csm.variance.len())?;
                check_dim(q, csm.mean.len())?;
                check_dim(q, csm.weights.len())?;
                check_dim(q, csm.phases.len())?;
                for qi in 0..q {
                    check_dim(m, csm.weights[qi].len())?;
                    check_dim(m, csm.phases[qi].len())?;
                    if !(csm.variance[qi] > 0.0) || !csm.mean[qi].is_finite() {
                        return Err(Error::InvalidParameter("CSM variance must be positive".into()));
                    }
                    if csm.weights[qi].iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                        return Err(Error::InvalidParameter("CSM weights must be positive".into()));
                    }
                    if csm.phases[qi].iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidParameter("non-finite CSM phase".into()));
                    }
                }
                if csm.phases[0].iter().any(|v| *v != 0.0) {
                    return Err(Error::InvalidParameter(
                        "CSM phases of the first component are pinned to zero".into(),
                    ));
                }
                Prepared::Csm
            }
            KernelParams::Mosm(mosm) => {
                check_dim(q, mosm.channels.len())?;
                let mut cross = Vec::with_capacity(q);
                for comp in &mosm.channels {
                    check_dim(m, comp.len())?;
                    for ch in comp {
                        check_dim(p, ch.mean.len())?;
                        check_dim(p, ch.variance.len())?;
                        check_dim(p, ch.delay.len())?;
                        if ch.variance.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                            return Err(Error::InvalidParameter(
                                "MOSM variances must be positive".into(),
                            ));
                        }
                        let finite = ch.magnitude.is_finite()
                            && ch.phase.is_finite()
                            && ch.mean.iter().chain(&ch.delay).all(|v| v.is_finite());
                        if !finite {
                            return Err(Error::InvalidParameter("non-finite MOSM parameter".into()));
                        }
                    }
                    let mut per_pair = Vec::with_capacity(m * m);
                    for a in comp {
                        for b in comp {
                            per_pair.push(mosm_cross(a, b));
                        }
                    }
                    cross.push(per_pair);
                }
                Prepared::Mosm { cross }
            }
            KernelParams::GcsmC { coreg, components } => {
                check_coreg(coreg, 1)?;
                check_components(components)?;
                Prepared::GcsmC {
                    coupling: coupling_flat(coreg, 0, 0),
                    terms: cross_terms(components),
                }
            }
            KernelParams::GcsmCc { coreg, components } => {
                check_coreg(coreg, q)?;
                check_components(components)?;
                let mut coupling = Vec::with_capacity(q * q);
                for i in 0..q {
                    for j in 0..q {
                        coupling.push(coupling_flat(coreg, i, j));
                    }
                }
                Prepared::GcsmCc {
                    coupling,
                    terms: cross_terms(components),
                }
            }
        };
        Ok(Self {
            family,
            q,
            m,
            p,
            params,
            prepared,
        })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn components(&self) -> usize {
        self.q
    }

    pub fn tasks(&self) -> usize {
        self.m
    }

    pub fn input_dim(&self) -> usize {
        self.p
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// Number of stationary terms enumerated internally.
    pub fn term_count(&self) -> usize {
        match &self.prepared {
            Prepared::Lmc { .. } => 1,
            Prepared::SmLmc { coupling } => coupling.len(),
            Prepared::Csm => self.q,
            Prepared::Mosm { cross } => cross.len(),
            Prepared::GcsmC { terms, .. } | Prepared::GcsmCc { terms, .. } => terms.len(),
        }
    }

    fn check_task(&self, task: usize) -> Result<()> {
        if task >= self.m {
            return Err(Error::TaskOutOfRange {
                index: task,
                tasks: self.m,
            });
        }
        Ok(())
    }

    /// Covariance between `(x, task_m)` and `(x2, task_n)`.
    pub fn eval_pair(&self, x: &[f64], task_m: usize, x2: &[f64], task_n: usize) -> Result<f64> {
        self.check_task(task_m)?;
        self.check_task(task_n)?;
        check_dim(self.p, x.len())?;
        check_dim(self.p, x2.len())?;
        let tau: Vec<f64> = x.iter().zip(x2).map(|(a, b)| a - b).collect();
        Ok(self.eval_lag(&tau, task_m, task_n))
    }

    /// Covariance at lag `tau = x - x'`; task indices are assumed valid.
    pub(crate) fn eval_lag(&self, tau: &[f64], tm: usize, tn: usize) -> f64 {
        let m = self.m;
        match (&self.prepared, &self.params) {
            (Prepared::Lmc { coupling }, KernelParams::SeLmc { base, .. }) => {
                let r2 = scaled_sq(tau, &base.length_scale);
                coupling[tm * m + tn] * base.signal_scale.powi(2) * (-0.5 * r2).exp()
            }
            (Prepared::Lmc { coupling }, KernelParams::MaternLmc { base, .. }) => {
                let r = scaled_sq(tau, &base.length_scale).sqrt();
                coupling[tm * m + tn] * base.signal_scale.powi(2) * matern_shape(base.matern_order, r)
            }
            (Prepared::SmLmc { coupling }, KernelParams::SmLmc { components, .. }) => components
                .iter()
                .zip(coupling)
                .map(|(c, b)| b[tm * m + tn] * sm_component(c, tau))
                .sum(),
            (Prepared::Csm, KernelParams::Csm(csm)) => {
                let (r2, lin) = iso_moments(tau);
                (0..self.q)
                    .map(|qi| {
                        let w = (csm.weights[qi][tm] * csm.weights[qi][tn]).sqrt();
                        let arg = 2.0 * PI * csm.mean[qi] * lin + csm.phases[qi][tm] - csm.phases[qi][tn];
                        w * (-2.0 * PI * PI * csm.variance[qi] * r2).exp() * arg.cos()
                    })
                    .sum()
            }
            (Prepared::Mosm { cross }, KernelParams::Mosm(mosm)) => cross
                .iter()
                .zip(&mosm.channels)
                .map(|(per_pair, chans)| {
                    let c = &per_pair[tm * m + tn];
                    let (base, _, cos_a) = mosm_shape(c, tau);
                    chans[tm].magnitude * chans[tn].magnitude * base * cos_a
                })
                .sum(),
            (Prepared::GcsmC { coupling, terms }, _) => {
                coupling[tm * m + tn] * terms.iter().map(|t| t.value(tau)).sum::<f64>()
            }
            (Prepared::GcsmCc { coupling, terms }, _) => terms
                .iter()
                .zip(coupling)
                .map(|(t, b)| {
                    let bmn = b[tm * m + tn];
                    if bmn == 0.0 {
                        0.0
                    } else {
                        bmn * t.value(tau)
                    }
                })
                .sum(),
            _ => unreachable!("prepared cache always matches the parameter family"),
        }
    }

    /// Adds `coef * dk(tau; tm, tn)/d(free params)` into `grad`.
    pub(crate) fn accumulate_gradient(&self, tau: &[f64], tm: usize, tn: usize, coef: f64, grad: &mut [f64]) {
        let m = self.m;
        let p = self.p;
        let tri = tri_len(m);
        match (&self.prepared, &self.params) {
            (Prepared::Lmc { coupling }, KernelParams::SeLmc { coreg, base })
            | (Prepared::Lmc { coupling }, KernelParams::MaternLmc { coreg, base }) => {
                let f2 = base.signal_scale.powi(2);
                let r2 = scaled_sq(tau, &base.length_scale);
                let (shape, dshape) = match self.family {
                    KernelFamily::SeLmc => {
                        let e = (-0.5 * r2).exp();
                        // d shape / d(ln l_p) = shape * tau_p^2 / l_p^2
                        (e, -e)
                    }
                    _ => {
                        let r = r2.sqrt();
                        (
                            matern_shape(base.matern_order, r),
                            matern_shape_dr_over_r(base.matern_order, r),
                        )
                    }
                };
                let b = coupling[tm * m + tn];
                coreg_gradient(coreg, 0, 0, tm, tn, coef * f2 * shape, grad, 0, 0);
                grad[tri] += coef * b * 2.0 * f2 * shape;
                for (d, t) in tau.iter().enumerate() {
                    let l = base.length_scale[d];
                    // dr/d(ln l) = -t^2 / (l^2 r); both shapes are written as (dk/dr)/r
                    grad[tri + 1 + d] += coef * b * f2 * dshape * (-(t * t) / (l * l));
                }
            }
            (Prepared::SmLmc { coupling }, KernelParams::SmLmc { coreg, components }) => {
                let block = tri + 2 * p + 1;
                for (qi, c) in components.iter().enumerate() {
                    let off = qi * block;
                    let mut lin = 0.0;
                    let mut quad = 0.0;
                    for (d, t) in tau.iter().enumerate() {
                        lin += t * c.mean_freq[d];
                        quad += t * t * c.variance[d];
                    }
                    let env = c.weight * (-2.0 * PI * PI * quad).exp();
                    let (sin_a, cos_a) = (2.0 * PI * lin).sin_cos();
                    let k = env * cos_a;
                    let b = coupling[qi][tm * m + tn];
                    coreg_gradient(coreg, qi, qi, tm, tn, coef * k, grad, off, off);
                    let cb = coef * b;
                    grad[off + tri] += cb * k;
                    for (d, t) in tau.iter().enumerate() {
                        grad[off + tri + 1 + d] += cb * (-env * sin_a * 2.0 * PI * t);
                        grad[off + tri + 1 + p + d] += cb * k * (-2.0 * PI * PI * t * t * c.variance[d]);
                    }
                }
            }
            (Prepared::Csm, KernelParams::Csm(csm)) => {
                let q = self.q;
                let (r2, lin) = iso_moments(tau);
                let task_block = 2 * q - 1;
                let w_off = |r: usize, qi: usize| 2 * q + r * task_block + qi;
                let ph_off = |r: usize, qi: usize| 2 * q + r * task_block + q + qi - 1;
                for qi in 0..q {
                    let w = (csm.weights[qi][tm] * csm.weights[qi][tn]).sqrt();
                    let env = w * (-2.0 * PI * PI * csm.variance[qi] * r2).exp();
                    let arg = 2.0 * PI * csm.mean[qi] * lin + csm.phases[qi][tm] - csm.phases[qi][tn];
                    let (sin_a, cos_a) = arg.sin_cos();
                    let k = env * cos_a;
                    let ks = -env * sin_a;
                    grad[2 * qi] += coef * k * (-2.0 * PI * PI * csm.variance[qi] * r2);
                    grad[2 * qi + 1] += coef * ks * 2.0 * PI * lin;
                    grad[w_off(tm, qi)] += coef * 0.5 * k;
                    grad[w_off(tn, qi)] += coef * 0.5 * k;
                    if qi > 0 {
                        grad[ph_off(tm, qi)] += coef * ks;
                        grad[ph_off(tn, qi)] -= coef * ks;
                    }
                }
            }
            (Prepared::Mosm { cross }, KernelParams::Mosm(mosm)) => {
                let block = 3 * p + 2;
                for (qi, (per_pair, chans)) in cross.iter().zip(&mosm.channels).enumerate() {
                    let c = &per_pair[tm * m + tn];
                    let (a, b) = (&chans[tm], &chans[tn]);
                    let off_m = (qi * m + tm) * block;
                    let off_n = (qi * m + tn) * block;
                    let (base, sin_a, cos_a) = mosm_shape(c, tau);
                    let ww = a.magnitude * b.magnitude;
                    let g = ww * base * cos_a;
                    let gs = -ww * base * sin_a;
                    let cg = coef * g;
                    let cgs = coef * gs;
                    grad[off_m] += coef * b.magnitude * base * cos_a;
                    grad[off_n] += coef * a.magnitude * base * cos_a;
                    for (d, t) in tau.iter().enumerate() {
                        let e = t + c.delay[d];
                        let (sm, sn, s) = (a.variance[d], b.variance[d], c.sum_var[d]);
                        let diff = c.mean_diff[d];
                        let s2 = s * s;
                        grad[off_m + 1 + d] += cg * (-0.5 * diff / s) + cgs * e * sn / s;
                        grad[off_n + 1 + d] += cg * (0.5 * diff / s) + cgs * e * sm / s;
                        let dl_m = 0.5 * sn / s + 0.25 * sm * diff * diff / s2;
                        let de_m = -e * e * sm * sn * sn / s2;
                        let da_m = -e * sm * sn * diff / s2;
                        grad[off_m + 1 + p + d] += cg * (dl_m + de_m) + cgs * da_m;
                        let dl_n = 0.5 * sm / s + 0.25 * sn * diff * diff / s2;
                        let de_n = -e * e * sn * sm * sm / s2;
                        grad[off_n + 1 + p + d] += cg * (dl_n + de_n) - cgs * da_m;
                        let de_t = -e * c.cross_var[d];
                        let da_t = c.cross_mean[d];
                        grad[off_m + 1 + 2 * p + d] += cg * de_t + cgs * da_t;
                        grad[off_n + 1 + 2 * p + d] -= cg * de_t + cgs * da_t;
                    }
                    grad[off_m + 1 + 3 * p] += cgs;
                    grad[off_n + 1 + 3 * p] -= cgs;
                }
            }
            (Prepared::GcsmC { coupling, terms }, KernelParams::GcsmC { coreg, .. }) => {
                let q = self.q;
                let block = component_block_len(p);
                let b = coupling[tm * m + tn];
                let mut total = 0.0;
                for (idx, term) in terms.iter().enumerate() {
                    let (i, j) = (idx / q, idx % q);
                    total += term.accumulate(tau, coef * b, grad, tri + i * block, tri + j * block);
                }
                coreg_gradient(coreg, 0, 0, tm, tn, coef * total, grad, 0, 0);
            }
            (Prepared::GcsmCc { coupling, terms }, KernelParams::GcsmCc { coreg, .. }) => {
                let q = self.q;
                let block = tri + component_block_len(p);
                for (idx, (term, b)) in terms.iter().zip(coupling).enumerate() {
                    let (i, j) = (idx / q, idx % q);
                    let (off_i, off_j) = (i * block, j * block);
                    let g = term.accumulate(tau, coef * b[tm * m + tn], grad, off_i + tri, off_j + tri);
                    coreg_gradient(coreg, i, j, tm, tn, coef * g, grad, off_i, off_j);
                }
            }
            _ => unreachable!("prepared cache always matches the parameter family"),
        }
    }

    /// Flattened unconstrained parameter vector.
    pub fn pack(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.degrees_of_freedom());
        match &self.params {
            KernelParams::SeLmc { coreg, base } | KernelParams::MaternLmc { coreg, base } => {
                out.extend_from_slice(coreg.packed(0));
                out.push(base.signal_scale.ln());
                out.extend(base.length_scale.iter().map(|l| l.ln()));
            }
            KernelParams::SmLmc { coreg, components } => {
                for (qi, c) in components.iter().enumerate() {
                    out.extend_from_slice(coreg.packed(qi));
                    out.push(c.weight.ln());
                    out.extend_from_slice(&c.mean_freq);
                    out.extend(c.variance.iter().map(|v| v.ln()));
                }
            }
            KernelParams::Csm(csm) => {
                for qi in 0..self.q {
                    out.push(csm.variance[qi].ln());
                    out.push(csm.mean[qi]);
                }
                for r in 0..self.m {
                    out.extend((0..self.q).map(|qi| csm.weights[qi][r].ln()));
                    out.extend((1..self.q).map(|qi| csm.phases[qi][r]));
                }
            }
            KernelParams::Mosm(mosm) => {
                for comp in &mosm.channels {
                    for ch in comp {
                        out.push(ch.magnitude);
                        out.extend_from_slice(&ch.mean);
                        out.extend(ch.variance.iter().map(|v| v.ln()));
                        out.extend_from_slice(&ch.delay);
                        out.push(ch.phase);
                    }
                }
            }
            KernelParams::GcsmC { coreg, components } => {
                out.extend_from_slice(coreg.packed(0));
                for c in components {
                    push_component(&mut out, c);
                }
            }
            KernelParams::GcsmCc { coreg, components } => {
                for (qi, c) in components.iter().enumerate() {
                    out.extend_from_slice(coreg.packed(qi));
                    push_component(&mut out, c);
                }
            }
        }
        out
    }

    /// Rebuilds a kernel of the same family and shape from unconstrained values.
    pub fn with_free_params(&self, values: &[f64]) -> Result<KernelSpec> {
        check_dim(self.degrees_of_freedom(), values.len())?;
        let (q, m, p) = (self.q, self.m, self.p);
        let tri = tri_len(m);
        let mut it = values.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        let params = match &self.params {
            KernelParams::SeLmc { base, .. } | KernelParams::MaternLmc { base, .. } => {
                let coreg = CoregionalizationSet::new(m, vec![take(tri)])?;
                let signal_scale = take(1)[0].exp();
                let length_scale = take(p).into_iter().map(f64::exp).collect();
                let base = BaselineKernelParams::new(signal_scale, length_scale, base.matern_order)?;
                if self.family == KernelFamily::SeLmc {
                    KernelParams::SeLmc { coreg, base }
                } else {
                    KernelParams::MaternLmc { coreg, base }
                }
            }
            KernelParams::SmLmc { .. } => {
                let mut factors = Vec::with_capacity(q);
                let mut components = Vec::with_capacity(q);
                for _ in 0..q {
                    factors.push(take(tri));
                    let w = take(1)[0].exp();
                    let mu = take(p);
                    let var = take(p).into_iter().map(f64::exp).collect();
                    components.push(ComponentParams::spectral(w, mu, var)?);
                }
                KernelParams::SmLmc {
                    coreg: CoregionalizationSet::new(m, factors)?,
                    components,
                }
            }
            KernelParams::Csm(_) => {
                let mut variance = Vec::with_capacity(q);
                let mut mean = Vec::with_capacity(q);
                for _ in 0..q {
                    variance.push(take(1)[0].exp());
                    mean.push(take(1)[0]);
                }
                let mut weights = vec![vec![0.0; m]; q];
                let mut phases = vec![vec![0.0; m]; q];
                for r in 0..m {
                    for (qi, v) in take(q).into_iter().enumerate() {
                        weights[qi][r] = v.exp();
                    }
                    for (qi, v) in take(q - 1).into_iter().enumerate() {
                        phases[qi + 1][r] = v;
                    }
                }
                KernelParams::Csm(CsmParams {
                    variance,
                    mean,
                    weights,
                    phases,
                })
            }
            KernelParams::Mosm(_) => {
                let mut channels = Vec::with_capacity(q);
                for _ in 0..q {
                    let mut comp = Vec::with_capacity(m);
                    for _ in 0..m {
                        let magnitude = take(1)[0];
                        let mean = take(p);
                        let variance = take(p).into_iter().map(f64::exp).collect();
                        let delay = take(p);
                        let phase = take(1)[0];
                        comp.push(MosmChannel {
                            magnitude,
                            mean,
                            variance,
                            delay,
                            phase,
                        });
                    }
                    channels.push(comp);
                }
                KernelParams::Mosm(MosmParams { channels })
            }
            KernelParams::GcsmC { .. } => {
                let coreg = CoregionalizationSet::new(m, vec![take(tri)])?;
                let mut components = Vec::with_capacity(q);
                for _ in 0..q {
                    components.push(take_component(&mut take, p)?);
                }
                KernelParams::GcsmC { coreg, components }
            }
            KernelParams::GcsmCc { .. } => {
                let mut factors = Vec::with_capacity(q);
                let mut components = Vec::with_capacity(q);
                for _ in 0..q {
                    factors.push(take(tri));
                    components.push(take_component(&mut take, p)?);
                }
                KernelParams::GcsmCc {
                    coreg: CoregionalizationSet::new(m, factors)?,
                    components,
                }
            }
        };
        KernelSpec::new(q, m, p, params)
    }

    pub fn degrees_of_freedom(&self) -> usize {
        self.family.degrees_of_freedom(self.q, self.m, self.p)
    }

    /// Human-readable names of the free parameters, in packing order.
    pub fn param_labels(&self) -> Vec<String> {
        let (q, m, p) = (self.q, self.m, self.p);
        let coreg = |prefix: &str| -> Vec<String> {
            let mut v = Vec::new();
            for r in 0..m {
                for c in 0..=r {
                    v.push(format!("{prefix}[{r},{c}]"));
                }
            }
            v
        };
        let vec_labels = |name: &str, idx: usize| -> Vec<String> {
            (0..p).map(|d| format!("{name}_{idx}[{d}]")).collect()
        };
        let mut out = Vec::new();
        match self.family {
            KernelFamily::SeLmc | KernelFamily::MaternLmc => {
                out.extend(coreg("C"));
                out.push("ln_signal_scale".into());
                out.extend((0..p).map(|d| format!("ln_length_scale[{d}]")));
            }
            KernelFamily::SmLmc => {
                for qi in 0..q {
                    out.extend(coreg(&format!("C_{qi}")));
                    out.push(format!("ln_w_{qi}"));
                    out.extend(vec_labels("mu", qi));
                    out.extend(vec_labels("ln_sigma", qi));
                }
            }
            KernelFamily::Csm => {
                for qi in 0..q {
                    out.push(format!("ln_sigma_{qi}"));
                    out.push(format!("mu_{qi}"));
                }
                for r in 0..m {
                    out.extend((0..q).map(|qi| format!("ln_w_{qi}[task {r}]")));
                    out.extend((1..q).map(|qi| format!("phi_{qi}[task {r}]")));
                }
            }
            KernelFamily::Mosm => {
                for qi in 0..q {
                    for r in 0..m {
                        let tag = format!("{qi},task {r}");
                        out.push(format!("w_{tag}"));
                        out.extend((0..p).map(|d| format!("mu_{tag}[{d}]")));
                        out.extend((0..p).map(|d| format!("ln_sigma_{tag}[{d}]")));
                        out.extend((0..p).map(|d| format!("theta_{tag}[{d}]")));
                        out.push(format!("phi_{tag}"));
                    }
                }
            }
            KernelFamily::GcsmC | KernelFamily::GcsmCc => {
                if self.family == KernelFamily::GcsmC {
                    out.extend(coreg("C"));
                }
                for qi in 0..q {
                    if self.family == KernelFamily::GcsmCc {
                        out.extend(coreg(&format!("C_{qi}")));
                    }
                    out.push(format!("ln_w_{qi}"));
                    out.extend(vec_labels("mu", qi));
                    out.extend(vec_labels("ln_sigma", qi));
                    out.extend(vec_labels("theta", qi));
                    out.extend(vec_labels("phi", qi));
                }
            }
        }
        out
    }
}

/// Exact free-parameter count of `spec`.
pub fn degrees_of_freedom(spec: &KernelSpec) -> usize {
    spec.degrees_of_freedom()
}

fn push_component(out: &mut Vec<f64>, c: &ComponentParams) {
    out.push(c.weight.ln());
    out.extend_from_slice(&c.mean_freq);
    out.extend(c.variance.iter().map(|v| v.ln()));
    out.extend_from_slice(&c.time_delay);
    out.extend_from_slice(&c.phase_delay);
}

fn take_component(take: &mut impl FnMut(usize) -> Vec<f64>, p: usize) -> Result<ComponentParams> {
    let w = take(1)[0].exp();
    let mu = take(p);
    let var = take(p).into_iter().map(f64::exp).collect();
    let theta = take(p);
    let phi = take(p);
    ComponentParams::new(w, mu, var, theta, phi)
}

fn cross_terms(components: &[ComponentParams]) -> Vec<CrossTerm> {
    let mut terms = Vec::with_capacity(components.len() * components.len());
    for a in components {
        for b in components {
            terms.push(CrossTerm::new(a, b));
        }
    }
    terms
}

fn mosm_cross(a: &MosmChannel, b: &MosmChannel) -> MosmCross {
    let p = a.mean.len();
    let mut log_base = 0.5 * p as f64 * (2.0 * PI).ln();
    let mut sum_var = Vec::with_capacity(p);
    let mut mean_diff = Vec::with_capacity(p);
    let mut cross_var = Vec::with_capacity(p);
    let mut cross_mean = Vec::with_capacity(p);
    let mut delay = Vec::with_capacity(p);
    for d in 0..p {
        let (sa, sb) = (a.variance[d], b.variance[d]);
        let s = sa + sb;
        let diff = a.mean[d] - b.mean[d];
        let cv = 2.0 * sa * sb / s;
        log_base += 0.5 * cv.ln() - 0.25 * diff * diff / s;
        sum_var.push(s);
        mean_diff.push(diff);
        cross_var.push(cv);
        cross_mean.push((sa * b.mean[d] + sb * a.mean[d]) / s);
        delay.push(a.delay[d] - b.delay[d]);
    }
    MosmCross {
        log_base,
        sum_var,
        mean_diff,
        cross_var,
        cross_mean,
        delay,
        phase: a.phase - b.phase,
    }
}

/// `(envelope, sin, cos)` of one MOSM term; the term equals
/// `w_m * w_n * envelope * cos`.
#[inline]
fn mosm_shape(c: &MosmCross, tau: &[f64]) -> (f64, f64, f64) {
    let mut quad = 0.0;
    let mut lin = 0.0;
    for (d, t) in tau.iter().enumerate() {
        let e = t + c.delay[d];
        quad += e * e * c.cross_var[d];
        lin += e * c.cross_mean[d];
    }
    let base = (c.log_base - 0.5 * quad).exp();
    let (s, co) = (lin + c.phase).sin_cos();
    (base, s, co)
}

fn scaled_sq(tau: &[f64], length_scale: &[f64]) -> f64 {
    tau.iter()
        .zip(length_scale)
        .map(|(t, l)| (t / l) * (t / l))
        .sum()
}

/// `(|tau|^2, sum of tau)` for the isotropic CSM component.
fn iso_moments(tau: &[f64]) -> (f64, f64) {
    (tau.iter().map(|t| t * t).sum(), tau.iter().sum())
}

/// Gradient of `coef * (C_i C_j^T)[tm, tn]` with respect to the factor entries.
#[allow(clippy::too_many_arguments)]
#[inline]
fn coreg_gradient(
    coreg: &CoregionalizationSet,
    i: usize,
    j: usize,
    tm: usize,
    tn: usize,
    coef: f64,
    grad: &mut [f64],
    off_i: usize,
    off_j: usize,
) {
    let k_max = tm.min(tn);
    for k in 0..=k_max {
        grad[off_i + tri_index(tm, k)] += coef * coreg.entry(j, tn, k);
        grad[off_j + tri_index(tn, k)] += coef * coreg.entry(i, tm, k);
    }
}

/// Distinct `(lag, task pair)` keys over the upper triangle of a point set.
/// Gridded inputs repeat lags heavily, so kernel values and gradients are
/// computed once per key. `(tau, m, n)` and `(-tau, n, m)` share a key.
#[derive(Debug, Clone)]
pub(crate) struct LagTable {
    pub p: usize,
    pub lags: Vec<f64>,
    pub tasks: Vec<(usize, usize)>,
    /// Key of every pair `(a, b)` with `b >= a`, in row order.
    pub index: Vec<u32>,
}

impl LagTable {
    pub fn new(points: &Points) -> Self {
        let n = points.len();
        let p = points.dim();
        let mut keys: HashMap<(Vec<u64>, usize, usize), u32> = HashMap::new();
        let mut lags = Vec::new();
        let mut tasks = Vec::new();
        let mut index = Vec::with_capacity(n * (n + 1) / 2);
        let mut tau = vec![0.0; p];
        for a in 0..n {
            for b in a..n {
                lag_into(&mut tau, points.x(a), points.x(b));
                let (mut tm, mut tn) = (points.task(a), points.task(b));
                let first = tau.iter().copied().find(|t| *t != 0.0).unwrap_or(0.0);
                if tm > tn || (tm == tn && first < 0.0) {
                    std::mem::swap(&mut tm, &mut tn);
                    tau.iter_mut().for_each(|t| *t = -*t);
                }
                tau.iter_mut().filter(|t| **t == 0.0).for_each(|t| *t = 0.0);
                let bits: Vec<u64> = tau.iter().map(|t| t.to_bits()).collect();
                let next = tasks.len() as u32;
                let id = *keys.entry((bits, tm, tn)).or_insert_with(|| {
                    lags.extend_from_slice(&tau);
                    tasks.push((tm, tn));
                    next
                });
                index.push(id);
            }
        }
        Self {
            p,
            lags,
            tasks,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn lag(&self, key: usize) -> &[f64] {
        &self.lags[key * self.p..(key + 1) * self.p]
    }
}

pub(crate) fn assemble_with(spec: &KernelSpec, points: &Points, table: &LagTable) -> DMatrix<f64> {
    let values: Vec<f64> = (0..table.len())
        .map(|key| {
            let (tm, tn) = table.tasks[key];
            spec.eval_lag(table.lag(key), tm, tn)
        })
        .collect();
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    let mut pair = 0;
    for a in 0..n {
        for b in a..n {
            let v = values[table.index[pair] as usize];
            k[(a, b)] = v;
            k[(b, a)] = v;
            pair += 1;
        }
    }
    k
}

/// Dense symmetric covariance over `points`.
pub fn assemble(spec: &KernelSpec, points: &Points) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(Error::EmptyInput("no input points to assemble".into()));
    }
    check_points(spec, points)?;
    Ok(assemble_with(spec, points, &LagTable::new(points)))
}

/// Rectangular covariance between two point sets (`rows` by `cols`).
pub fn cross_covariance(spec: &KernelSpec, rows: &Points, cols: &Points) -> Result<DMatrix<f64>> {
    check_points(spec, rows)?;
    check_points(spec, cols)?;
    let mut k = DMatrix::zeros(rows.len(), cols.len());
    let mut tau = vec![0.0; spec.p];
    for a in 0..rows.len() {
        for b in 0..cols.len() {
            lag_into(&mut tau, rows.x(a), cols.x(b));
            k[(a, b)] = spec.eval_lag(&tau, rows.task(a), cols.task(b));
        }
    }
    Ok(k)
}

pub(crate) fn check_points(spec: &KernelSpec, points: &Points) -> Result<()> {
    check_dim(spec.p, points.dim())?;
    if let Some(&t) = points.tasks().iter().find(|t| **t >= spec.m) {
        return Err(Error::TaskOutOfRange {
            index: t,
            tasks: spec.m,
        });
    }
    Ok(())
}

#[inline]
pub(crate) fn lag_into(tau: &mut [f64], x: &[f64], y: &[f64]) {
    for ((t, a), b) in tau.iter_mut().zip(x).zip(y) {
        *t = a - b;
    }
}

/// Draws a kernel of the given family and sizes with parameters from
/// moderate ranges: frequencies in `[0.05, 0.5]`, spectral variances in
/// `[0.002, 0.05]`, delays in `[-1, 1]` and phases in `[-pi/2, pi/2]`.
pub fn random_spec<R: Rng + ?Sized>(
    family: KernelFamily,
    q: usize,
    m: usize,
    p: usize,
    rng: &mut R,
) -> Result<KernelSpec> {
    use std::f64::consts::FRAC_PI_2;
    let vec = |rng: &mut R, lo: f64, hi: f64| -> Vec<f64> { (0..p).map(|_| rng.random_range(lo..hi)).collect() };
    let component = |rng: &mut R| -> Result<ComponentParams> {
        ComponentParams::new(
            rng.random_range(0.2..1.5),
            vec(rng, 0.05, 0.5),
            vec(rng, 0.002, 0.05),
            vec(rng, -1.0, 1.0),
            vec(rng, -FRAC_PI_2 / p as f64, FRAC_PI_2 / p as f64),
        )
    };
    let coreg = |rng: &mut R, count: usize| -> Result<CoregionalizationSet> {
        let factors = (0..count)
            .map(|_| {
                let mut f = Vec::with_capacity(tri_len(m));
                for r in 0..m {
                    for c in 0..=r {
                        let v = if c == r { rng.random_range(0.3..1.2) } else { rng.random_range(-0.8..0.8) };
                        f.push(v);
                    }
                }
                f
            })
            .collect();
        CoregionalizationSet::new(m, factors)
    };
    let params = match family {
        KernelFamily::SeLmc | KernelFamily::MaternLmc => {
            let order = if family == KernelFamily::SeLmc {
                MaternOrder::FiveHalves
            } else {
                [MaternOrder::Half, MaternOrder::ThreeHalves, MaternOrder::FiveHalves][rng.random_range(0..3)]
            };
            let base = BaselineKernelParams::new(rng.random_range(0.3..1.5), vec(rng, 0.5, 3.0), order)?;
            let coreg = coreg(rng, 1)?;
            if family == KernelFamily::SeLmc {
                KernelParams::SeLmc { coreg, base }
            } else {
                KernelParams::MaternLmc { coreg, base }
            }
        }
        KernelFamily::SmLmc | KernelFamily::GcsmC | KernelFamily::GcsmCc => {
            let components = (0..q).map(|_| component(rng)).collect::<Result<Vec<_>>>()?;
            match family {
                KernelFamily::SmLmc => KernelParams::SmLmc {
                    coreg: coreg(rng, q)?,
                    components: components
                        .into_iter()
                        .map(|c| ComponentParams::spectral(c.weight, c.mean_freq, c.variance))
                        .collect::<Result<Vec<_>>>()?,
                },
                KernelFamily::GcsmC => KernelParams::GcsmC {
                    coreg: coreg(rng, 1)?,
                    components,
                },
                _ => KernelParams::GcsmCc {
                    coreg: coreg(rng, q)?,
                    components,
                },
            }
        }
        KernelFamily::Csm => KernelParams::Csm(CsmParams {
            variance: (0..q).map(|_| rng.random_range(0.002..0.05)).collect(),
            mean: (0..q).map(|_| rng.random_range(0.05..0.5)).collect(),
            weights: (0..q).map(|_| (0..m).map(|_| rng.random_range(0.2..1.5)).collect()).collect(),
            phases: (0..q)
                .map(|qi| {
                    (0..m)
                        .map(|_| if qi == 0 { 0.0 } else { rng.random_range(-FRAC_PI_2..FRAC_PI_2) })
                        .collect()
                })
                .collect(),
        }),
        KernelFamily::Mosm => KernelParams::Mosm(MosmParams {
            channels: (0..q)
                .map(|_| {
                    (0..m)
                        .map(|_| MosmChannel {
                            magnitude: rng.random_range(0.2..1.5),
                            mean: vec(rng, 0.05, 0.5),
                            variance: vec(rng, 0.002, 0.05),
                            delay: vec(rng, -1.0, 1.0),
                            phase: rng.random_range(-FRAC_PI_2..FRAC_PI_2),
                        })
                        .collect()
                })
                .collect(),
        }),
    };
    KernelSpec::new(q, m, p, params)
}

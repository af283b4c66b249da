//! Exact Gaussian-process inference on dense covariance matrices.

use std::f64::consts::PI;

use log::{debug, warn};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::multitask::{assemble, assemble_with, check_points, LagTable, cross_covariance, lag_into, KernelSpec, Points};

/// Relative jitter levels tried after a plain factorization fails, as
/// multiples of the mean diagonal.
pub const JITTER_LADDER: [f64; 7] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

/// Observation noise variance, shared by all tasks or one per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    Shared(f64),
    PerTask(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Shared,
    PerTask,
}

impl Noise {
    pub fn uniform(mode: NoiseMode, variance: f64, tasks: usize) -> Self {
        match mode {
            NoiseMode::Shared => Noise::Shared(variance),
            NoiseMode::PerTask => Noise::PerTask(vec![variance; tasks]),
        }
    }

    pub fn mode(&self) -> NoiseMode {
        match self {
            Noise::Shared(_) => NoiseMode::Shared,
            Noise::PerTask(_) => NoiseMode::PerTask,
        }
    }

    pub fn variance(&self, task: usize) -> f64 {
        match self {
            Noise::Shared(v) => *v,
            Noise::PerTask(v) => v[task],
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Noise::Shared(_) => 1,
            Noise::PerTask(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, tasks: usize) -> Result<()> {
        if let Noise::PerTask(v) = self {
            check_dim(tasks, v.len())?;
        }
        let ok = match self {
            Noise::Shared(v) => *v > 0.0 && v.is_finite(),
            Noise::PerTask(v) => v.iter().all(|x| *x > 0.0 && x.is_finite()),
        };
        if !ok {
            return Err(Error::InvalidParameter("noise variance must be positive".into()));
        }
        Ok(())
    }

    /// Log-variances in packing order.
    pub fn pack(&self) -> Vec<f64> {
        match self {
            Noise::Shared(v) => vec![v.ln()],
            Noise::PerTask(v) => v.iter().map(|x| x.ln()).collect(),
        }
    }

    pub fn unpack(mode: NoiseMode, values: &[f64]) -> Noise {
        match mode {
            NoiseMode::Shared => Noise::Shared(values[0].exp()),
            NoiseMode::PerTask => Noise::PerTask(values.iter().map(|v| v.exp()).collect()),
        }
    }
}

/// Cholesky factor of a covariance matrix plus whatever jitter it needed.
#[derive(Debug, Clone)]
pub struct Factorization {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl Factorization {
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Factorizes `k`, first as given and then with escalating diagonal jitter.
pub fn jittered_cholesky(k: &DMatrix<f64>) -> Result<Factorization> {
    if let Some(chol) = Cholesky::new(k.clone()) {
        return Ok(Factorization { chol, jitter: 0.0 });
    }
    let n = k.nrows().max(1);
    let mean_diag = (k.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut tried = Vec::with_capacity(JITTER_LADDER.len());
    for rel in JITTER_LADDER {
        let jitter = rel * mean_diag;
        tried.push(jitter);
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(kj) {
            debug!("cholesky succeeded with jitter {jitter:.3e}");
            return Ok(Factorization { chol, jitter });
        }
        debug!("cholesky failed with jitter {jitter:.3e}, escalating");
    }
    Err(Error::Cholesky { ladder: tried })
}

/// `K + noise` for the given points.
pub fn noisy_covariance(spec: &KernelSpec, noise: &Noise, points: &Points) -> Result<DMatrix<f64>> {
    noise.validate(spec.tasks())?;
    let k = assemble(spec, points)?;
    Ok(add_noise(k, noise, points))
}

pub(crate) fn noisy_covariance_with(
    spec: &KernelSpec,
    noise: &Noise,
    points: &Points,
    table: &LagTable,
) -> Result<DMatrix<f64>> {
    noise.validate(spec.tasks())?;
    Ok(add_noise(assemble_with(spec, points, table), noise, points))
}

fn add_noise(mut k: DMatrix<f64>, noise: &Noise, points: &Points) -> DMatrix<f64> {
    for i in 0..points.len() {
        k[(i, i)] += noise.variance(points.task(i));
    }
    k
}

/// The three additive pieces of the negative log marginal likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlmlTerms {
    pub data_fit: f64,
    pub complexity: f64,
    pub constant: f64,
}

impl NlmlTerms {
    pub fn total(&self) -> f64 {
        self.data_fit + self.complexity + self.constant
    }

    pub(crate) fn from_factor(f: &Factorization, y: &DVector<f64>) -> (Self, DVector<f64>) {
        let alpha = f.chol.solve(y);
        let terms = NlmlTerms {
            data_fit: 0.5 * y.dot(&alpha),
            complexity: 0.5 * f.log_det(),
            constant: 0.5 * y.len() as f64 * (2.0 * PI).ln(),
        };
        (terms, alpha)
    }
}

pub fn nlml_terms(spec: &KernelSpec, noise: &Noise, points: &Points, y: &[f64]) -> Result<NlmlTerms> {
    check_dim(points.len(), y.len())?;
    let k = noisy_covariance(spec, noise, points)?;
    let f = jittered_cholesky(&k)?;
    Ok(NlmlTerms::from_factor(&f, &DVector::from_column_slice(y)).0)
}

/// Negative log marginal likelihood including the `N/2 ln 2 pi` constant.
pub fn nlml(spec: &KernelSpec, noise: &Noise, points: &Points, y: &[f64]) -> Result<f64> {
    Ok(nlml_terms(spec, noise, points, y)?.total())
}

/// Posterior mean and latent-function variance at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// A conditioned GP: kernel, noise, training data and cached factorization.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    spec: KernelSpec,
    noise: Noise,
    points: Points,
    y: Vec<f64>,
    factor: Factorization,
    alpha: DVector<f64>,
    terms: NlmlTerms,
}

impl TrainedModel {
    pub fn fit(spec: KernelSpec, noise: Noise, points: Points, y: Vec<f64>) -> Result<Self> {
        check_dim(points.len(), y.len())?;
        let k = noisy_covariance(&spec, &noise, &points)?;
        let factor = jittered_cholesky(&k)?;
        let (terms, alpha) = NlmlTerms::from_factor(&factor, &DVector::from_column_slice(&y));
        Ok(Self {
            spec,
            noise,
            points,
            y,
            factor,
            alpha,
            terms,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn noise(&self) -> &Noise {
        &self.noise
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    pub fn factor(&self) -> &Factorization {
        &self.factor
    }

    pub fn nlml(&self) -> f64 {
        self.terms.total()
    }

    pub fn nlml_terms(&self) -> NlmlTerms {
        self.terms
    }

    pub fn predict(&self, x: &[f64], task: usize) -> Result<Prediction> {
        let pts = Points::new(self.spec.input_dim(), x.to_vec(), vec![task])?;
        Ok(self.predict_many(&pts)?[0])
    }

    pub fn predict_many(&self, targets: &Points) -> Result<Vec<Prediction>> {
        check_points(&self.spec, targets)?;
        if targets.is_empty() {
            return Ok(Vec::new());
        }
        // rows: training points, columns: targets
        let k_star = cross_covariance(&self.spec, &self.points, targets)?;
        let means = k_star.transpose() * &self.alpha;
        let l = self.factor.chol.l();
        let v = l
            .solve_lower_triangular(&k_star)
            .ok_or_else(|| Error::Numerical("singular cholesky factor".into()))?;
        let mut tau = vec![0.0; self.spec.input_dim()];
        let mut out = Vec::with_capacity(targets.len());
        for j in 0..targets.len() {
            let task = targets.task(j);
            lag_into(&mut tau, targets.x(j), targets.x(j));
            let prior = self.spec.eval_lag(&tau, task, task);
            let reduction: f64 = v.column(j).iter().map(|e| e * e).sum();
            let mut variance = prior - reduction;
            if variance < 0.0 {
                let tol = 1e-10 * prior.abs().max(1.0);
                if variance < -tol {
                    return Err(Error::Numerical(format!(
                        "negative predictive variance {variance:.3e} at target {j}"
                    )));
                }
                warn!("clamping predictive variance {variance:.3e} to zero");
                variance = 0.0;
            }
            out.push(Prediction {
                mean: means[j],
                variance,
            });
        }
        Ok(out)
    }
}

/// Draws `L z` with `z` standard normal and `L` the (jittered) Cholesky factor
/// of the prior covariance at `points`.
pub fn sample_prior(spec: &KernelSpec, points: &Points, seed: u64) -> Result<Vec<f64>> {
    let k = assemble(spec, points)?;
    let f = jittered_cholesky(&k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_iterator(
        points.len(),
        (0..points.len()).map(|_| StandardNormal.sample(&mut rng)),
    );
    Ok((f.chol.l() * z).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{BaselineKernelParams, MaternOrder};
    use crate::multitask::{CoregionalizationSet, KernelParams};

    fn se_spec(scale: f64, length: f64) -> KernelSpec {
        KernelSpec::new(
            1,
            1,
            1,
            KernelParams::SeLmc {
                coreg: CoregionalizationSet::new(1, vec![vec![1.0]]).unwrap(),
                base: BaselineKernelParams::new(scale, vec![length], MaternOrder::Half).unwrap(),
            },
        )
        .unwrap()
    }

    #[test]
    fn single_point_nlml() {
        // K + noise = 1 + 1 = 2 with y = 0
        let spec = se_spec(1.0, 1.0);
        let pts = Points::scalar(vec![0.0], vec![0]).unwrap();
        let v = nlml(&spec, &Noise::Shared(1.0), &pts, &[0.0]).unwrap();
        let want = 0.5 * 2f64.ln() + 0.5 * (2.0 * PI).ln();
        assert!((v - want).abs() < 1e-14);
    }

    #[test]
    fn scaling_targets_scales_only_data_fit() {
        let spec = se_spec(1.2, 0.8);
        let pts = Points::scalar(vec![0.0, 0.4, 1.1, 2.0], vec![0; 4]).unwrap();
        let y = [0.3, -0.2, 0.9, 0.1];
        let y3: Vec<f64> = y.iter().map(|v| 3.0 * v).collect();
        let a = nlml_terms(&spec, &Noise::Shared(0.1), &pts, &y).unwrap();
        let b = nlml_terms(&spec, &Noise::Shared(0.1), &pts, &y3).unwrap();
        assert!((b.data_fit - 9.0 * a.data_fit).abs() < 1e-12);
        assert_eq!(a.complexity, b.complexity);
        assert_eq!(a.constant, b.constant);
    }

    #[test]
    fn jitter_escalates_on_singular_matrix() {
        let k = DMatrix::from_element(3, 3, 1.0);
        let f = jittered_cholesky(&k).unwrap();
        assert!(f.jitter > 0.0);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -5.0]);
        match jittered_cholesky(&bad) {
            Err(Error::Cholesky { ladder }) => assert_eq!(ladder.len(), JITTER_LADDER.len()),
            other => panic!("expected cholesky error, got {other:?}"),
        }
    }

    #[test]
    fn noise_pack_round_trip() {
        let n = Noise::PerTask(vec![0.1, 0.02, 3.0]);
        let back = Noise::unpack(NoiseMode::PerTask, &n.pack());
        for t in 0..3 {
            assert!((back.variance(t) - n.variance(t)).abs() < 1e-15 * n.variance(t).max(1.0));
        }
        assert!(Noise::Shared(-1.0).validate(1).is_err());
        assert!(Noise::PerTask(vec![0.1]).validate(2).is_err());
    }

    #[test]
    fn prediction_rejects_bad_task() {
        let spec = se_spec(1.0, 1.0);
        let pts = Points::scalar(vec![0.0, 1.0], vec![0, 0]).unwrap();
        let model = TrainedModel::fit(spec, Noise::Shared(0.1), pts, vec![0.0, 1.0]).unwrap();
        assert!(matches!(model.predict(&[0.5], 1), Err(Error::TaskOutOfRange { .. })));
    }
}

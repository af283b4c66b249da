//! Single-task stationary kernels.
//!
//! Spectral mixture (SM) and generalized convolution spectral mixture (GCSM)
//! kernels are parameterized in the frequency domain: each base component is a
//! Gaussian spectral density with weight `w`, mean frequency `mu` (cycles per
//! input unit) and diagonal variance `sigma`. GCSM additionally carries a time
//! delay and a phase delay per component and sums over all `Q * Q` ordered
//! pairs of base components.
//!
//! Squared-exponential and Matérn kernels are provided as baselines together
//! with their closed-form spectral densities.

use std::f64::consts::{LN_2, PI};

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// One Gaussian base component in the frequency domain.
///
/// `phase_delay` holds one entry per input dimension; the effective phase
/// offset entering the cosine is their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    pub weight: f64,
    pub mean_freq: Vec<f64>,
    pub variance: Vec<f64>,
    pub time_delay: Vec<f64>,
    pub phase_delay: Vec<f64>,
}

impl ComponentParams {
    pub fn new(
        weight: f64,
        mean_freq: Vec<f64>,
        variance: Vec<f64>,
        time_delay: Vec<f64>,
        phase_delay: Vec<f64>,
    ) -> Result<Self> {
        let c = Self {
            weight,
            mean_freq,
            variance,
            time_delay,
            phase_delay,
        };
        c.validate()?;
        Ok(c)
    }

    /// Component without time or phase delay.
    pub fn spectral(weight: f64, mean_freq: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        let p = mean_freq.len();
        Self::new(weight, mean_freq, variance, vec![0.0; p], vec![0.0; p])
    }

    pub fn dim(&self) -> usize {
        self.mean_freq.len()
    }

    pub fn effective_phase(&self) -> f64 {
        self.phase_delay.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.dim();
        if p == 0 {
            return Err(Error::InvalidParameter("component has zero dimension".into()));
        }
        check_dim(p, self.variance.len())?;
        check_dim(p, self.time_delay.len())?;
        check_dim(p, self.phase_delay.len())?;
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "component weight must be positive, got {}",
                self.weight
            )));
        }
        if let Some(v) = self.variance.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "component variance must be positive, got {v}"
            )));
        }
        let finite = self
            .mean_freq
            .iter()
            .chain(&self.time_delay)
            .chain(&self.phase_delay)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite component parameter".into()));
        }
        Ok(())
    }
}

/// Quantities describing the convolution of two base components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossComponentParams {
    pub cross_weight: f64,
    pub cross_amplitude: f64,
    pub cross_mean: Vec<f64>,
    pub cross_variance: Vec<f64>,
    pub cross_time_delay: Vec<f64>,
    pub cross_phase_delay: f64,
}

pub fn cross_params(a: &ComponentParams, b: &ComponentParams) -> Result<CrossComponentParams> {
    check_dim(a.dim(), b.dim())?;
    let p = a.dim();
    let mut log_amp = 0.0;
    let mut quad = 0.0;
    let mut cross_mean = Vec::with_capacity(p);
    let mut cross_variance = Vec::with_capacity(p);
    let mut cross_time_delay = Vec::with_capacity(p);
    for d in 0..p {
        let (si, sj) = (a.variance[d], b.variance[d]);
        let (mi, mj) = (a.mean_freq[d], b.mean_freq[d]);
        let sum = si + sj;
        // determinant ratio |2 sqrt(Si Sj) / (Si + Sj)|^(1/2), one diagonal entry at a time
        log_amp += 0.5 * (2.0 * (si * sj).sqrt() / sum).ln();
        quad += (mi - mj) * (mi - mj) / sum;
        cross_mean.push((si * mj + sj * mi) / sum);
        cross_variance.push(2.0 * si * sj / sum);
        cross_time_delay.push(a.time_delay[d] - b.time_delay[d]);
    }
    let cross_amplitude = if a.mean_freq == b.mean_freq && a.variance == b.variance {
        1.0
    } else {
        (log_amp - 0.25 * quad).exp().min(1.0)
    };
    Ok(CrossComponentParams {
        cross_weight: (a.weight * b.weight).sqrt(),
        cross_amplitude,
        cross_mean,
        cross_variance,
        cross_time_delay,
        cross_phase_delay: a.effective_phase() - b.effective_phase(),
    })
}

fn check_components(components: &[ComponentParams], tau: &[f64]) -> Result<()> {
    if components.is_empty() {
        return Err(Error::EmptyInput("kernel has no components".into()));
    }
    for c in components {
        check_dim(tau.len(), c.dim())?;
    }
    Ok(())
}

/// Spectral mixture kernel value at lag `tau`; delays are ignored.
pub fn sm_eval(components: &[ComponentParams], tau: &[f64]) -> Result<f64> {
    check_components(components, tau)?;
    Ok(components.iter().map(|c| sm_component(c, tau)).sum())
}

pub(crate) fn sm_component(c: &ComponentParams, tau: &[f64]) -> f64 {
    let mut phase = 0.0;
    let mut expo = 0.0;
    for (d, t) in tau.iter().enumerate() {
        phase += t * c.mean_freq[d];
        expo += t * t * c.variance[d];
    }
    c.weight * (-2.0 * PI * PI * expo).exp() * (2.0 * PI * phase).cos()
}

/// One term of the GCSM double sum, evaluated from its cross parameters.
pub fn gcsm_pair_eval(cp: &CrossComponentParams, tau: &[f64]) -> f64 {
    let mut quad = 0.0;
    let mut lin = 0.0;
    for (d, t) in tau.iter().enumerate() {
        let shifted = 2.0 * t - cp.cross_time_delay[d];
        quad += shifted * shifted * cp.cross_variance[d];
        lin += shifted * cp.cross_mean[d];
    }
    cp.cross_weight
        * cp.cross_amplitude
        * (-0.5 * PI * PI * quad).exp()
        * (PI * (lin - cp.cross_phase_delay)).cos()
}

/// Generalized convolution spectral mixture kernel value at lag `tau`.
pub fn gcsm_eval(components: &[ComponentParams], tau: &[f64]) -> Result<f64> {
    check_components(components, tau)?;
    let mut total = 0.0;
    for a in components {
        for b in components {
            total += gcsm_pair_eval(&cross_params(a, b)?, tau);
        }
    }
    Ok(total)
}

/// Complex cross spectral density of one component pair at frequency `s`.
pub fn gcsm_cross_density(cp: &CrossComponentParams, s: &[f64]) -> Complex64 {
    let p = s.len() as f64;
    let mut quad = 0.0;
    let mut log_det = 0.0;
    let mut delay = 0.0;
    for (d, sv) in s.iter().enumerate() {
        let diff = sv - cp.cross_mean[d];
        quad += diff * diff / cp.cross_variance[d];
        log_det += cp.cross_variance[d].ln();
        delay += cp.cross_time_delay[d] * sv;
    }
    let magnitude = cp.cross_weight
        * cp.cross_amplitude
        * (-0.5 * quad - 0.5 * (p * (2.0 * PI).ln() + log_det)).exp();
    Complex64::from_polar(magnitude, -PI * (delay + cp.cross_phase_delay))
}

/// Symmetrized GCSM spectral density summed over all component pairs.
/// Returns the complex value; its imaginary part vanishes analytically.
pub fn gcsm_spectral_density(components: &[ComponentParams], s: &[f64]) -> Result<Complex64> {
    check_components(components, s)?;
    let neg: Vec<f64> = s.iter().map(|v| -v).collect();
    let mut total = Complex64::new(0.0, 0.0);
    for a in components {
        for b in components {
            let cp = cross_params(a, b)?;
            total += 0.5 * (gcsm_cross_density(&cp, s) + gcsm_cross_density(&cp, &neg));
        }
    }
    Ok(total)
}

/// Symmetrized Gaussian-mixture spectral density of the SM kernel.
pub fn sm_spectral_density(components: &[ComponentParams], s: &[f64]) -> Result<f64> {
    check_components(components, s)?;
    let mut total = 0.0;
    for c in components {
        let mut plus = 0.0;
        let mut minus = 0.0;
        let mut log_norm = 0.0;
        for (d, sv) in s.iter().enumerate() {
            let v = c.variance[d];
            plus += (sv - c.mean_freq[d]).powi(2) / v;
            minus += (sv + c.mean_freq[d]).powi(2) / v;
            log_norm += -0.5 * (2.0 * PI * v).ln();
        }
        total += c.weight * 0.5 * ((log_norm - 0.5 * plus).exp() + (log_norm - 0.5 * minus).exp());
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternOrder {
    #[serde(rename = "1/2")]
    Half,
    #[serde(rename = "3/2")]
    ThreeHalves,
    #[serde(rename = "5/2")]
    FiveHalves,
}

impl MaternOrder {
    pub fn nu(self) -> f64 {
        match self {
            MaternOrder::Half => 0.5,
            MaternOrder::ThreeHalves => 1.5,
            MaternOrder::FiveHalves => 2.5,
        }
    }
}

/// Parameters shared by the squared-exponential and Matérn baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineKernelParams {
    pub signal_scale: f64,
    pub length_scale: Vec<f64>,
    pub matern_order: MaternOrder,
}

impl BaselineKernelParams {
    pub fn new(signal_scale: f64, length_scale: Vec<f64>, matern_order: MaternOrder) -> Result<Self> {
        let params = Self {
            signal_scale,
            length_scale,
            matern_order,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length_scale.is_empty() {
            return Err(Error::InvalidParameter("length scale vector is empty".into()));
        }
        let ok = self.signal_scale > 0.0
            && self.signal_scale.is_finite()
            && self.length_scale.iter().all(|l| *l > 0.0 && l.is_finite());
        if !ok {
            return Err(Error::InvalidParameter("baseline scales must be positive".into()));
        }
        Ok(())
    }

    fn scaled_sq_dist(&self, tau: &[f64]) -> Result<f64> {
        check_dim(self.length_scale.len(), tau.len())?;
        Ok(tau
            .iter()
            .zip(&self.length_scale)
            .map(|(t, l)| (t / l) * (t / l))
            .sum())
    }
}

pub fn se_eval(params: &BaselineKernelParams, tau: &[f64]) -> Result<f64> {
    let r2 = params.scaled_sq_dist(tau)?;
    Ok(params.signal_scale.powi(2) * (-0.5 * r2).exp())
}

pub fn matern_eval(params: &BaselineKernelParams, tau: &[f64]) -> Result<f64> {
    let r = params.scaled_sq_dist(tau)?.sqrt();
    Ok(params.signal_scale.powi(2) * matern_shape(params.matern_order, r))
}

/// Matérn correlation at scaled distance `r`.
pub(crate) fn matern_shape(order: MaternOrder, r: f64) -> f64 {
    match order {
        MaternOrder::Half => (-r).exp(),
        MaternOrder::ThreeHalves => {
            let a = 3f64.sqrt() * r;
            (1.0 + a) * (-a).exp()
        }
        MaternOrder::FiveHalves => {
            let a = 5f64.sqrt() * r;
            (1.0 + a + a * a / 3.0) * (-a).exp()
        }
    }
}

/// `(d shape / dr) / r`, finite at `r = 0` except for order 1/2 where the
/// caller only needs it for `r > 0`.
pub(crate) fn matern_shape_dr_over_r(order: MaternOrder, r: f64) -> f64 {
    match order {
        MaternOrder::Half => {
            if r > 0.0 {
                -(-r).exp() / r
            } else {
                0.0
            }
        }
        MaternOrder::ThreeHalves => -3.0 * (-(3f64.sqrt()) * r).exp(),
        MaternOrder::FiveHalves => {
            let a = 5f64.sqrt() * r;
            -(5.0 / 3.0) * (1.0 + a) * (-a).exp()
        }
    }
}

/// Spectral density of the SE kernel (separable across dimensions).
pub fn se_spectral_density(params: &BaselineKernelParams, s: &[f64]) -> Result<f64> {
    check_dim(params.length_scale.len(), s.len())?;
    let mut value = params.signal_scale.powi(2);
    for (sv, l) in s.iter().zip(&params.length_scale) {
        value *= (2.0 * PI).sqrt() * l * (-2.0 * PI * PI * l * l * sv * sv).exp();
    }
    Ok(value)
}

/// Spectral density of the one-dimensional Matérn kernel.
pub fn matern_spectral_density(params: &BaselineKernelParams, s: f64) -> Result<f64> {
    check_dim(1, params.length_scale.len())?;
    let l = params.length_scale[0];
    let omega2 = (2.0 * PI * s).powi(2);
    let f2 = params.signal_scale.powi(2);
    Ok(match params.matern_order {
        MaternOrder::Half => {
            let lam = 1.0 / l;
            f2 * 2.0 * lam / (lam * lam + omega2)
        }
        MaternOrder::ThreeHalves => {
            let lam = 3f64.sqrt() / l;
            f2 * 4.0 * lam.powi(3) / (lam * lam + omega2).powi(2)
        }
        MaternOrder::FiveHalves => {
            let lam = 5f64.sqrt() / l;
            f2 * (16.0 / 3.0) * lam.powi(5) / (lam * lam + omega2).powi(3)
        }
    })
}

/// Precomputed convolution term between base components `i` and `j`, used by
/// the covariance assembly and its gradient.
///
/// Gradients are taken with respect to the unconstrained block layout
/// `[ln w, mu (P), ln sigma (P), theta (P), phi (P)]` of each component.
#[derive(Debug, Clone)]
pub(crate) struct CrossTerm {
    log_coef: f64,
    var_i: Vec<f64>,
    var_j: Vec<f64>,
    sum_var: Vec<f64>,
    mean_diff: Vec<f64>,
    cross_var: Vec<f64>,
    cross_mean: Vec<f64>,
    delay: Vec<f64>,
    phase: f64,
}

/// Number of unconstrained parameters in one component block.
pub(crate) fn component_block_len(p: usize) -> usize {
    4 * p + 1
}

impl CrossTerm {
    pub(crate) fn new(a: &ComponentParams, b: &ComponentParams) -> Self {
        let p = a.dim();
        let mut log_coef = 0.5 * (a.weight.ln() + b.weight.ln());
        let mut sum_var = Vec::with_capacity(p);
        let mut mean_diff = Vec::with_capacity(p);
        let mut cross_var = Vec::with_capacity(p);
        let mut cross_mean = Vec::with_capacity(p);
        let mut delay = Vec::with_capacity(p);
        for d in 0..p {
            let (si, sj) = (a.variance[d], b.variance[d]);
            let s = si + sj;
            let diff = a.mean_freq[d] - b.mean_freq[d];
            log_coef += 0.5 * LN_2 + 0.25 * (si.ln() + sj.ln()) - 0.5 * s.ln() - 0.25 * diff * diff / s;
            sum_var.push(s);
            mean_diff.push(diff);
            cross_var.push(2.0 * si * sj / s);
            cross_mean.push((si * b.mean_freq[d] + sj * a.mean_freq[d]) / s);
            delay.push(a.time_delay[d] - b.time_delay[d]);
        }
        Self {
            log_coef,
            var_i: a.variance.clone(),
            var_j: b.variance.clone(),
            sum_var,
            mean_diff,
            cross_var,
            cross_mean,
            delay,
            phase: a.effective_phase() - b.effective_phase(),
        }
    }

    #[inline]
    pub(crate) fn value(&self, tau: &[f64]) -> f64 {
        let mut quad = 0.0;
        let mut lin = 0.0;
        for (d, t) in tau.iter().enumerate() {
            let shifted = 2.0 * t - self.delay[d];
            quad += shifted * shifted * self.cross_var[d];
            lin += shifted * self.cross_mean[d];
        }
        (self.log_coef - 0.5 * PI * PI * quad).exp() * (PI * (lin - self.phase)).cos()
    }

    /// Adds `coef * d(term)/d(params)` into `grad` for the blocks of the two
    /// source components and returns the term value.
    #[inline]
    pub(crate) fn accumulate(
        &self,
        tau: &[f64],
        coef: f64,
        grad: &mut [f64],
        off_i: usize,
        off_j: usize,
    ) -> f64 {
        let p = tau.len();
        let mut quad = 0.0;
        let mut lin = 0.0;
        for (d, t) in tau.iter().enumerate() {
            let shifted = 2.0 * t - self.delay[d];
            quad += shifted * shifted * self.cross_var[d];
            lin += shifted * self.cross_mean[d];
        }
        let h = (self.log_coef - 0.5 * PI * PI * quad).exp();
        let (sin_a, cos_a) = (PI * (lin - self.phase)).sin_cos();
        let g = h * cos_a;
        // derivative of the term with respect to the cosine argument
        let gs = -h * sin_a;
        let cg = coef * g;
        let cgs = coef * gs;

        grad[off_i] += 0.5 * cg;
        grad[off_j] += 0.5 * cg;
        for d in 0..p {
            let shifted = 2.0 * tau[d] - self.delay[d];
            let (si, sj, s) = (self.var_i[d], self.var_j[d], self.sum_var[d]);
            let diff = self.mean_diff[d];
            let s2 = s * s;

            // mean frequency
            grad[off_i + 1 + d] += cg * (-0.5 * diff / s) + cgs * PI * shifted * sj / s;
            grad[off_j + 1 + d] += cg * (0.5 * diff / s) + cgs * PI * shifted * si / s;

            // log variance
            let sh2 = shifted * shifted;
            let dl_i = 0.25 - 0.5 * si / s + 0.25 * si * diff * diff / s2;
            let de_i = -PI * PI * sh2 * si * sj * sj / s2;
            let da_i = -PI * shifted * si * sj * diff / s2;
            grad[off_i + 1 + p + d] += cg * (dl_i + de_i) + cgs * da_i;
            let dl_j = 0.25 - 0.5 * sj / s + 0.25 * sj * diff * diff / s2;
            let de_j = -PI * PI * sh2 * sj * si * si / s2;
            grad[off_j + 1 + p + d] += cg * (dl_j + de_j) - cgs * da_i;

            // time delay
            let de_t = PI * PI * shifted * self.cross_var[d];
            let da_t = -PI * self.cross_mean[d];
            grad[off_i + 1 + 2 * p + d] += cg * de_t + cgs * da_t;
            grad[off_j + 1 + 2 * p + d] -= cg * de_t + cgs * da_t;

            // phase delay
            grad[off_i + 1 + 3 * p + d] -= cgs * PI;
            grad[off_j + 1 + 3 * p + d] += cgs * PI;
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn comp(w: f64, mu: f64, var: f64, theta: f64, phi: f64) -> ComponentParams {
        ComponentParams::new(w, vec![mu], vec![var], vec![theta], vec![phi]).unwrap()
    }

    #[test]
    fn sm_at_zero_is_weight() {
        let c = comp(2.0, 0.37, 0.02, 0.0, 0.0);
        assert_eq!(sm_eval(&[c], &[0.0]).unwrap(), 2.0);
    }

    #[test]
    fn sm_zero_frequency_is_squared_exponential() {
        let c = comp(1.0, 0.0, 0.04, 0.0, 0.0);
        for tau in [0.0, 0.3, 1.0, 2.5] {
            let want = (-2.0 * PI * PI * tau * tau * 0.04).exp();
            assert_relative_eq!(sm_eval(&[c.clone()], &[tau]).unwrap(), want, epsilon = 1e-15);
        }
    }

    #[test]
    fn sm_rejects_dimension_mismatch() {
        let c = comp(1.0, 0.1, 0.01, 0.0, 0.0);
        assert!(matches!(sm_eval(&[c], &[0.0, 1.0]), Err(Error::Dimension { .. })));
        assert!(sm_eval(&[], &[0.0]).is_err());
    }

    #[test]
    fn cross_of_identical_components() {
        let c = comp(1.7, 0.25, 0.03, 0.4, -0.2);
        let cp = cross_params(&c, &c).unwrap();
        assert_eq!(cp.cross_amplitude, 1.0);
        assert_relative_eq!(cp.cross_weight, 1.7, epsilon = 1e-15);
        assert_relative_eq!(cp.cross_mean[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(cp.cross_variance[0], 0.03, epsilon = 1e-15);
        assert_eq!(cp.cross_time_delay[0], 0.0);
        assert_eq!(cp.cross_phase_delay, 0.0);
    }

    #[test]
    fn cross_amplitude_hand_value() {
        // a = exp(-1/4 * 0.04 / 0.02) with equal variances
        let a = comp(1.0, 0.2, 0.01, 0.0, 0.0);
        let b = comp(1.0, 0.4, 0.01, 0.0, 0.0);
        let cp = cross_params(&a, &b).unwrap();
        assert_relative_eq!(cp.cross_amplitude, (-0.5f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(cp.cross_amplitude, 0.6065306597, epsilon = 1e-9);
        assert_relative_eq!(cp.cross_mean[0], 0.3, epsilon = 1e-12);
        assert_relative_eq!(cp.cross_variance[0], 0.01, epsilon = 1e-12);
    }

    #[test]
    fn cross_swap_negates_delays() {
        let a = comp(0.8, 0.1, 0.02, 0.3, 0.5);
        let b = comp(1.3, 0.35, 0.005, -0.4, -0.1);
        let ab = cross_params(&a, &b).unwrap();
        let ba = cross_params(&b, &a).unwrap();
        assert_eq!(ab.cross_time_delay[0], -ba.cross_time_delay[0]);
        assert_eq!(ab.cross_phase_delay, -ba.cross_phase_delay);
        assert_relative_eq!(ab.cross_weight, ba.cross_weight, epsilon = 1e-15);
        assert_relative_eq!(ab.cross_amplitude, ba.cross_amplitude, epsilon = 1e-15);
        assert_relative_eq!(ab.cross_mean[0], ba.cross_mean[0], epsilon = 1e-15);
        assert_relative_eq!(ab.cross_variance[0], ba.cross_variance[0], epsilon = 1e-15);
        assert!(ab.cross_amplitude < 1.0);
    }

    #[test]
    fn gcsm_single_component_is_sm() {
        let c = comp(1.4, 0.22, 0.015, 0.0, 0.0);
        for k in -50..=50 {
            let tau = [k as f64 * 0.13];
            let g = gcsm_eval(std::slice::from_ref(&c), &tau).unwrap();
            let s = sm_eval(std::slice::from_ref(&c), &tau).unwrap();
            assert!((g - s).abs() < 1e-12);
        }
    }

    #[test]
    fn gcsm_at_zero_without_delays() {
        let cs = vec![comp(1.0, 0.1, 0.01, 0.0, 0.0), comp(0.5, 0.3, 0.02, 0.0, 0.0)];
        let mut want = 0.0;
        for a in &cs {
            for b in &cs {
                let cp = cross_params(a, b).unwrap();
                want += cp.cross_weight * cp.cross_amplitude;
            }
        }
        assert_relative_eq!(gcsm_eval(&cs, &[0.0]).unwrap(), want, epsilon = 1e-14);
    }

    #[test]
    fn cross_term_matches_public_evaluation() {
        let a = comp(0.8, 0.1, 0.02, 0.3, 0.5);
        let b = comp(1.3, 0.35, 0.005, -0.4, -0.1);
        let cp = cross_params(&a, &b).unwrap();
        let term = CrossTerm::new(&a, &b);
        for k in -20..20 {
            let tau = [k as f64 * 0.21];
            assert_relative_eq!(term.value(&tau), gcsm_pair_eval(&cp, &tau), epsilon = 1e-13);
        }
    }

    #[test]
    fn cross_density_auto_component_peak() {
        let c = comp(2.0, 0.3, 0.01, 0.0, 0.0);
        let cp = cross_params(&c, &c).unwrap();
        let v = gcsm_cross_density(&cp, &[0.3]);
        assert_relative_eq!(v.re, 2.0 / (2.0 * PI * 0.01).sqrt(), epsilon = 1e-12);
        assert_eq!(v.im, 0.0);
    }

    #[test]
    fn cross_density_zero_delay_is_real_positive() {
        let a = comp(1.0, 0.2, 0.01, 0.0, 0.0);
        let b = comp(1.0, 0.25, 0.02, 0.0, 0.0);
        let cp = cross_params(&a, &b).unwrap();
        let v = gcsm_cross_density(&cp, &cp.cross_mean);
        assert!(v.re > 0.0);
        assert!(v.im.abs() < 1e-15);
    }

    #[test]
    fn baseline_closed_forms() {
        let p = BaselineKernelParams::new(1.5, vec![0.7], MaternOrder::Half).unwrap();
        assert_relative_eq!(se_eval(&p, &[0.0]).unwrap(), 2.25, epsilon = 1e-15);
        assert_relative_eq!(matern_eval(&p, &[0.7]).unwrap(), 2.25 * (-1f64).exp(), epsilon = 1e-14);
        assert!(BaselineKernelParams::new(0.0, vec![1.0], MaternOrder::Half).is_err());
        assert!(BaselineKernelParams::new(1.0, vec![-1.0], MaternOrder::Half).is_err());
    }

    #[test]
    fn matern_five_halves_brute_force() {
        let p = BaselineKernelParams::new(0.9, vec![1.3], MaternOrder::FiveHalves).unwrap();
        for k in 0..40 {
            let tau = k as f64 * 0.1;
            // nu = 5/2 written out directly from sqrt(5) r / l
            let z = (5.0f64).sqrt() * tau / 1.3;
            let want = 0.81 * (1.0 + z + z * z / 3.0) * (-z).exp();
            assert_relative_eq!(matern_eval(&p, &[tau]).unwrap(), want, epsilon = 1e-14);
            assert_relative_eq!(matern_eval(&p, &[-tau]).unwrap(), want, epsilon = 1e-14);
        }
    }

    #[test]
    fn invalid_components_rejected() {
        assert!(ComponentParams::new(-1.0, vec![0.1], vec![0.1], vec![0.0], vec![0.0]).is_err());
        assert!(ComponentParams::new(1.0, vec![0.1], vec![0.0], vec![0.0], vec![0.0]).is_err());
        assert!(ComponentParams::new(1.0, vec![0.1], vec![0.1, 0.2], vec![0.0], vec![0.0]).is_err());
    }
}

use std::f64::consts::PI;

use mtgp::data::{TaskSeries, TaskedDataset};
use mtgp::multitask::KernelFamily;
use mtgp::spectral::{fit_gmm, init_hyperparams, periodogram, InitConfig, KernelLayout, SpectralDensityEstimate};
use proptest::prelude::*;

fn naive_power(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    (1..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in y.iter().enumerate() {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                re += (v - mean) * a.cos();
                im += (v - mean) * a.sin();
            }
            let scale = if 2 * k == n { 1.0 } else { 2.0 };
            scale * (re * re + im * im) / (n * n) as f64
        })
        .collect()
}

#[test]
fn periodogram_matches_direct_dft() {
    for n in [8, 9, 31, 64] {
        let y: Vec<f64> = (0..n).map(|t| ((t * t) as f64 * 0.37).sin() + 0.1 * t as f64).collect();
        let est = periodogram(&y, 0.5).unwrap();
        assert_eq!(est.len(), n / 2);
        for (k, (got, want)) in est.power.iter().zip(naive_power(&y)).enumerate() {
            assert!((got - want).abs() < 1e-10, "n={n} k={k}");
            assert!((est.frequencies[k] - (k + 1) as f64 / (n as f64 * 0.5)).abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn periodogram_power_sums_to_variance(y in prop::collection::vec(-10.0f64..10.0, 8..80)) {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let est = periodogram(&y, 1.0).unwrap();
        prop_assert!(est.power.iter().all(|p| *p >= 0.0));
        prop_assert!((est.total_power() - var).abs() <= 1e-9 * (1.0 + var));
    }
}

fn bumps(centers: &[(f64, f64, f64)]) -> SpectralDensityEstimate {
    let f: Vec<f64> = (1..=80).map(|k| k as f64 * 0.01).collect();
    let p = f
        .iter()
        .map(|x| {
            centers
                .iter()
                .map(|(w, m, s)| w * (-(x - m) * (x - m) / (2.0 * s * s)).exp())
                .sum()
        })
        .collect();
    SpectralDensityEstimate::new(f, p).unwrap()
}

fn weighted_ll(d: &SpectralDensityEstimate, comps: &[(f64, f64, f64)]) -> f64 {
    let total = d.total_power();
    d.frequencies
        .iter()
        .zip(&d.power)
        .map(|(x, p)| {
            let mix: f64 = comps
                .iter()
                .map(|(w, m, v)| w * (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt())
                .sum();
            p / total * mix.ln()
        })
        .sum()
}

#[test]
fn single_component_is_weighted_moments() {
    let d = bumps(&[(1.0, 0.3, 0.05), (0.4, 0.55, 0.03)]);
    let fit = fit_gmm(&d, 1, 0).unwrap();
    let total = d.total_power();
    let mean = d.frequencies.iter().zip(&d.power).map(|(f, p)| f * p).sum::<f64>() / total;
    let var = d.frequencies.iter().zip(&d.power).map(|(f, p)| p * (f - mean).powi(2)).sum::<f64>() / total;
    let c = fit.components[0];
    assert!((c.mean - mean).abs() < 1e-10);
    assert!((c.variance - var).abs() < 1e-10);
    assert_eq!(c.weight, 1.0);
}

#[test]
fn two_components_beat_a_grid_search() {
    let d = bumps(&[(1.0, 0.2, 0.03), (0.6, 0.55, 0.04)]);
    let fit = fit_gmm(&d, 2, 1).unwrap();
    let em: Vec<(f64, f64, f64)> = fit.components.iter().map(|c| (c.weight, c.mean, c.variance)).collect();
    let em_ll = weighted_ll(&d, &em);
    assert!((em_ll - fit.log_likelihood.last().unwrap()).abs() < 1e-9);
    let mut best = f64::NEG_INFINITY;
    for i in 0..15 {
        for j in 0..15 {
            for a in 0..8 {
                for b in 0..8 {
                    for w in 1..10 {
                        let m1 = 0.12 + 0.01 * i as f64;
                        let m2 = 0.48 + 0.01 * j as f64;
                        let v1 = (0.015 + 0.005 * a as f64).powi(2);
                        let v2 = (0.02 + 0.005 * b as f64).powi(2);
                        let w1 = w as f64 / 10.0;
                        best = best.max(weighted_ll(&d, &[(w1, m1, v1), (1.0 - w1, m2, v2)]));
                    }
                }
            }
        }
    }
    assert!(em_ll >= best - 1e-9, "EM {em_ll} below grid {best}");
    assert!((fit.components[0].mean - 0.2).abs() < 0.01);
    assert!((fit.components[1].mean - 0.55).abs() < 0.01);
}

#[test]
fn em_log_likelihood_never_decreases() {
    for seed in 0..10 {
        let d = bumps(&[(1.0, 0.15, 0.02), (0.5, 0.4, 0.05), (0.8, 0.7, 0.02)]);
        let fit = fit_gmm(&d, 3, seed).unwrap();
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        for row in &fit.responsibilities {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let wsum: f64 = fit.components.iter().map(|c| c.weight).sum();
        assert!((wsum - 1.0).abs() < 1e-12);
        assert!(fit.components.windows(2).all(|c| c[0].mean <= c[1].mean));
    }
}

#[test]
fn init_finds_tone_frequencies() {
    let n = 200;
    let x: Vec<f64> = (0..n).map(|t| t as f64 * 0.5).collect();
    let a: Vec<f64> = x.iter().map(|t| (2.0 * PI * 0.2 * t).sin()).collect();
    let b: Vec<f64> = x.iter().map(|t| (2.0 * PI * 0.2 * t + 1.0).cos()).collect();
    let ds = TaskedDataset::new(vec![
        TaskSeries::new("a", x.clone(), a).unwrap(),
        TaskSeries::new("b", x, b).unwrap(),
    ])
    .unwrap();
    let layout = KernelLayout {
        family: KernelFamily::GcsmCc,
        q: 1,
        m: 2,
        p: 1,
    };
    let init = init_hyperparams(&ds, layout, 0, &InitConfig::default()).unwrap();
    let bin = init.density.bin_width();
    assert!((init.gmm.components[0].mean - 0.2).abs() <= bin);
    assert_eq!(init.spec.family(), KernelFamily::GcsmCc);
    assert!(init.noise_variance > 0.0);
}

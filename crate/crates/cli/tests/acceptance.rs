//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use mtgp::data::{load_series, write_series, SeriesSchema, SplitStrategy};
use mtgp::gp::Noise;
use mtgp::kernel::{gcsm_eval, sm_eval, ComponentParams};
use mtgp::multitask::{
    assemble, degrees_of_freedom, random_spec, CoregionalizationSet, KernelFamily, KernelParams, KernelSpec,
    MosmParams, Points,
};
use mtgp::trainer::{gradient, GradientMode};
use mtgp_cli::experiment::{cmd_compare, cmd_synth, Manifest};
use mtgp_cli::ExperimentConfig;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn table_dof(family: KernelFamily, q: usize, m: usize, p: usize) -> usize {
    let tri = (m * m + m) / 2;
    match family {
        KernelFamily::SeLmc | KernelFamily::MaternLmc => tri + p + 1,
        KernelFamily::SmLmc => q * (tri + 2 * p + 1),
        KernelFamily::Csm => 2 * q + m * (2 * q - 1),
        KernelFamily::Mosm => q * m * (3 * p + 2),
        KernelFamily::GcsmC => tri + q * (4 * p + 1),
        KernelFamily::GcsmCc => q * (tri + 4 * p + 1),
    }
}

fn degrees_of_freedom_table() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    for family in KernelFamily::ALL {
        for m in [1, 2, 3, 5] {
            for q in [1, 3, 10] {
                for p in [1, 2] {
                    let want = table_dof(family, q, m, p);
                    let spec = random_spec(family, q, m, p, &mut rng).map_err(|e| e.to_string())?;
                    ensure(
                        degrees_of_freedom(&spec) == want
                            && family.degrees_of_freedom(q, m, p) == want
                            && spec.pack().len() == want,
                        || format!("{family} M={m} Q={q} P={p}: expected {want}"),
                    )?;
                    ensure(spec.term_count() == family.component_count(q), || {
                        format!("{family}: {} terms", spec.term_count())
                    })?;
                    checked += 1;
                }
            }
        }
    }
    let spots = [
        (KernelFamily::GcsmCc, 10, 3, 110),
        (KernelFamily::SmLmc, 3, 2, 18),
        (KernelFamily::Mosm, 2, 3, 30),
    ];
    for (family, q, m, want) in spots {
        let got = family.degrees_of_freedom(q, m, 1);
        ensure(got == want, || format!("{family} M={m} Q={q}: {got} != {want}"))?;
    }
    Ok(format!("{checked} grid cells, spot values 110/18/30"))
}

fn comp(rng: &mut ChaCha8Rng, delays: bool) -> ComponentParams {
    let (t, f) = if delays {
        (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    } else {
        (0.0, 0.0)
    };
    ComponentParams::new(
        rng.random_range(0.2..1.5),
        vec![rng.random_range(0.0..0.5)],
        vec![rng.random_range(0.001..0.05)],
        vec![t],
        vec![f],
    )
    .unwrap()
}

fn sm_reduction() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let c = comp(&mut rng, false);
        let (w, mu, v) = (c.weight, c.mean_freq[0], c.variance[0]);
        for i in 0..1000 {
            let tau = -10.0 + 20.0 * i as f64 / 999.0;
            let sm = w * (-2.0 * PI * PI * tau * tau * v).exp() * (2.0 * PI * tau * mu).cos();
            let g = gcsm_eval(std::slice::from_ref(&c), &[tau]).map_err(|e| e.to_string())?;
            let s = sm_eval(std::slice::from_ref(&c), &[tau]).map_err(|e| e.to_string())?;
            worst = worst.max((g - sm).abs()).max((s - sm).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("GCSM vs SM differ by {worst:e}"))?;

    let mut worst_cc = 0.0f64;
    for _ in 0..10 {
        let comps: Vec<_> = (0..3).map(|_| comp(&mut rng, true)).collect();
        let spec = KernelSpec::new(
            3,
            1,
            1,
            KernelParams::GcsmCc {
                coreg: CoregionalizationSet::new(1, vec![vec![1.0]; 3]).unwrap(),
                components: comps.clone(),
            },
        )
        .map_err(|e| e.to_string())?;
        for i in 0..1000 {
            let tau = -10.0 + 20.0 * i as f64 / 999.0;
            let k = spec.eval_pair(&[tau], 0, &[0.0], 0).map_err(|e| e.to_string())?;
            worst_cc = worst_cc.max((k - gcsm_eval(&comps, &[tau]).unwrap()).abs());
        }
    }
    ensure(worst_cc <= 1e-12, || format!("M=1 GCSM-CC vs GCSM differ by {worst_cc:e}"))?;
    Ok(format!("max |GCSM-SM| {worst:.1e}, max |GCSM-CC(M=1)-GCSM| {worst_cc:.1e}"))
}

fn mosm_diagonal() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let p = rng.random_range(1..3);
        let spec = random_spec(KernelFamily::Mosm, 3, 3, p, &mut rng).map_err(|e| e.to_string())?;
        let KernelParams::Mosm(MosmParams { channels }) = spec.params() else {
            return Err("not a MOSM spec".into());
        };
        for _ in 0..20 {
            let x: Vec<f64> = (0..p).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..p).map(|_| rng.random_range(-5.0..5.0)).collect();
            for m in 0..3 {
                // alpha (2 pi)^(P/2) |Sigma|^(1/2) exp(-tau' Sigma tau / 2) cos(tau' mu), no 2 pi in the exponent
                let want: f64 = channels
                    .iter()
                    .map(|c| {
                        let ch = &c[m];
                        let mut quad = 0.0;
                        let mut lin = 0.0;
                        let mut det = 1.0;
                        for d in 0..p {
                            let t = x[d] - y[d];
                            quad += t * t * ch.variance[d];
                            lin += t * ch.mean[d];
                            det *= ch.variance[d];
                        }
                        ch.magnitude.powi(2) * (2.0 * PI).powf(p as f64 / 2.0) * det.sqrt() * (-0.5 * quad).exp() * lin.cos()
                    })
                    .sum();
                let got = spec.eval_pair(&x, m, &y, m).map_err(|e| e.to_string())?;
                worst = worst.max((got - want).abs() / want.abs().max(1.0));
            }
        }
    }
    ensure(worst <= 1e-10, || format!("deviation {worst:e}"))?;
    Ok(format!("max deviation {worst:.1e} over 3000 evaluations"))
}

fn psd_and_symmetry() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_ratio = f64::INFINITY;
    for family in KernelFamily::ALL {
        for draw in 0..100 {
            let spec = random_spec(family, 2, 2, 1, &mut rng).map_err(|e| e.to_string())?;
            let n = 20;
            let xs = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let tasks = (0..n).map(|i| i % 2).collect();
            let k = assemble(&spec, &Points::scalar(xs, tasks).unwrap()).map_err(|e| e.to_string())?;
            let asym = (&k - k.transpose()).amax();
            ensure(asym <= 1e-12, || format!("{family} draw {draw}: asymmetry {asym:e}"))?;
            let bound = -1e-8 * k.trace() / n as f64;
            let min = SymmetricEigen::new(&k + DMatrix::identity(n, n) * 1e-6).eigenvalues.min();
            ensure(min >= bound, || format!("{family} draw {draw}: min eigenvalue {min:e}"))?;
            worst_ratio = worst_ratio.min(min);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("700 draws, smallest eigenvalue {worst_ratio:.2e}, {secs:.2}s"))
}

/// Symmetrized sum of the cross spectral densities, as (re, im).
fn cross_density(comps: &[ComponentParams], s: f64) -> (f64, f64) {
    let mut re = 0.0;
    let mut im = 0.0;
    for a in comps {
        for b in comps {
            let (si, sj) = (a.variance[0], b.variance[0]);
            let (mi, mj) = (a.mean_freq[0], b.mean_freq[0]);
            let w = (a.weight * b.weight).sqrt();
            let amp = (2.0 * (si * sj).sqrt() / (si + sj)).sqrt() * (-0.25 * (mi - mj).powi(2) / (si + sj)).exp();
            let mu = (si * mj + sj * mi) / (si + sj);
            let var = 2.0 * si * sj / (si + sj);
            let theta = a.time_delay[0] - b.time_delay[0];
            let phi = a.phase_delay[0] - b.phase_delay[0];
            for sign in [1.0, -1.0] {
                let x = sign * s;
                let g = (-(x - mu).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
                let ang = -PI * (theta * x + phi);
                re += 0.5 * w * amp * g * ang.cos();
                im += 0.5 * w * amp * g * ang.sin();
            }
        }
    }
    (re, im)
}

fn fourier_pair() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst, mut worst_im) = (0.0f64, 0.0f64);
    for _ in 0..5 {
        let comps: Vec<_> = (0..3).map(|_| comp(&mut rng, true)).collect();
        let band = comps
            .iter()
            .map(|c| c.mean_freq[0] + 10.0 * c.variance[0].sqrt())
            .fold(0.0, f64::max);
        let n = 6000;
        let h = 2.0 * band / n as f64;
        let dens: Vec<(f64, f64, f64)> = (0..=n)
            .map(|k| {
                let s = -band + k as f64 * h;
                let (r, i) = cross_density(&comps, s);
                (s, r, i)
            })
            .collect();
        for t in 0..41 {
            let tau = -5.0 + 0.25 * t as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for (k, (s, r, i)) in dens.iter().enumerate() {
                let w = if k == 0 || k == n { 0.5 * h } else { h };
                let (sn, cs) = (2.0 * PI * s * tau).sin_cos();
                re += w * (r * cs - i * sn);
                im += w * (r * sn + i * cs);
            }
            let k = gcsm_eval(&comps, &[tau]).map_err(|e| e.to_string())?;
            worst = worst.max((re - k).abs());
            worst_im = worst_im.max(im.abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-3, || format!("kernel vs quadrature {worst:e}"))?;
    ensure(worst_im < 1e-8, || format!("imaginary residual {worst_im:e}"))?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("max error {worst:.1e}, imaginary residual {worst_im:.1e}, {secs:.2}s"))
}

fn gradient_gate() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for draw in 0..20 {
        let spec = random_spec(KernelFamily::GcsmCc, 2, 2, 1, &mut rng).map_err(|e| e.to_string())?;
        let xs = (0..10).map(|_| rng.random_range(-4.0..4.0)).collect();
        let pts = Points::scalar(xs, (0..10).map(|i| i % 2).collect()).unwrap();
        let y: Vec<f64> = (0..10).map(|_| rng.random_range(-1.5..1.5)).collect();
        let noise = Noise::Shared(rng.random_range(0.01..0.3));
        let a = gradient(&spec, &noise, &pts, &y, GradientMode::Analytic).map_err(|e| e.to_string())?;
        let n = gradient(&spec, &noise, &pts, &y, GradientMode::Numeric).map_err(|e| e.to_string())?;
        let scale = n.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        for (i, (ai, ni)) in a.iter().zip(&n).enumerate() {
            let rel = (ai - ni).abs() / scale;
            worst = worst.max(rel);
            ensure(rel <= 1e-4, || format!("draw {draw} param {i}: {ai} vs {ni}"))?;
        }
    }
    Ok(format!("20 draws, max relative difference {worst:.1e}"))
}

fn synthetic_experiment() -> Check {
    let base = ExperimentConfig::load(&fixture("synthetic_experiment.json")).map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut wins = 0;
    let mut worst_signal = 0.0f64;
    let mut lines = Vec::new();
    let start = Instant::now();
    for seed in 1..=5u64 {
        let config = ExperimentConfig {
            seed,
            output_dir: tmp.path().join(format!("seed{seed}")),
            ..base.clone()
        };
        let t0 = Instant::now();
        let metrics = cmd_synth(&config).map_err(|e| e.to_string())?;
        let secs = t0.elapsed().as_secs_f64();
        ensure(secs < 1800.0, || format!("seed {seed} took {secs:.0}s"))?;
        let mae = |kernel: &str, task: &str| -> Result<f64, String> {
            metrics
                .kernels
                .get(kernel)
                .and_then(|k| k.mae.get(task).copied().flatten())
                .ok_or_else(|| format!("missing {kernel}/{task}"))
        };
        let (ci, bi) = (mae("GCSM-CC", "integral")?, mae("SM-LMC", "integral")?);
        let (cd, bd) = (mae("GCSM-CC", "derivative")?, mae("SM-LMC", "derivative")?);
        let signal = mae("GCSM-CC", "signal")?;
        worst_signal = worst_signal.max(signal);
        if ci < bi && cd < bd {
            wins += 1;
        }
        lines.push(format!("s{seed}: int {ci:.3}/{bi:.3} der {cd:.3}/{bd:.3}"));
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(config.output_dir.join("manifest.json")).unwrap())
                .map_err(|e| e.to_string())?;
        ensure(manifest.q == config.q, || "manifest does not record Q".into())?;
    }
    let summary = format!(
        "Q={} wins {wins}/5, max signal MAE {worst_signal:.2e}, {:.0}s [{}]",
        base.q,
        start.elapsed().as_secs_f64(),
        lines.join("; ")
    );
    ensure(wins >= 4 && worst_signal < 0.5, || summary.clone())?;
    Ok(summary)
}

fn fixtures_round_trip() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let src = fixture("sensors.csv");
    let loaded = load_series(&src, &SeriesSchema::default()).map_err(|e| e.to_string())?;
    let out = tmp.path().join("sensors.csv");
    write_series(&loaded.dataset, &out).map_err(|e| e.to_string())?;
    ensure(fs::read(&src).unwrap() == fs::read(&out).unwrap(), || "sensors.csv changed on round trip".into())?;
    for name in ["pure_tone.csv", "missing.csv"] {
        let a = load_series(&fixture(name), &SeriesSchema::default()).map_err(|e| e.to_string())?;
        let copy = tmp.path().join(name);
        write_series(&a.dataset, &copy).map_err(|e| e.to_string())?;
        let b = load_series(&copy, &SeriesSchema::default()).map_err(|e| e.to_string())?;
        ensure(a.dataset.tasks() == b.dataset.tasks(), || format!("{name} changed on round trip"))?;
    }
    Ok("sensors.csv byte-identical; pure_tone.csv and missing.csv value-identical".into())
}

fn compare_protocol() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = ExperimentConfig::load(&fixture("compare_sensors.json")).map_err(|e| e.to_string())?;
    config.output_dir = tmp.path().join("compare");
    let start = Instant::now();
    let metrics = cmd_compare(&config).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(config.output_dir.join("manifest.json")).unwrap())
            .map_err(|e| e.to_string())?;
    ensure(
        matches!(
            manifest.splits.as_slice(),
            [SplitStrategy::RandomHalf { .. }, SplitStrategy::FirstHalf, SplitStrategy::LastHalf]
        ),
        || format!("unexpected splits {:?}", manifest.splits),
    )?;
    for (kernel, k) in &metrics.kernels {
        for task in &metrics.tasks {
            ensure(matches!(k.mae.get(task), Some(Some(v)) if v.is_finite()), || {
                format!("{kernel} has no MAE for {task}")
            })?;
            let file = config.output_dir.join(format!("predictions_{kernel}.csv"));
            ensure(file.exists(), || format!("missing {}", file.display()))?;
        }
    }
    ensure(metrics.kernels.len() == 2, || "expected candidate and one baseline".into())?;
    ensure(secs < 600.0, || format!("took {secs:.0}s"))?;
    Ok(format!("{} tasks x {} kernels in {secs:.1}s", metrics.tasks.len(), metrics.kernels.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("degrees of freedom match the table", degrees_of_freedom_table),
        ("GCSM reduces to SM; single-task GCSM-CC equals GCSM", sm_reduction),
        ("MOSM diagonal form", mosm_diagonal),
        ("PSD and symmetry over 100 draws per family", psd_and_symmetry),
        ("GCSM kernel and cross spectral density are a Fourier pair", fourier_pair),
        ("analytic gradient matches finite differences", gradient_gate),
        ("synthetic experiment: GCSM-CC beats SM-LMC on integral and derivative", synthetic_experiment),
        ("fixture CSVs round-trip", fixtures_round_trip),
        ("compare runs the split protocol end to end", compare_protocol),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

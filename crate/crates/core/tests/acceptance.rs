//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use cbcal::calibration::{
    batch_wiener, calibrate_rls, orthogonality, BatchOptions, RlsOptions,
};
use cbcal::evaluation::{evaluate_bank, monte_carlo, snr_metrics, welch_psd, TrialContext};
use cbcal::experiment::{
    calibrate_command, design_filter_command, evaluate_command, montecarlo_command,
    simulate_command, ExperimentConfig, RecordFormat, RecordMode, PRESETS,
};
use cbcal::frontend::{build_leapfrog, nominal_config};
use cbcal::simulator::{generate_reference, simulate_open_loop, InputSignal, SimOptions};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Nominal N = 6 system with the batch oracle on a 2^16-sample test record.
struct Nominal {
    ctx: TrialContext,
    training: cbcal::simulator::ControlRecord,
    test: cbcal::simulator::ControlRecord,
    oracle_snr: f64,
    seconds: f64,
}

fn nominal() -> Nominal {
    let start = Instant::now();
    let cfg = ExperimentConfig::preset("nominal_n6").unwrap();
    let mut protocol = cfg.protocol();
    protocol.testing_length = 1 << 16;
    let ctx = TrialContext::new(cfg.frontend.clone(), protocol).unwrap();
    let training = ctx.training_record(&ctx.nominal).unwrap();
    let test = ctx.test_record(&ctx.nominal).unwrap();
    let oracle = evaluate_bank(&ctx.uncalibrated, &test, &ctx.protocol).unwrap();
    Nominal {
        ctx,
        training,
        test,
        oracle_snr: oracle.snr_db,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn criterion_1(n: &Nominal) -> Outcome {
    check(
        n.oracle_snr >= 73.0 && n.seconds <= 300.0,
        format!("oracle SNR {:.2} dB (>= 73), {:.1} s (<= 300)", n.oracle_snr, n.seconds),
    )
}

fn criterion_2(n: &Nominal) -> Outcome {
    let opts = RlsOptions {
        iterations: 1 << 13,
        checkpoints: vec![],
        ..n.ctx.protocol.rls.clone()
    };
    let cal = calibrate_rls(&n.training, &n.ctx.h0, &opts).map_err(|e| e.to_string())?;
    let rls = evaluate_bank(&cal.bank, &n.test, &n.ctx.protocol).unwrap().snr_db;
    let gap = n.oracle_snr - rls;
    check(
        gap <= 1.0,
        format!("RLS@2^13 {rls:.2} dB vs oracle {:.2} dB, gap {gap:.2} dB (<= 1)", n.oracle_snr),
    )
}

fn criterion_3() -> Outcome {
    let cfg = ExperimentConfig::preset("nominal_n6").unwrap();
    let mut protocol = cfg.protocol();
    protocol.oracle = false;
    let ctx = TrialContext::new(cfg.frontend.clone(), protocol).unwrap();
    let report = monte_carlo(&ctx, 0.10, 16, cfg.montecarlo.master_seed, None)
        .map_err(|e| e.to_string())?;
    let (Some(cal), Some(unc)) = (report.calibrated(), report.uncalibrated()) else {
        return Err("no completed trials".into());
    };
    check(
        report.failed.is_empty()
            && report.trials.len() == 16
            && cal.avg >= 75.0
            && cal.min >= 70.0
            && unc.avg <= cal.avg - 10.0,
        format!(
            "{} trials, {} failed; calibrated avg {:.2} min {:.2} max {:.2} dB; uncalibrated avg {:.2} dB",
            report.trials.len(),
            report.failed.len(),
            cal.avg,
            cal.min,
            cal.max,
            unc.avg
        ),
    )
}

fn criterion_4() -> Outcome {
    let (taps, n) = (8, 200);
    let mut cfg = ExperimentConfig::preset("tiny_n2").unwrap();
    cfg.estimator.taps = taps;
    cfg.estimator.band_edge = 0.1;
    let ctx = TrialContext::new(cfg.frontend.clone(), cfg.protocol()).unwrap();
    let record = ctx.training_record(&ctx.nominal).unwrap();
    let delta = 0.01;
    let batch = batch_wiener(
        &record,
        &ctx.h0,
        &BatchOptions {
            delta,
            samples: Some(n),
        },
    )
    .map_err(|e| e.to_string())?;
    let rls = calibrate_rls(
        &record,
        &ctx.h0,
        &RlsOptions {
            lambda: 1.0,
            delta,
            iterations: n,
            checkpoints: vec![],
            block_size: 1,
        },
    )
    .map_err(|e| e.to_string())?;
    let diff = max_abs_diff(rls.bank.parameters().as_slice(), batch.parameters().as_slice());
    check(diff < 1e-8, format!("max |h_rls - h_batch| = {diff:.3e} (< 1e-8)"))
}

fn criterion_5(n: &Nominal) -> Outcome {
    let corr = orthogonality(&n.ctx.uncalibrated, &n.training, None).map_err(|e| e.to_string())?;
    let worst = corr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    check(
        worst < 1e-8,
        format!("max |mean(u s)| = {worst:.3e} over {} coordinates (< 1e-8)", corr.len()),
    )
}

fn drive(seed: u64, n: usize) -> Vec<f64> {
    generate_reference(seed, n).into_iter().map(f64::from).collect()
}

fn criterion_6() -> Outcome {
    let cfg = nominal_config(2, 10e6).unwrap();
    let sys = build_leapfrog(&cfg).unwrap();
    let n = 1024;
    let t = cfg.clock_period;
    let opts = SimOptions::default();
    let controls: Vec<Vec<f64>> = (0..3).map(|l| drive(100 + l, n)).collect();
    let silent = vec![vec![0.0; n]; 3];
    let tone = InputSignal::tone_dbfs(-1.0, cfg.sample_rate() / 256.0, 0.3);
    let joint = simulate_open_loop(&sys, &tone, &controls, n, t, &opts).unwrap();
    let mut sum = simulate_open_loop(&sys, &tone, &silent, n, t, &opts).unwrap();
    for l in 0..3 {
        let mut only = silent.clone();
        only[l] = controls[l].clone();
        sum += simulate_open_loop(&sys, &InputSignal::Zero, &only, n, t, &opts).unwrap();
    }
    let err = (&joint - &sum).amax() / joint.amax();
    check(err < 1e-9, format!("relative error {err:.3e} over {n} periods (< 1e-9)"))
}

/// Kernel `h̆_ℓ[k] = ∫ θ(τ) g_ℓ(kT − τ) dτ` of the N = 2 oscillator in closed
/// form, convolved with `s_ℓ` and compared with the simulated `x_2(kT)`.
fn criterion_7() -> Outcome {
    let cfg = nominal_config(2, 10e6).unwrap();
    let sys = build_leapfrog(&cfg).unwrap();
    let t = cfg.clock_period;
    let beta = 1.0 / cfg.tau_beta[1];
    let omega = (beta / cfg.tau_alpha[0]).sqrt();
    let n = 2048;
    let mut worst = 0.0f64;
    for l in 0..3 {
        let row = if l == 2 { 1 } else { 0 };
        let gamma = sys.gamma()[(row, l)];
        let g: Vec<f64> = (0..=n)
            .map(|k| {
                if k == 0 {
                    return 0.0;
                }
                let (a, b) = (omega * (k - 1) as f64 * t, omega * k as f64 * t);
                if row == 0 {
                    gamma * beta / (omega * omega) * (a.cos() - b.cos())
                } else {
                    gamma * (b.sin() - a.sin()) / omega
                }
            })
            .collect();
        let s = drive(200 + l as u64, n);
        let mut forced = vec![vec![0.0; n]; 3];
        forced[l] = s.clone();
        let x = simulate_open_loop(&sys, &InputSignal::Zero, &forced, n, t, &SimOptions::default())
            .unwrap();
        let scale = x.column(1).amax();
        for k in 0..=n {
            let conv: f64 = (0..k).map(|k1| s[k1] * g[k - k1]).sum();
            worst = worst.max((conv - x[(k, 1)]).abs() / scale);
        }
    }
    check(worst < 1e-6, format!("relative error {worst:.3e} (< 1e-6)"))
}

fn criterion_8() -> Outcome {
    let fs: f64 = 194.7e6;
    let (n, seg) = (1 << 16, 1 << 15);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let amplitude: f64 = 0.8;
    let band = 0.05 * fs;
    let sigma2 = amplitude * amplitude / 2.0 / 1e4 / (band / (fs / 2.0));
    let normal = Normal::new(0.0, sigma2.sqrt()).unwrap();
    let x: Vec<f64> = (0..n)
        .map(|k| {
            amplitude * (2.0 * PI * 128.0 * k as f64 / seg as f64 + 0.1).sin()
                + normal.sample(&mut rng)
        })
        .collect();
    let psd = welch_psd(&x, fs, seg, 0.5).unwrap();
    let snr = snr_metrics(psd, fs / 256.0, band).unwrap().snr_db;
    let white = Normal::new(0.0, 0.7).unwrap();
    let w: Vec<f64> = (0..n).map(|_| white.sample(&mut rng)).collect();
    let power = w.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let ratio = welch_psd(&w, fs, 1 << 12, 0.5).unwrap().total_power() / power;
    check(
        (snr - 40.0).abs() <= 0.5 && (ratio - 1.0).abs() <= 0.01,
        format!("mixture SNR {snr:.3} dB (40 +- 0.5), Parseval ratio {ratio:.5} (1 +- 0.01)"),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn run_preset(cfg: &ExperimentConfig, dir: &Path) -> cbcal::Result<()> {
    simulate_command(cfg, RecordMode::Train, RecordFormat::Binary, dir)?;
    simulate_command(cfg, RecordMode::Test, RecordFormat::Binary, dir)?;
    simulate_command(cfg, RecordMode::Test, RecordFormat::Csv, dir)?;
    calibrate_command(cfg, &dir.join("record_train.bin"), &dir.join("bank.bin"))?;
    calibrate_command(cfg, &dir.join("record_train.bin"), &dir.join("bank.csv"))?;
    evaluate_command(cfg, &dir.join("bank.bin"), &dir.join("record_test.bin"), dir)?;
    design_filter_command(cfg, dir)?;
    montecarlo_command(cfg, dir, None)?;
    Ok(())
}

fn criterion_9() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut details = Vec::new();
    let mut ok = true;
    for (name, _) in PRESETS {
        let mut cfg = ExperimentConfig::preset(name).unwrap();
        cfg.montecarlo.n_trials = cfg.montecarlo.n_trials.min(2);
        let dir = root.path().join(name);
        run_preset(&cfg, &dir).map_err(|e| format!("{name}: {e}"))?;
        let first = snapshot(&dir);
        fs::remove_dir_all(&dir).unwrap();
        run_preset(&cfg, &dir).map_err(|e| format!("{name}: {e}"))?;
        let second = snapshot(&dir);
        let differing: Vec<&String> = first
            .keys()
            .filter(|k| first.get(*k) != second.get(*k))
            .collect();
        ok &= differing.is_empty() && first.len() == second.len();
        details.push(format!("{name}: {} files, {} differ", first.len(), differing.len()));
    }
    check(ok, details.join("; "))
}

fn run(label: usize, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f))
        .unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(d) => println!("criterion {label}: PASS  {d}  [{secs:.1} s]"),
        Err(d) => println!("criterion {label}: FAIL  {d}  [{secs:.1} s]"),
    }
    outcome.is_ok()
}

fn main() -> ExitCode {
    let filter: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |c: usize| filter.is_empty() || filter.contains(&c);
    let mut results = Vec::new();
    if wanted(1) || wanted(2) || wanted(5) {
        let n = nominal();
        if wanted(1) {
            results.push(run(1, || criterion_1(&n)));
        }
        if wanted(2) {
            results.push(run(2, || criterion_2(&n)));
        }
        if wanted(5) {
            results.push(run(5, || criterion_5(&n)));
        }
    }
    let rest: [(usize, fn() -> Outcome); 6] = [
        (3, criterion_3),
        (4, criterion_4),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    for (label, f) in rest {
        if wanted(label) {
            results.push(run(label, f));
        }
    }
    let passed = results.iter().filter(|&&r| r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Config-driven pipelines behind the command-line tool. Every command
//! writes its outputs plus a manifest into the output directory.

mod config;
mod manifest;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub use config::{
    CalibrationConfig, EstimatorConfig, EvaluationConfig, ExperimentConfig, Method,
    MonteCarloConfig, SignalConfig, NOMINAL_N6, PRESETS, TINY_N2,
};
pub use manifest::{sha256_file, sha256_hex, Manifest};

use crate::calibration::{batch_wiener, calibrate_lms, calibrate_rls, BatchOptions, Calibration};
use crate::error::{Error, Result};
use crate::estimator::{design_reference_filter, FilterBank};
use crate::evaluation::{
    evaluate_bank, monte_carlo, reference_scale, MonteCarloReport, SpectrumReport, TrialContext,
};
use crate::frontend::build_leapfrog;
use crate::simulator::{generate_reference, simulate, ControlRecord, InputSignal, SimOptions};

/// Which record of the protocol to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordMode {
    /// `u = 0`, training reference seed.
    Train,
    /// Test tone, test reference seed.
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    Binary,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub path: PathBuf,
    pub n_samples: usize,
    pub order: usize,
    pub clock_period: f64,
    pub max_abs_state: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrateSummary {
    pub bank_path: PathBuf,
    pub method: Method,
    pub iterations: usize,
    /// `(iterations, mean a priori residual power)` per checkpoint.
    pub trace: Vec<(usize, f64)>,
}

/// The fixed reference filter `h_0` for a config.
pub fn reference_filter(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    design_reference_filter(
        cfg.estimator.taps,
        cfg.estimator.band_edge,
        reference_scale(&cfg.frontend),
    )
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Simulates the training or test record of the protocol, washout removed.
pub fn simulate_command(
    cfg: &ExperimentConfig,
    mode: RecordMode,
    format: RecordFormat,
    out_dir: &Path,
) -> Result<SimulateSummary> {
    let protocol = cfg.protocol();
    let (input, seed, length, stem) = match mode {
        RecordMode::Train => (
            InputSignal::Zero,
            cfg.signal.reference_seed,
            cfg.signal.training_length,
            "record_train",
        ),
        RecordMode::Test => (
            InputSignal::tone_dbfs(
                cfg.signal.tone_amplitude_dbfs,
                cfg.signal.tone_frequency,
                cfg.signal.tone_phase,
            ),
            cfg.signal.test_seed,
            cfg.signal.testing_length,
            "record_test",
        ),
    };
    let n = protocol.washout() + length + protocol.taps;
    let sys = build_leapfrog(&cfg.frontend)?;
    let opts = SimOptions {
        full_scale: cfg.signal.full_scale,
        record_states: true,
        divergence_bound: cfg.signal.divergence_bound,
        reference_seed: seed,
        ..SimOptions::default()
    };
    let reference = generate_reference(seed, n);
    let record = simulate(&sys, &input, &reference, n, cfg.frontend.clock_period, &opts)?
        .skip(protocol.washout());
    let max_abs_state = record.max_abs_state().unwrap_or(0.0);
    let ext = match format {
        RecordFormat::Binary => "bin",
        RecordFormat::Csv => "csv",
    };
    let path = out_dir.join(format!("{stem}.{ext}"));
    fs::create_dir_all(out_dir)?;
    record.without_states().save(&path)?;
    let mut manifest = Manifest::new("simulate", cfg);
    manifest.seed("record", seed);
    manifest.output(&path)?;
    manifest.write(out_dir)?;
    Ok(SimulateSummary {
        path,
        n_samples: record.n_samples(),
        order: record.order(),
        clock_period: record.clock_period,
        max_abs_state,
    })
}

/// Calibrates a bank on a training record with the configured method.
pub fn calibrate_command(
    cfg: &ExperimentConfig,
    record_path: &Path,
    bank_path: &Path,
) -> Result<CalibrateSummary> {
    let record = ControlRecord::load(record_path)?;
    if record.order() != cfg.frontend.order {
        return Err(Error::Shape(format!(
            "record has {} controls, config order is {}",
            record.order(),
            cfg.frontend.order
        )));
    }
    let h0 = reference_filter(cfg)?;
    let method = cfg.calibration.method;
    let cal = match method {
        Method::Rls => calibrate_rls(&record, &h0, &cfg.rls_options())?,
        Method::Lms => calibrate_lms(&record, &h0, &cfg.lms_options())?,
        Method::Batch => {
            let bank = batch_wiener(
                &record,
                &h0,
                &BatchOptions {
                    delta: 0.0,
                    samples: Some(cfg.calibration.iterations),
                },
            )?;
            Calibration {
                bank,
                checkpoints: Vec::new(),
            }
        }
    };
    let out_dir = bank_path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(out_dir)?;
    cal.bank.save(bank_path)?;
    let trace: Vec<(usize, f64)> = cal
        .checkpoints
        .iter()
        .map(|c| (c.iterations, c.residual_power))
        .collect();
    let trace_path = out_dir.join("calibration_trace.csv");
    let mut w = create(&trace_path)?;
    writeln!(w, "iterations,residual_power")?;
    for (k, p) in &trace {
        writeln!(w, "{k},{p:e}")?;
    }
    w.flush()?;
    let mut manifest = Manifest::new("calibrate", cfg);
    manifest.input(record_path)?;
    manifest.output(bank_path)?;
    manifest.output(&trace_path)?;
    manifest.write(out_dir)?;
    Ok(CalibrateSummary {
        bank_path: bank_path.to_path_buf(),
        method,
        iterations: cfg.calibration.iterations,
        trace,
    })
}

/// Measures a bank on a test record; writes `spectrum.csv` and `metrics.csv`.
pub fn evaluate_command(
    cfg: &ExperimentConfig,
    bank_path: &Path,
    record_path: &Path,
    out_dir: &Path,
) -> Result<SpectrumReport> {
    let bank = FilterBank::load(bank_path)?;
    if bank.order() != cfg.frontend.order || bank.taps() != cfg.estimator.taps {
        return Err(Error::Shape(format!(
            "bank is (N={}, K={}) but config expects (N={}, K={})",
            bank.order(),
            bank.taps(),
            cfg.frontend.order,
            cfg.estimator.taps
        )));
    }
    let record = ControlRecord::load(record_path)?;
    let report = evaluate_bank(&bank, &record, &cfg.protocol())?;
    let spectrum_path = out_dir.join("spectrum.csv");
    let mut w = create(&spectrum_path)?;
    writeln!(w, "frequency_hz,psd_db")?;
    for (f, p) in report.psd.frequencies.iter().zip(report.psd.density_db()) {
        writeln!(w, "{f:.3},{p:.4}")?;
    }
    w.flush()?;
    let metrics_path = out_dir.join("metrics.csv");
    let mut w = create(&metrics_path)?;
    writeln!(w, "snr_db,sndr_db,sfdr_db,signal_bin,band_edge_bin")?;
    writeln!(
        w,
        "{:.4},{:.4},{:.4},{},{}",
        report.snr_db, report.sndr_db, report.sfdr_db, report.signal_bin, report.band_edge_bin
    )?;
    w.flush()?;
    let mut manifest = Manifest::new("evaluate", cfg);
    manifest.input(bank_path)?;
    manifest.input(record_path)?;
    manifest.output(&spectrum_path)?;
    manifest.output(&metrics_path)?;
    manifest.write(out_dir)?;
    Ok(report)
}

type CsvWriter = fn(&MonteCarloReport, &mut BufWriter<File>) -> Result<()>;

/// Runs the Monte Carlo protocol; writes `convergence.csv`, `psd.csv` and
/// `trials.csv`.
pub fn montecarlo_command(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<MonteCarloReport> {
    let ctx = TrialContext::new(cfg.frontend.clone(), cfg.protocol())?;
    let m = &cfg.montecarlo;
    let report = monte_carlo(&ctx, m.half_width, m.n_trials, m.master_seed, threads)?;
    let mut manifest = Manifest::new("montecarlo", cfg);
    manifest.seed("master", m.master_seed);
    let outputs: [(&str, CsvWriter); 3] = [
        ("convergence.csv", |r, w| r.write_convergence_csv(w)),
        ("psd.csv", |r, w| r.write_psd_csv(w)),
        ("trials.csv", |r, w| r.write_trials_csv(w)),
    ];
    for (name, write) in outputs {
        let path = out_dir.join(name);
        let mut w = create(&path)?;
        write(&report, &mut w)?;
        w.flush()?;
        manifest.output(&path)?;
    }
    manifest.write(out_dir)?;
    Ok(report)
}

/// Writes the reference filter as `reference_filter.csv`.
pub fn design_filter_command(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    let h0 = reference_filter(cfg)?;
    let path = out_dir.join("reference_filter.csv");
    let mut w = create(&path)?;
    writeln!(w, "tap,h0")?;
    for (j, v) in h0.iter().enumerate() {
        writeln!(w, "{j},{v:e}")?;
    }
    w.flush()?;
    let mut manifest = Manifest::new("design-filter", cfg);
    manifest.output(&path)?;
    manifest.write(out_dir)?;
    Ok(path)
}

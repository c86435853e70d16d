use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::spectrum::{snr_metrics, welch_psd, SpectrumReport, DEFAULT_OVERLAP};
use crate::calibration::{batch_wiener, calibrate_rls, BatchOptions, RlsOptions};
use crate::error::{Error, Result};
use crate::estimator::{design_reference_filter, estimate, FilterBank};
use crate::frontend::{build_leapfrog, LeapfrogConfig};
use crate::simulator::{generate_reference, simulate, ControlRecord, InputSignal, SimOptions};

/// Independent uniform perturbation of every time constant.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationSpec {
    /// Each constant is multiplied by a draw from `U(1 − w, 1 + w)`.
    pub half_width: f64,
    pub seed: u64,
}

impl VariationSpec {
    /// Perturbed copy of `nominal`. Draws are taken in the order
    /// `tau_alpha`, `tau_beta`, `tau_kappa`, `tau_kappa0`; the clock is kept.
    pub fn perturb(&self, nominal: &LeapfrogConfig) -> Result<LeapfrogConfig> {
        if !(0.0..1.0).contains(&self.half_width) {
            return Err(Error::invalid(
                "half_width",
                format!("must lie in [0, 1), got {}", self.half_width),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let w = self.half_width;
        let mut factor = || {
            if w == 0.0 {
                1.0
            } else {
                rng.random_range(1.0 - w..1.0 + w)
            }
        };
        let mut cfg = nominal.clone();
        for v in cfg
            .tau_alpha
            .iter_mut()
            .chain(cfg.tau_beta.iter_mut())
            .chain(cfg.tau_kappa.iter_mut())
        {
            *v *= factor();
        }
        cfg.tau_kappa0 *= factor();
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Seed of trial `index` under `master_seed`.
pub fn trial_seed(master_seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// Train/test settings shared by every trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub taps: usize,
    /// Reference filter −3 dB point as a fraction of the sample rate.
    pub filter_band_edge: f64,
    pub training_length: usize,
    pub testing_length: usize,
    pub tone_frequency: f64,
    pub tone_amplitude_dbfs: f64,
    pub tone_phase: f64,
    pub full_scale: f64,
    pub reference_seed: u64,
    pub test_seed: u64,
    pub divergence_bound: f64,
    pub rls: RlsOptions,
    /// Also solve the batch oracle on every training record.
    pub oracle: bool,
    pub segment: usize,
    /// Upper edge of the evaluation band in Hz.
    pub band: f64,
}

impl Protocol {
    fn validate(&self) -> Result<()> {
        if self.rls.iterations > self.training_length {
            return Err(Error::invalid(
                "iterations",
                format!(
                    "{} exceeds the training length {}",
                    self.rls.iterations, self.training_length
                ),
            ));
        }
        if self.segment > self.testing_length {
            return Err(Error::invalid(
                "segment",
                format!("{} exceeds the testing length {}", self.segment, self.testing_length),
            ));
        }
        Ok(())
    }

    /// Transient periods discarded at the start of each record.
    pub fn washout(&self) -> usize {
        self.taps
    }

    fn tone(&self) -> InputSignal {
        InputSignal::tone_dbfs(self.tone_amplitude_dbfs, self.tone_frequency, self.tone_phase)
    }
}

/// `−R_κ0 / R_β1`; equal to `−τ_κ0 / τ_β1` since both resistors load `C_1`.
pub fn reference_scale(config: &LeapfrogConfig) -> f64 {
    -config.tau_kappa0 / config.tau_beta[0]
}

/// Simulates `washout + length + K` periods and drops the washout.
pub fn simulate_record(
    config: &LeapfrogConfig,
    protocol: &Protocol,
    input: &InputSignal,
    reference: &[i8],
    length: usize,
    seed: u64,
) -> Result<ControlRecord> {
    let sys = build_leapfrog(config)?;
    let n = protocol.washout() + length + protocol.taps;
    let opts = SimOptions {
        full_scale: protocol.full_scale,
        record_states: false,
        divergence_bound: protocol.divergence_bound,
        reference_seed: seed,
        ..SimOptions::default()
    };
    Ok(simulate(&sys, input, reference, n, config.clock_period, &opts)?.skip(protocol.washout()))
}

/// Figures of merit of one bank on one test record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub snr_db: f64,
    pub sndr_db: f64,
    pub sfdr_db: f64,
}

impl From<&SpectrumReport> for Metrics {
    fn from(r: &SpectrumReport) -> Self {
        Self {
            snr_db: r.snr_db,
            sndr_db: r.sndr_db,
            sfdr_db: r.sfdr_db,
        }
    }
}

/// Spectrum of `estimate(bank, test)`.
pub fn evaluate_bank(
    bank: &FilterBank,
    test: &ControlRecord,
    protocol: &Protocol,
) -> Result<SpectrumReport> {
    let u = estimate(bank, test)?;
    let psd = welch_psd(&u, 1.0 / test.clock_period, protocol.segment, DEFAULT_OVERLAP)?;
    snr_metrics(psd, protocol.tone_frequency, protocol.band)
}

/// Nominal-system data reused by every trial.
#[derive(Debug, Clone)]
pub struct TrialContext {
    pub nominal: LeapfrogConfig,
    pub protocol: Protocol,
    pub h0: Vec<f64>,
    /// Batch bank trained on the nominal frontend, applied unchanged to
    /// perturbed ones.
    pub uncalibrated: FilterBank,
    training_reference: Vec<i8>,
    test_reference: Vec<i8>,
}

impl TrialContext {
    pub fn new(nominal: LeapfrogConfig, protocol: Protocol) -> Result<Self> {
        nominal.validate()?;
        protocol.validate()?;
        let h0 = design_reference_filter(
            protocol.taps,
            protocol.filter_band_edge,
            reference_scale(&nominal),
        )?;
        let span = protocol.washout() + protocol.taps;
        let training_reference =
            generate_reference(protocol.reference_seed, protocol.training_length + span);
        let test_reference = generate_reference(protocol.test_seed, protocol.testing_length + span);
        let training = simulate_record(
            &nominal,
            &protocol,
            &InputSignal::Zero,
            &training_reference,
            protocol.training_length,
            protocol.reference_seed,
        )?;
        let uncalibrated = batch_wiener(&training, &h0, &BatchOptions::default())?;
        Ok(Self {
            nominal,
            protocol,
            h0,
            uncalibrated,
            training_reference,
            test_reference,
        })
    }

    pub fn training_record(&self, config: &LeapfrogConfig) -> Result<ControlRecord> {
        simulate_record(
            config,
            &self.protocol,
            &InputSignal::Zero,
            &self.training_reference,
            self.protocol.training_length,
            self.protocol.reference_seed,
        )
    }

    pub fn test_record(&self, config: &LeapfrogConfig) -> Result<ControlRecord> {
        simulate_record(
            config,
            &self.protocol,
            &self.protocol.tone(),
            &self.test_reference,
            self.protocol.testing_length,
            self.protocol.test_seed,
        )
    }
}

/// Everything measured on one perturbed circuit.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub index: usize,
    pub seed: u64,
    pub config: LeapfrogConfig,
    /// RLS metrics at each checkpoint, ascending in iterations.
    pub rls: Vec<(usize, Metrics)>,
    pub calibrated: Metrics,
    pub oracle: Option<Metrics>,
    pub uncalibrated: Metrics,
    /// PSDs in dB of the final RLS, oracle and uncalibrated estimates.
    pub psd_db: [Option<Vec<f64>>; 3],
    pub frequencies: Vec<f64>,
}

pub fn run_trial(ctx: &TrialContext, index: usize, variation: &VariationSpec) -> Result<TrialResult> {
    let config = variation.perturb(&ctx.nominal)?;
    let training = ctx.training_record(&config)?;
    let test = ctx.test_record(&config)?;
    let p = &ctx.protocol;
    let cal = calibrate_rls(&training, &ctx.h0, &p.rls)?;
    let mut rls = Vec::with_capacity(cal.checkpoints.len());
    for cp in &cal.checkpoints {
        rls.push((cp.iterations, Metrics::from(&evaluate_bank(&cp.bank, &test, p)?)));
    }
    let calibrated = evaluate_bank(&cal.bank, &test, p)?;
    let oracle = if p.oracle {
        let bank = batch_wiener(&training, &ctx.h0, &BatchOptions::default())?;
        Some(evaluate_bank(&bank, &test, p)?)
    } else {
        None
    };
    let uncalibrated = evaluate_bank(&ctx.uncalibrated, &test, p)?;
    Ok(TrialResult {
        index,
        seed: variation.seed,
        config,
        rls,
        calibrated: Metrics::from(&calibrated),
        oracle: oracle.as_ref().map(Metrics::from),
        uncalibrated: Metrics::from(&uncalibrated),
        frequencies: calibrated.psd.frequencies.clone(),
        psd_db: [
            Some(calibrated.psd.density_db()),
            oracle.map(|r| r.psd.density_db()),
            Some(uncalibrated.psd.density_db()),
        ],
    })
}

/// A trial that could not be completed.
#[derive(Debug, Clone, PartialEq)]
pub struct FailedTrial {
    pub index: usize,
    pub seed: u64,
    pub reason: String,
}

/// Average, minimum and maximum over trials, in dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub avg: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        Some(Self {
            avg: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub iterations: usize,
    pub method: &'static str,
    pub snr: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    /// Completed trials in index order.
    pub trials: Vec<TrialResult>,
    pub failed: Vec<FailedTrial>,
}

impl MonteCarloReport {
    pub fn calibrated(&self) -> Option<Summary> {
        Summary::of(self.trials.iter().map(|t| t.calibrated.snr_db))
    }

    pub fn uncalibrated(&self) -> Option<Summary> {
        Summary::of(self.trials.iter().map(|t| t.uncalibrated.snr_db))
    }

    pub fn oracle(&self) -> Option<Summary> {
        Summary::of(self.trials.iter().filter_map(|t| t.oracle.map(|m| m.snr_db)))
    }

    /// Fig. 3 data: RLS per checkpoint, with the oracle and uncalibrated
    /// figures repeated at each checkpoint as reference lines.
    pub fn convergence(&self) -> Vec<ConvergenceRow> {
        let Some(first) = self.trials.first() else {
            return Vec::new();
        };
        let mut rows = Vec::new();
        for (i, &(iterations, _)) in first.rls.iter().enumerate() {
            let at = |t: &TrialResult| t.rls.get(i).map(|r| r.1.snr_db);
            let constant = [("oracle", self.oracle()), ("uncalibrated", self.uncalibrated())];
            if let Some(snr) = Summary::of(self.trials.iter().filter_map(at)) {
                rows.push(ConvergenceRow {
                    iterations,
                    method: "rls",
                    snr,
                });
            }
            for (method, summary) in constant {
                if let Some(snr) = summary {
                    rows.push(ConvergenceRow {
                        iterations,
                        method,
                        snr,
                    });
                }
            }
        }
        rows
    }

    pub fn write_convergence_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iterations,method,avg_db,min_db,max_db")?;
        for r in self.convergence() {
            writeln!(
                w,
                "{},{},{:.4},{:.4},{:.4}",
                r.iterations, r.method, r.snr.avg, r.snr.min, r.snr.max
            )?;
        }
        Ok(())
    }

    /// PSDs of the first completed trial.
    pub fn write_psd_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "frequency_hz,rls,oracle,uncalibrated")?;
        let Some(t) = self.trials.first() else {
            return Ok(());
        };
        for (k, f) in t.frequencies.iter().enumerate() {
            let col = |c: &Option<Vec<f64>>| {
                c.as_ref()
                    .map_or_else(|| "nan".to_string(), |v| format!("{:.4}", v[k]))
            };
            writeln!(
                w,
                "{f:.3},{},{},{}",
                col(&t.psd_db[0]),
                col(&t.psd_db[1]),
                col(&t.psd_db[2])
            )?;
        }
        Ok(())
    }

    pub fn write_trials_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "trial,seed,status,rls_snr_db,rls_sndr_db,oracle_snr_db,uncalibrated_snr_db"
        )?;
        let mut rows: Vec<(usize, String)> = self
            .trials
            .iter()
            .map(|t| {
                let oracle = t.oracle.map_or_else(|| "nan".into(), |m| format!("{:.4}", m.snr_db));
                let line = format!(
                    "{},{},ok,{:.4},{:.4},{},{:.4}",
                    t.index,
                    t.seed,
                    t.calibrated.snr_db,
                    t.calibrated.sndr_db,
                    oracle,
                    t.uncalibrated.snr_db
                );
                (t.index, line)
            })
            .chain(self.failed.iter().map(|f| {
                (f.index, format!("{},{},failed,nan,nan,nan,nan", f.index, f.seed))
            }))
            .collect();
        rows.sort_by_key(|r| r.0);
        for (_, line) in rows {
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Runs `n_trials` perturbed circuits on a pool of `threads` workers
/// (available parallelism when `None`). Unstable trials are recorded as
/// failed; any other error aborts the run.
pub fn monte_carlo(
    ctx: &TrialContext,
    half_width: f64,
    n_trials: usize,
    master_seed: u64,
    threads: Option<usize>,
) -> Result<MonteCarloReport> {
    if n_trials == 0 {
        return Err(Error::invalid("n_trials", "must be at least 1"));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid("threads", e.to_string()))?;
    let outcomes: Vec<(usize, u64, Result<TrialResult>)> = pool.install(|| {
        (0..n_trials)
            .into_par_iter()
            .map(|i| {
                let seed = trial_seed(master_seed, i);
                let spec = VariationSpec { half_width, seed };
                (i, seed, run_trial(ctx, i, &spec))
            })
            .collect()
    });
    let mut report = MonteCarloReport {
        trials: Vec::new(),
        failed: Vec::new(),
    };
    for (index, seed, outcome) in outcomes {
        match outcome {
            Ok(t) => report.trials.push(t),
            Err(e @ (Error::Unstable { .. } | Error::RlsBreakdown { .. } | Error::RankDeficient { .. })) => {
                report.failed.push(FailedTrial {
                    index,
                    seed,
                    reason: e.to_string(),
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

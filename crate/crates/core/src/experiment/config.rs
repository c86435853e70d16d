use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{LmsOptions, RlsOptions, DEFAULT_LMS_BOUND};
use crate::error::{Error, Result};
use crate::evaluation::Protocol;
use crate::frontend::LeapfrogConfig;

pub const NOMINAL_N6: &str = include_str!("../../../../presets/nominal_n6.toml");
pub const TINY_N2: &str = include_str!("../../../../presets/tiny_n2.toml");

/// Names of the presets compiled into the binary.
pub const PRESETS: [(&str, &str); 2] = [("nominal_n6", NOMINAL_N6), ("tiny_n2", TINY_N2)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    /// Input amplitude in DAC units that corresponds to 0 dBFS.
    pub full_scale: f64,
    /// Test tone in Hz.
    pub tone_frequency: f64,
    pub tone_amplitude_dbfs: f64,
    /// Test tone phase in radians.
    pub tone_phase: f64,
    /// `R_κ1 / R_κ0`; must agree with `frontend.tau_kappa[0] / frontend.tau_kappa0`.
    pub reference_ratio: f64,
    pub reference_seed: u64,
    pub test_seed: u64,
    pub training_length: usize,
    pub testing_length: usize,
    pub divergence_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub taps: usize,
    /// Reference filter −3 dB point as a fraction of the sample rate.
    pub band_edge: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rls,
    Lms,
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub method: Method,
    pub lambda: f64,
    pub delta: f64,
    pub iterations: usize,
    pub checkpoints: Vec<usize>,
    pub block_size: usize,
    pub lms_step_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub segment: usize,
    /// Upper edge of the evaluation band in Hz.
    pub band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub n_trials: usize,
    pub half_width: f64,
    pub master_seed: u64,
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub frontend: LeapfrogConfig,
    pub signal: SignalConfig,
    pub estimator: EstimatorConfig,
    pub calibration: CalibrationConfig,
    pub evaluation: EvaluationConfig,
    pub montecarlo: MonteCarloConfig,
}

impl ExperimentConfig {
    /// Parses and validates. Syntax errors carry the line and column.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
        Self::parse(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.frontend.validate().map_err(|e| prefix("frontend", e))?;
        let fs = self.frontend.sample_rate();
        let s = &self.signal;
        positive("signal.full_scale", s.full_scale)?;
        positive("signal.tone_frequency", s.tone_frequency)?;
        positive("signal.reference_ratio", s.reference_ratio)?;
        positive("signal.divergence_bound", s.divergence_bound)?;
        finite("signal.tone_amplitude_dbfs", s.tone_amplitude_dbfs)?;
        finite("signal.tone_phase", s.tone_phase)?;
        let implied = self.frontend.reference_ratio();
        if ((implied - s.reference_ratio) / s.reference_ratio).abs() > 1e-9 {
            return Err(Error::invalid(
                "signal.reference_ratio",
                format!(
                    "{} disagrees with frontend.tau_kappa[0] / frontend.tau_kappa0 = {implied}",
                    s.reference_ratio
                ),
            ));
        }
        let e = &self.estimator;
        if e.taps == 0 || e.taps % 2 != 0 {
            return Err(Error::invalid("estimator.taps", "must be even and positive"));
        }
        if !(e.band_edge > 0.0 && e.band_edge < 0.5) {
            return Err(Error::invalid("estimator.band_edge", "must lie in (0, 0.5)"));
        }
        let c = &self.calibration;
        if !(c.lambda > 0.0 && c.lambda <= 1.0) {
            return Err(Error::invalid("calibration.lambda", "must lie in (0, 1]"));
        }
        positive("calibration.delta", c.delta)?;
        positive("calibration.lms_step_size", c.lms_step_size)?;
        if c.block_size == 0 {
            return Err(Error::invalid("calibration.block_size", "must be positive"));
        }
        if c.iterations > s.training_length {
            return Err(Error::invalid(
                "calibration.iterations",
                format!("exceeds signal.training_length = {}", s.training_length),
            ));
        }
        if let Some(&bad) = c.checkpoints.iter().find(|&&k| k == 0 || k > c.iterations) {
            return Err(Error::invalid(
                "calibration.checkpoints",
                format!("{bad} is outside 1..={}", c.iterations),
            ));
        }
        let v = &self.evaluation;
        if !v.segment.is_power_of_two() || v.segment < 2 || v.segment > s.testing_length {
            return Err(Error::invalid(
                "evaluation.segment",
                format!("must be a power of two no larger than signal.testing_length = {}", s.testing_length),
            ));
        }
        if !(v.band > 0.0 && v.band <= fs / 2.0) {
            return Err(Error::invalid("evaluation.band", format!("must lie in (0, {}] Hz", fs / 2.0)));
        }
        if s.tone_frequency > v.band {
            return Err(Error::invalid(
                "signal.tone_frequency",
                format!("lies above evaluation.band = {} Hz", v.band),
            ));
        }
        let m = &self.montecarlo;
        if m.n_trials == 0 {
            return Err(Error::invalid("montecarlo.n_trials", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&m.half_width) {
            return Err(Error::invalid("montecarlo.half_width", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Overrides the reference and Monte Carlo seeds.
    pub fn override_seed(&mut self, seed: u64) {
        self.signal.reference_seed = seed;
        self.montecarlo.master_seed = seed;
    }

    pub fn rls_options(&self) -> RlsOptions {
        let c = &self.calibration;
        RlsOptions {
            lambda: c.lambda,
            delta: c.delta,
            iterations: c.iterations,
            checkpoints: c.checkpoints.clone(),
            block_size: c.block_size,
        }
    }

    pub fn lms_options(&self) -> LmsOptions {
        let c = &self.calibration;
        LmsOptions {
            step_size: c.lms_step_size,
            iterations: c.iterations,
            checkpoints: c.checkpoints.clone(),
            divergence_bound: DEFAULT_LMS_BOUND,
        }
    }

    pub fn protocol(&self) -> Protocol {
        let s = &self.signal;
        Protocol {
            taps: self.estimator.taps,
            filter_band_edge: self.estimator.band_edge,
            training_length: s.training_length,
            testing_length: s.testing_length,
            tone_frequency: s.tone_frequency,
            tone_amplitude_dbfs: s.tone_amplitude_dbfs,
            tone_phase: s.tone_phase,
            full_scale: s.full_scale,
            reference_seed: s.reference_seed,
            test_seed: s.test_seed,
            divergence_bound: s.divergence_bound,
            rls: self.rls_options(),
            oracle: true,
            segment: self.evaluation.segment,
            band: self.evaluation.band,
        }
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => Error::InvalidParameter {
            name: format!("{section}.{name}"),
            reason,
        },
        other => other,
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::invalid(name, "must be finite"));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::invalid(name, format!("must be finite and positive, got {v}")));
    }
    Ok(())
}

//! Spectral figures of merit and the train/test Monte Carlo protocol.

mod montecarlo;
mod spectrum;

pub use montecarlo::{
    evaluate_bank, monte_carlo, reference_scale, run_trial, simulate_record, trial_seed,
    ConvergenceRow, FailedTrial, Metrics, MonteCarloReport, Protocol, Summary, TrialContext,
    TrialResult, VariationSpec,
};
pub use spectrum::{
    hann, snr_metrics, welch_psd, Psd, SpectrumReport, DEFAULT_OVERLAP, DEFAULT_SEGMENT,
    LEAKAGE_BINS, MAX_HARMONIC,
};

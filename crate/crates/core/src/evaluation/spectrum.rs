use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Bins on each side of a tone attributed to it.
pub const LEAKAGE_BINS: usize = 3;
/// Harmonics `2..=MAX_HARMONIC` are excluded from the SNR noise floor.
pub const MAX_HARMONIC: usize = 10;
pub const DEFAULT_SEGMENT: usize = 1 << 15;
pub const DEFAULT_OVERLAP: f64 = 0.5;

/// One-sided power spectral density from Welch's method.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub frequencies: Vec<f64>,
    /// Power per hertz, linear.
    pub density: Vec<f64>,
    pub bin_width: f64,
    pub sample_rate: f64,
    pub segments: usize,
}

impl Psd {
    /// `Σ density · bin_width`.
    pub fn total_power(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width
    }

    /// Bin containing `frequency`, rounded to the nearest.
    pub fn bin(&self, frequency: f64) -> usize {
        (frequency / self.bin_width).round() as usize
    }

    pub fn density_db(&self) -> Vec<f64> {
        self.density.iter().map(|&p| 10.0 * p.log10()).collect()
    }

    fn band_power(&self, bins: impl Iterator<Item = usize>) -> f64 {
        bins.map(|k| self.density[k]).sum::<f64>() * self.bin_width
    }
}

/// `w[n] = 0.5 − 0.5 cos(2πn/L)` (periodic).
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Hann-windowed Welch estimate with the given segment length and overlap
/// fraction. Normalized so that [`Psd::total_power`] equals the
/// window-weighted mean power of `seq`.
pub fn welch_psd(seq: &[f64], sample_rate: f64, segment: usize, overlap: f64) -> Result<Psd> {
    if segment < 2 || !segment.is_power_of_two() {
        return Err(Error::invalid("segment", format!("must be a power of two, got {segment}")));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid("overlap", format!("must lie in [0, 1), got {overlap}")));
    }
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::invalid("sample_rate", "must be positive"));
    }
    if seq.len() < segment {
        return Err(Error::TooShort {
            required: segment,
            actual: seq.len(),
        });
    }
    let hop = (segment - (overlap * segment as f64).round() as usize).max(1);
    let window = hann(segment);
    let energy: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(segment);
    let half = segment / 2;
    let mut acc = vec![0.0; half + 1];
    let mut buf = vec![Complex64::new(0.0, 0.0); segment];
    let mut segments = 0;
    let mut start = 0;
    while start + segment <= seq.len() {
        for ((b, &x), &w) in buf.iter_mut().zip(&seq[start..start + segment]).zip(&window) {
            *b = Complex64::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        segments += 1;
        start += hop;
    }
    let scale = 1.0 / (sample_rate * energy * segments as f64);
    let density = acc
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let one_sided = if k == 0 || k == half { 1.0 } else { 2.0 };
            p * scale * one_sided
        })
        .collect();
    let bin_width = sample_rate / segment as f64;
    Ok(Psd {
        frequencies: (0..=half).map(|k| k as f64 * bin_width).collect(),
        density,
        bin_width,
        sample_rate,
        segments,
    })
}

/// PSD plus the in-band figures of merit for one tone.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub psd: Psd,
    pub snr_db: f64,
    pub sndr_db: f64,
    pub sfdr_db: f64,
    pub signal_bin: usize,
    pub band_edge_bin: usize,
}

/// Folds `frequency` into `[0, fs/2]`.
fn alias(frequency: f64, sample_rate: f64) -> f64 {
    let f = frequency.rem_euclid(sample_rate);
    if f > sample_rate / 2.0 {
        sample_rate - f
    } else {
        f
    }
}

/// SNR, SNDR and SFDR of a tone at `signal_freq` within `[0, band_edge]` Hz.
///
/// Signal power is the sum over the signal bin ± [`LEAKAGE_BINS`]. SNDR
/// counts every other in-band bin as error. SNR additionally drops the bins
/// of harmonics `2..=10` (aliased) that fall in band. SFDR compares the
/// signal with the largest spur, integrated over the same leakage width
/// around the strongest remaining in-band bin.
pub fn snr_metrics(psd: Psd, signal_freq: f64, band_edge: f64) -> Result<SpectrumReport> {
    let last = psd.density.len() - 1;
    let band_edge_bin = psd.bin(band_edge).min(last);
    if !(band_edge > 0.0) || band_edge > psd.sample_rate / 2.0 {
        return Err(Error::invalid("band", format!("edge {band_edge} Hz is outside (0, fs/2]")));
    }
    if !(signal_freq > 0.0) || signal_freq > band_edge {
        return Err(Error::invalid(
            "signal_frequency",
            format!("{signal_freq} Hz is outside the band [0, {band_edge}] Hz"),
        ));
    }
    let signal_bin = psd.bin(signal_freq);
    let window = |center: usize| {
        center.saturating_sub(LEAKAGE_BINS)..=(center + LEAKAGE_BINS).min(band_edge_bin)
    };
    let mut is_signal = vec![false; band_edge_bin + 1];
    for k in window(signal_bin) {
        is_signal[k] = true;
    }
    let mut is_harmonic = vec![false; band_edge_bin + 1];
    for h in 2..=MAX_HARMONIC {
        let bin = psd.bin(alias(h as f64 * signal_freq, psd.sample_rate));
        if bin <= band_edge_bin {
            for k in window(bin) {
                is_harmonic[k] = !is_signal[k];
            }
        }
    }
    let signal = psd.band_power(window(signal_bin));
    let distortion_and_noise = psd.band_power((0..=band_edge_bin).filter(|&k| !is_signal[k]));
    let noise =
        psd.band_power((0..=band_edge_bin).filter(|&k| !is_signal[k] && !is_harmonic[k]));
    let peak = (0..=band_edge_bin)
        .filter(|&k| !is_signal[k])
        .max_by(|&a, &b| psd.density[a].total_cmp(&psd.density[b]));
    let spur = peak.map_or(0.0, |p| psd.band_power(window(p).filter(|&k| !is_signal[k])));
    let db = |num: f64, den: f64| 10.0 * (num / den).log10();
    Ok(SpectrumReport {
        snr_db: db(signal, noise),
        sndr_db: db(signal, distortion_and_noise),
        sfdr_db: db(signal, spur),
        signal_bin,
        band_edge_bin,
        psd,
    })
}

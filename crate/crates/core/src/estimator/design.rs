use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Default taps per filter.
pub const DEFAULT_TAPS: usize = 512;

const EDGE_GAIN_DB: f64 = -3.0;

/// `w[j] = 0.54 - 0.46 cos(2πj/K)`, symmetric about `j = K/2`.
pub fn hamming(taps: usize) -> Vec<f64> {
    (0..taps)
        .map(|j| 0.54 - 0.46 * (2.0 * PI * j as f64 / taps as f64).cos())
        .collect()
}

/// Hamming-windowed sinc with cutoff `cutoff` (fraction of the sample rate),
/// centred on tap `K/2` and normalised to unit DC gain.
pub fn windowed_sinc(taps: usize, cutoff: f64) -> Vec<f64> {
    let center = (taps / 2) as f64;
    let mut h: Vec<f64> = hamming(taps)
        .into_iter()
        .enumerate()
        .map(|(j, w)| {
            let t = j as f64 - center;
            let sinc = if t == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * t).sin() / (PI * t)
            };
            w * sinc
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// `|H(f)|` of an FIR at normalised frequency `f`.
pub fn magnitude_response(h: &[f64], f: f64) -> f64 {
    let (re, im) = h.iter().enumerate().fold((0.0, 0.0), |(re, im), (j, &c)| {
        let phi = 2.0 * PI * f * j as f64;
        (re + c * phi.cos(), im - c * phi.sin())
    });
    re.hypot(im)
}

/// Reference filter `h_0`: a Hamming-windowed sinc lowpass whose gain at
/// `band_edge` (fraction of the sample rate) is 3 dB below its DC gain,
/// multiplied by `scale`.
///
/// The cutoff of the underlying sinc is found by bisection on the edge gain.
pub fn design_reference_filter(taps: usize, band_edge: f64, scale: f64) -> Result<Vec<f64>> {
    if taps == 0 || taps % 2 != 0 {
        return Err(Error::invalid("taps", format!("must be even and positive, got {taps}")));
    }
    if !(band_edge > 0.0 && band_edge < 0.5) {
        return Err(Error::invalid(
            "band_edge",
            format!("must lie in (0, 0.5), got {band_edge}"),
        ));
    }
    if !scale.is_finite() {
        return Err(Error::invalid("scale", "must be finite"));
    }
    let target = 10f64.powf(EDGE_GAIN_DB / 20.0);
    let edge_gain = |cutoff: f64| magnitude_response(&windowed_sinc(taps, cutoff), band_edge);
    let (mut lo, mut hi) = (1e-6, 0.5 - 1e-9);
    if edge_gain(lo) > target || edge_gain(hi) < target {
        return Err(Error::invalid(
            "band_edge",
            format!("a {taps}-tap filter cannot place -3 dB at {band_edge}"),
        ));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if edge_gain(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut h = windowed_sinc(taps, 0.5 * (lo + hi));
    h.iter_mut().for_each(|v| *v *= scale);
    Ok(h)
}

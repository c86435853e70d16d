//! Learning `h_1..h_N` and `û_0` from control sequences alone.
//!
//! Every method minimizes `Σ_k ((h_0 ∗ s_0)[k] + hᵀ s[k])²` over the valid
//! windows of a training record, where `s[k]` is the stacked regressor of
//! [`Regressor`] and `h_0` is held fixed.

mod batch;
mod rls;

use nalgebra::{DMatrix, DVector};

pub use batch::{batch_wiener, orthogonality, BatchOptions, GramSystem};
pub use rls::RlsState;

use crate::error::{Error, Result};
use crate::estimator::{reference_contribution, FilterBank};
use crate::simulator::ControlRecord;

pub const DEFAULT_LAMBDA: f64 = 1.0 - 1e-12;
pub const DEFAULT_DELTA: f64 = 0.01;
pub const DEFAULT_BLOCK_SIZE: usize = 64;
/// `‖h‖` above which LMS is declared divergent.
pub const DEFAULT_LMS_BOUND: f64 = 1e6;

/// Stacked regressor `s_1[k..k+K] ‖ … ‖ s_N[k..k+K] ‖ 1` for window `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor(DVector<f64>);

impl Regressor {
    /// Regressor of window `start` (record indices `start..start + taps`).
    pub fn at(record: &ControlRecord, taps: usize, start: usize) -> Regressor {
        let mut v = DVector::zeros(record.order() * taps + 1);
        fill_regressor(record, taps, start, v.as_mut_slice());
        Regressor(v)
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn fill_regressor(record: &ControlRecord, taps: usize, start: usize, out: &mut [f64]) {
    for (l, chunk) in out.chunks_mut(taps).take(record.order()).enumerate() {
        let s = &record.channel(l + 1)[start..start + taps];
        for (o, &b) in chunk.iter_mut().zip(s) {
            *o = f64::from(b);
        }
    }
    out[out.len() - 1] = 1.0;
}

/// Coefficients after a given number of updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iterations: usize,
    pub bank: FilterBank,
    /// Mean a priori `û²` over the updates since the previous checkpoint.
    /// With blocked RLS the a priori estimate uses the coefficients at the
    /// start of each block.
    pub residual_power: f64,
}

/// Final bank plus snapshots at the requested checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub bank: FilterBank,
    pub checkpoints: Vec<Checkpoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlsOptions {
    pub lambda: f64,
    pub delta: f64,
    pub iterations: usize,
    /// Iteration counts at which to snapshot the bank; values above
    /// `iterations` are ignored.
    pub checkpoints: Vec<usize>,
    /// Updates folded into one rank-`b` step. `1` runs the plain recursion.
    pub block_size: usize,
}

impl Default for RlsOptions {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            delta: DEFAULT_DELTA,
            iterations: 1 << 14,
            checkpoints: (10..=14).map(|p| 1 << p).collect(),
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmsOptions {
    pub step_size: f64,
    pub iterations: usize,
    pub checkpoints: Vec<usize>,
    pub divergence_bound: f64,
}

impl LmsOptions {
    /// Step size `0.5 / K_Σ`, half the stability bound for ±1 regressors.
    pub fn default_step_size(order: usize, taps: usize) -> f64 {
        0.5 / (order * taps + 1) as f64
    }
}

/// Shared preconditions; returns the reference contribution per window.
fn prepare(record: &ControlRecord, h0: &[f64], iterations: usize) -> Result<Vec<f64>> {
    let taps = h0.len();
    if taps == 0 || taps % 2 != 0 {
        return Err(Error::invalid("taps", format!("must be even and positive, got {taps}")));
    }
    let windows = record.n_samples().saturating_sub(taps);
    if iterations > windows {
        return Err(Error::TooShort {
            required: iterations + taps,
            actual: record.n_samples(),
        });
    }
    let mut refs = reference_contribution(h0, record.channel(0))?;
    refs.truncate(iterations);
    Ok(refs)
}

fn bank_from(h0: &[f64], order: usize, params: &[f64]) -> Result<FilterBank> {
    let mut bank = FilterBank::with_reference(h0.to_vec(), order)?;
    bank.set_parameters(params)?;
    Ok(bank)
}

fn sorted_checkpoints(requested: &[usize], iterations: usize) -> Vec<usize> {
    let mut cps: Vec<usize> = requested
        .iter()
        .copied()
        .filter(|&c| c > 0 && c <= iterations)
        .collect();
    cps.sort_unstable();
    cps.dedup();
    cps
}

/// RLS over the first `opts.iterations` windows of a `u = 0` training record.
pub fn calibrate_rls(record: &ControlRecord, h0: &[f64], opts: &RlsOptions) -> Result<Calibration> {
    if opts.block_size == 0 {
        return Err(Error::invalid("block_size", "must be positive"));
    }
    let refs = prepare(record, h0, opts.iterations)?;
    let taps = h0.len();
    let order = record.order();
    let mut state = RlsState::new(order, taps, opts.delta, opts.lambda)?;
    let dim = state.dim();
    let cps = sorted_checkpoints(&opts.checkpoints, opts.iterations);
    let mut checkpoints = Vec::with_capacity(cps.len());
    let mut next_cp = cps.iter().peekable();
    let mut energy = 0.0;
    let mut since = 0;
    let mut s = DMatrix::zeros(dim, opts.block_size);
    let mut k = 0;
    while k < opts.iterations {
        let limit = next_cp.peek().map_or(opts.iterations, |&&c| c);
        let b = opts.block_size.min(limit - k);
        if b == 1 {
            let reg = Regressor::at(record, taps, k);
            let u = state.step(reg.values(), refs[k])?;
            energy += u * u;
        } else {
            if s.ncols() != b {
                s = DMatrix::zeros(dim, b);
            }
            for c in 0..b {
                fill_regressor(record, taps, k + c, s.column_mut(c).as_mut_slice());
            }
            let u = state.step_block(&s, &refs[k..k + b])?;
            energy += u.iter().map(|x| x * x).sum::<f64>();
        }
        k += b;
        since += b;
        if next_cp.peek() == Some(&&k) {
            next_cp.next();
            checkpoints.push(Checkpoint {
                iterations: k,
                bank: bank_from(h0, order, state.h().as_slice())?,
                residual_power: energy / since as f64,
            });
            energy = 0.0;
            since = 0;
        }
    }
    Ok(Calibration {
        bank: bank_from(h0, order, state.h().as_slice())?,
        checkpoints,
    })
}

/// LMS: `h ← h − μ û[k] s[k]` over the first `opts.iterations` windows.
pub fn calibrate_lms(record: &ControlRecord, h0: &[f64], opts: &LmsOptions) -> Result<Calibration> {
    if !(opts.step_size.is_finite() && opts.step_size > 0.0) {
        return Err(Error::invalid("lms_step_size", "must be positive"));
    }
    let refs = prepare(record, h0, opts.iterations)?;
    let taps = h0.len();
    let order = record.order();
    let dim = order * taps + 1;
    let cps = sorted_checkpoints(&opts.checkpoints, opts.iterations);
    let mut next_cp = cps.iter().peekable();
    let mut checkpoints = Vec::with_capacity(cps.len());
    let mut h = vec![0.0; dim];
    let mut reg = vec![0.0; dim];
    let (mut energy, mut since) = (0.0, 0);
    for k in 0..opts.iterations {
        fill_regressor(record, taps, k, &mut reg);
        let u = refs[k] + h.iter().zip(&reg).map(|(a, b)| a * b).sum::<f64>();
        let scale = opts.step_size * u;
        for (hi, si) in h.iter_mut().zip(&reg) {
            *hi -= scale * si;
        }
        let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm <= opts.divergence_bound) {
            return Err(Error::LmsDiverged {
                iteration: k,
                norm,
                threshold: opts.divergence_bound,
            });
        }
        energy += u * u;
        since += 1;
        if next_cp.peek() == Some(&&(k + 1)) {
            next_cp.next();
            checkpoints.push(Checkpoint {
                iterations: k + 1,
                bank: bank_from(h0, order, &h)?,
                residual_power: energy / since as f64,
            });
            energy = 0.0;
            since = 0;
        }
    }
    Ok(Calibration {
        bank: bank_from(h0, order, &h)?,
        checkpoints,
    })
}

/// Mean of `û²` when `bank` is applied to `record`.
pub fn residual_power(bank: &FilterBank, record: &ControlRecord) -> Result<f64> {
    let u = crate::estimator::estimate(bank, record)?;
    Ok(u.iter().map(|x| x * x).sum::<f64>() / u.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::generate_reference;

    /// Record whose controls follow `s_ℓ = sign` of a fixed mixture of the
    /// reference so that the residual is learnable.
    fn synthetic_record(order: usize, n: usize, seed: u64) -> ControlRecord {
        let s0 = generate_reference(seed, n);
        let mut channels = vec![s0.clone()];
        for l in 0..order {
            let noise = generate_reference(seed + 1 + l as u64, n);
            let c: Vec<i8> = (0..n)
                .map(|k| {
                    let lag = s0[k.saturating_sub(l + 1)];
                    if (k + l) % 3 == 0 { noise[k] } else { lag }
                })
                .collect();
            channels.push(c);
        }
        ControlRecord::new(1e-9, seed, channels, None).unwrap()
    }

    fn h0(taps: usize) -> Vec<f64> {
        crate::estimator::design_reference_filter(taps, 0.1, -2.0).unwrap()
    }

    #[test]
    fn regressor_layout() {
        let rec = synthetic_record(2, 20, 3);
        let reg = Regressor::at(&rec, 4, 5);
        assert_eq!(reg.len(), 9);
        assert_eq!(reg.values()[8], 1.0);
        for j in 0..4 {
            assert_eq!(reg.values()[j], f64::from(rec.channel(1)[5 + j]));
            assert_eq!(reg.values()[4 + j], f64::from(rec.channel(2)[5 + j]));
        }
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let rec = synthetic_record(2, 64, 1);
        let opts = RlsOptions {
            iterations: 0,
            ..RlsOptions::default()
        };
        let cal = calibrate_rls(&rec, &h0(8), &opts).unwrap();
        assert!(cal.bank.parameters().iter().all(|&x| x == 0.0));
        assert_eq!(cal.bank.filter(0), h0(8).as_slice());
        assert!(cal.checkpoints.is_empty());
    }

    #[test]
    fn blocked_and_sequential_agree() {
        let rec = synthetic_record(2, 400, 5);
        let base = RlsOptions {
            iterations: 300,
            checkpoints: vec![32, 100, 256],
            block_size: 1,
            ..RlsOptions::default()
        };
        let seq = calibrate_rls(&rec, &h0(8), &base).unwrap();
        let blk = calibrate_rls(&rec, &h0(8), &RlsOptions { block_size: 24, ..base }).unwrap();
        let diff = seq
            .bank
            .parameters()
            .iter()
            .zip(blk.bank.parameters())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");
        let iters: Vec<usize> = blk.checkpoints.iter().map(|c| c.iterations).collect();
        assert_eq!(iters, vec![32, 100, 256]);
        for (a, b) in seq.checkpoints.iter().zip(&blk.checkpoints) {
            let d = a
                .bank
                .parameters()
                .iter()
                .zip(b.bank.parameters())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(d < 1e-9, "checkpoint {}: {d}", a.iterations);
        }
    }

    #[test]
    fn too_many_iterations() {
        let rec = synthetic_record(1, 50, 2);
        let opts = RlsOptions {
            iterations: 43,
            ..RlsOptions::default()
        };
        assert!(matches!(
            calibrate_rls(&rec, &h0(8), &opts),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn lms_single_step() {
        let rec = synthetic_record(2, 40, 9);
        let taps = 8;
        let h0 = h0(taps);
        let mu = 0.01;
        let opts = LmsOptions {
            step_size: mu,
            iterations: 1,
            checkpoints: vec![],
            divergence_bound: DEFAULT_LMS_BOUND,
        };
        let cal = calibrate_lms(&rec, &h0, &opts).unwrap();
        let r = reference_contribution(&h0, rec.channel(0)).unwrap()[0];
        let reg = Regressor::at(&rec, taps, 0);
        for (got, s) in cal.bank.parameters().iter().zip(reg.values().iter()) {
            assert!((got + mu * r * s).abs() < 1e-15);
        }
    }

    #[test]
    fn lms_divergence_is_reported() {
        let rec = synthetic_record(2, 400, 4);
        let opts = LmsOptions {
            step_size: 1.0,
            iterations: 300,
            checkpoints: vec![],
            divergence_bound: 1e3,
        };
        assert!(matches!(
            calibrate_lms(&rec, &h0(8), &opts),
            Err(Error::LmsDiverged { .. })
        ));
    }

    #[test]
    fn lms_residual_close_to_rls() {
        let (order, taps, n) = (2, 8, 60_000);
        let rec = synthetic_record(order, n + taps, 11);
        let h0 = h0(taps);
        let rls = calibrate_rls(
            &rec,
            &h0,
            &RlsOptions {
                iterations: n,
                checkpoints: vec![],
                ..RlsOptions::default()
            },
        )
        .unwrap();
        let lms = calibrate_lms(
            &rec,
            &h0,
            &LmsOptions {
                step_size: 0.1 / (order * taps + 1) as f64,
                iterations: n,
                checkpoints: vec![],
                divergence_bound: DEFAULT_LMS_BOUND,
            },
        )
        .unwrap();
        let test = synthetic_record(order, 20_000, 12);
        let p_rls = residual_power(&rls.bank, &test).unwrap();
        let p_lms = residual_power(&lms.bank, &test).unwrap();
        let gap_db = 10.0 * (p_lms / p_rls).log10();
        assert!(gap_db < 3.0, "LMS {gap_db:.2} dB above RLS");
    }
}

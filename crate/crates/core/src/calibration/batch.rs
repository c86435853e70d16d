use nalgebra::{DMatrix, DVector};

use super::{bank_from, fill_regressor};
use crate::error::{Error, Result};
use crate::estimator::{estimate, reference_contribution, FilterBank};
use crate::linalg::solve_spd;
use crate::simulator::ControlRecord;

const REFINEMENTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchOptions {
    /// Ridge term added to the Gram matrix. Zero gives the plain normal
    /// equations; `δ > 0` matches RLS initialized with `V = I/δ` and `λ = 1`.
    pub delta: f64,
    /// Number of leading windows to use; all valid windows when `None`.
    pub samples: Option<usize>,
}

/// Empirical normal equations `G h = −r` over `windows` regressors.
#[derive(Debug, Clone)]
pub struct GramSystem {
    /// `Σ_k s[k] s[k]ᵀ`; entries are exact integers.
    pub gram: DMatrix<f64>,
    /// `Σ_k (h_0 ∗ s_0)[k] s[k]`.
    pub cross: DVector<f64>,
    pub windows: usize,
}

impl GramSystem {
    pub fn build(record: &ControlRecord, h0: &[f64], samples: Option<usize>) -> Result<Self> {
        let taps = h0.len();
        let n = record.n_samples();
        if taps == 0 || n <= taps {
            return Err(Error::TooShort {
                required: taps + 1,
                actual: n,
            });
        }
        let available = n - taps;
        let windows = samples.unwrap_or(available);
        if windows > available {
            return Err(Error::TooShort {
                required: windows + taps,
                actual: n,
            });
        }
        if windows == 0 {
            return Err(Error::invalid("samples", "must be positive"));
        }
        let order = record.order();
        let dim = order * taps + 1;
        let mut gram = DMatrix::zeros(dim, dim);
        for l in 0..order {
            let sl = record.channel(l + 1);
            for m in l..order {
                let sm = record.channel(m + 1);
                let block = toeplitz_block(sl, sm, taps, windows);
                for i in 0..taps {
                    for j in 0..taps {
                        let v = block[i * taps + j] as f64;
                        gram[(l * taps + i, m * taps + j)] = v;
                        gram[(m * taps + j, l * taps + i)] = v;
                    }
                }
            }
            let mut sum: i64 = sl[..windows].iter().map(|&b| i64::from(b)).sum();
            for i in 0..taps {
                gram[(l * taps + i, dim - 1)] = sum as f64;
                gram[(dim - 1, l * taps + i)] = sum as f64;
                if i + 1 < taps {
                    sum += i64::from(sl[windows + i]) - i64::from(sl[i]);
                }
            }
        }
        gram[(dim - 1, dim - 1)] = windows as f64;

        let mut refs = reference_contribution(h0, record.channel(0))?;
        refs.truncate(windows);
        let mut cross = DVector::zeros(dim);
        for l in 0..order {
            let sl = record.channel(l + 1);
            for i in 0..taps {
                cross[l * taps + i] = refs
                    .iter()
                    .zip(&sl[i..i + windows])
                    .map(|(r, &b)| r * f64::from(b))
                    .sum();
            }
        }
        cross[dim - 1] = refs.iter().sum();
        Ok(Self {
            gram,
            cross,
            windows,
        })
    }

    /// Solves `(G + δI) h = −r`.
    pub fn solve(&self, delta: f64, order: usize, taps: usize) -> Result<DVector<f64>> {
        let mut a = self.gram.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += delta;
        }
        let rhs = -&self.cross;
        solve_spd(&a, &rhs, REFINEMENTS).map_err(|f| Error::RankDeficient {
            index: f.index,
            coordinate: coordinate_name(f.index, order, taps),
        })
    }
}

fn coordinate_name(index: usize, order: usize, taps: usize) -> String {
    if index >= order * taps {
        "offset u_0".to_string()
    } else {
        format!("h_{}[{}]", index / taps + 1, index % taps)
    }
}

/// `c(i, j) = Σ_{t<L} a[t+i] b[t+j]` for `i, j < K`, row-major.
///
/// The first row and column are summed directly; the rest follow from
/// `c(i+1, j+1) = c(i, j) − a[i] b[j] + a[L+i] b[L+j]`.
fn toeplitz_block(a: &[i8], b: &[i8], taps: usize, windows: usize) -> Vec<i64> {
    let lagged = |x: &[i8], y: &[i8]| -> i64 {
        x[..windows]
            .iter()
            .zip(&y[..windows])
            .map(|(&p, &q)| i32::from(p * q))
            .sum::<i32>() as i64
    };
    let mut c = vec![0i64; taps * taps];
    for j in 0..taps {
        c[j] = lagged(a, &b[j..]);
    }
    for i in 1..taps {
        c[i * taps] = lagged(&a[i..], b);
    }
    for i in 0..taps - 1 {
        for j in 0..taps - 1 {
            let delta = -i64::from(a[i] * b[j]) + i64::from(a[windows + i] * b[windows + j]);
            c[(i + 1) * taps + j + 1] = c[i * taps + j] + delta;
        }
    }
    c
}

/// Least-squares bank minimizing `Σ û[k]²` over the chosen windows.
pub fn batch_wiener(record: &ControlRecord, h0: &[f64], opts: &BatchOptions) -> Result<FilterBank> {
    if !(opts.delta.is_finite() && opts.delta >= 0.0) {
        return Err(Error::invalid("delta", "must be finite and non-negative"));
    }
    let system = GramSystem::build(record, h0, opts.samples)?;
    let h = system.solve(opts.delta, record.order(), h0.len())?;
    bank_from(h0, record.order(), h.as_slice())
}

/// `mean_k û[k] s[k]` per regressor coordinate over the first `samples`
/// windows (all when `None`). Vanishes at the least-squares optimum.
pub fn orthogonality(
    bank: &FilterBank,
    record: &ControlRecord,
    samples: Option<usize>,
) -> Result<Vec<f64>> {
    let u = estimate(bank, record)?;
    let windows = samples.unwrap_or(u.len()).min(u.len());
    let taps = bank.taps();
    let dim = bank.parameter_len();
    let mut acc = vec![0.0; dim];
    let mut reg = vec![0.0; dim];
    for (k, &uk) in u[..windows].iter().enumerate() {
        fill_regressor(record, taps, k, &mut reg);
        for (a, s) in acc.iter_mut().zip(&reg) {
            *a += uk * s;
        }
    }
    Ok(acc.into_iter().map(|a| a / windows as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{calibrate_rls, Regressor, RlsOptions};
    use crate::simulator::generate_reference;

    fn random_record(order: usize, n: usize, seed: u64) -> ControlRecord {
        let channels = (0..=order)
            .map(|l| generate_reference(seed * 100 + l as u64, n))
            .collect();
        ControlRecord::new(1e-9, seed, channels, None).unwrap()
    }

    #[test]
    fn toeplitz_matches_direct_sums() {
        let rec = random_record(2, 80, 1);
        let (a, b) = (rec.channel(1), rec.channel(2));
        let (taps, windows) = (6, 70);
        let c = toeplitz_block(a, b, taps, windows);
        for i in 0..taps {
            for j in 0..taps {
                let want: i64 = (0..windows)
                    .map(|t| i64::from(a[t + i] * b[t + j]))
                    .sum();
                assert_eq!(c[i * taps + j], want);
            }
        }
    }

    #[test]
    fn gram_matches_outer_products() {
        let rec = random_record(2, 60, 2);
        let h0 = vec![0.1, -0.4, 0.9, 0.3];
        let sys = GramSystem::build(&rec, &h0, Some(50)).unwrap();
        let refs = reference_contribution(&h0, rec.channel(0)).unwrap();
        let mut g = DMatrix::zeros(9, 9);
        let mut r = DVector::zeros(9);
        for k in 0..50 {
            let s = Regressor::at(&rec, 4, k).values().clone();
            g += &s * s.transpose();
            r += &s * refs[k];
        }
        assert_eq!(sys.gram, g);
        assert!((sys.cross - r).amax() < 1e-12);
    }

    #[test]
    fn recovers_known_model() {
        let (order, taps, n) = (2, 4, 20_000);
        let rec = random_record(order, n + taps, 3);
        let dim = order * taps + 1;
        let g: Vec<f64> = (0..dim).map(|i| 0.5 - 0.13 * i as f64).collect();
        let sigma = 0.05;
        let noise = generate_reference(77, n);
        // Reference filter whose output is gᵀs[k] + noise: the reference
        // channel is replaced by a record whose h_0 picks the noise term.
        let mut channels: Vec<Vec<i8>> = rec.channels().to_vec();
        channels[0] = noise.iter().copied().chain(std::iter::repeat(1).take(taps)).collect();
        let rec = ControlRecord::new(1e-9, 0, channels, None).unwrap();
        let mut h0 = vec![0.0; taps];
        h0[0] = sigma;
        let mut sys = GramSystem::build(&rec, &h0, None).unwrap();
        let gvec = DVector::from_vec(g.clone());
        for k in 0..sys.windows {
            let s = Regressor::at(&rec, taps, k).values().clone();
            sys.cross += &s * gvec.dot(&s);
        }
        let h = sys.solve(0.0, order, taps).unwrap();
        let bound = 5.0 * sigma / (sys.windows as f64).sqrt();
        for (hi, gi) in h.iter().zip(&g) {
            assert!((hi + gi).abs() < bound, "{hi} vs {}", -gi);
        }
    }

    #[test]
    fn duplicated_control_is_rank_deficient() {
        let rec = random_record(2, 300, 4);
        let mut channels = rec.channels().to_vec();
        channels[2] = channels[1].clone();
        let rec = ControlRecord::new(1e-9, 0, channels, None).unwrap();
        let err = batch_wiener(&rec, &[0.5; 4], &BatchOptions::default()).unwrap_err();
        match err {
            Error::RankDeficient { index, coordinate } => {
                assert_eq!(index, 4);
                assert_eq!(coordinate, "h_2[0]");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn solution_is_orthogonal_to_regressors() {
        let rec = random_record(2, 1200, 5);
        let h0 = crate::estimator::design_reference_filter(16, 0.1, -3.0).unwrap();
        let bank = batch_wiener(&rec, &h0, &BatchOptions::default()).unwrap();
        let orth = orthogonality(&bank, &rec, None).unwrap();
        assert!(orth.iter().all(|v| v.abs() < 1e-12), "{orth:?}");
    }

    #[test]
    fn matches_rls_without_forgetting() {
        let (taps, n) = (8, 200);
        let rec = random_record(2, n + taps, 6);
        let h0 = crate::estimator::design_reference_filter(taps, 0.1, -5.0).unwrap();
        let delta = 0.01;
        let batch = batch_wiener(
            &rec,
            &h0,
            &BatchOptions {
                delta,
                samples: Some(n),
            },
        )
        .unwrap();
        for block_size in [1, 16] {
            let rls = calibrate_rls(
                &rec,
                &h0,
                &RlsOptions {
                    lambda: 1.0,
                    delta,
                    iterations: n,
                    checkpoints: vec![],
                    block_size,
                },
            )
            .unwrap();
            let diff = rls
                .bank
                .parameters()
                .iter()
                .zip(batch.parameters())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-8, "block {block_size}: {diff:e}");
        }
    }
}

//! Continuous-time model of the leapfrog analog frontend.
//!
//! The frontend is a chain of `N` integrators. Stage `ℓ` integrates the
//! previous state through `R_βℓ C_ℓ`, feeds back the next state through
//! `R_αℓ C_ℓ`, and is pulled back toward zero by its own clocked comparator
//! through `R_κℓ C_ℓ`. The first stage additionally receives the input `u`
//! (through `R_β1 C_1`) and the known binary reference `s_0` (through
//! `R_κ0 C_1`). In state-space form
//!
//! ```text
//! dx/dt = A x + B u + Γ s,    s = (s_0, s_1, ..., s_N)
//! ```
//!
//! with all rates stored in 1/s. Indices below are zero based: state `i`
//! corresponds to stage `ℓ = i + 1`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `R_κ1 / R_κ0`: strength of the reference injection relative to the first
/// local control.
pub const DEFAULT_REFERENCE_RATIO: f64 = 0.1;

const NOMINAL_BANDWIDTH: f64 = 10.0e6;
const NOMINAL_TAU_ALPHA: f64 = 98.63e-9;
const NOMINAL_TAU_BETA: f64 = 10.30e-9;
const NOMINAL_CLOCK: f64 = 194.7e6;

/// Time constants of an `N`th order leapfrog frontend, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeapfrogConfig {
    pub order: usize,
    /// `R_αℓ C_ℓ` for `ℓ = 1..N-1`.
    pub tau_alpha: Vec<f64>,
    /// `R_βℓ C_ℓ` for `ℓ = 1..N`.
    pub tau_beta: Vec<f64>,
    /// `R_κℓ C_ℓ` for `ℓ = 1..N`.
    pub tau_kappa: Vec<f64>,
    /// `R_κ0 C_1`.
    pub tau_kappa0: f64,
    pub clock_period: f64,
}

impl LeapfrogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::invalid("order", "must be at least 1"));
        }
        let n = self.order;
        check_len("tau_alpha", &self.tau_alpha, n - 1)?;
        check_len("tau_beta", &self.tau_beta, n)?;
        check_len("tau_kappa", &self.tau_kappa, n)?;
        check_positive_all("tau_alpha", &self.tau_alpha)?;
        check_positive_all("tau_beta", &self.tau_beta)?;
        check_positive_all("tau_kappa", &self.tau_kappa)?;
        check_positive("tau_kappa0", self.tau_kappa0)?;
        check_positive("clock_period", self.clock_period)?;
        Ok(())
    }

    /// `R_κ1 / R_κ0`, the reference-to-control strength ratio.
    pub fn reference_ratio(&self) -> f64 {
        self.tau_kappa[0] / self.tau_kappa0
    }

    /// Input amplitude whose drive on the first stage equals that of the
    /// first local control (`R_β1 / R_κ1` in DAC units).
    pub fn input_full_scale(&self) -> f64 {
        self.tau_beta[0] / self.tau_kappa[0]
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.clock_period
    }
}

fn check_len(name: &str, values: &[f64], expected: usize) -> Result<()> {
    if values.len() != expected {
        return Err(Error::invalid(
            name,
            format!("expected {expected} entries, got {}", values.len()),
        ));
    }
    Ok(())
}

fn check_positive(name: &str, value: f64) -> Result<()> {
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::invalid(
            name,
            format!("must be finite and strictly positive, got {value}"),
        ));
    }
    Ok(())
}

fn check_positive_all(name: &str, values: &[f64]) -> Result<()> {
    for (i, &v) in values.iter().enumerate() {
        check_positive(&format!("{name}[{i}]"), v)?;
    }
    Ok(())
}

/// Nominal time constants for an `order`-stage frontend with the given signal
/// bandwidth.
///
/// For `order = 6` and a 10 MHz bandwidth this returns `R_αC = 98.63 ns`,
/// `R_βC = 10.30 ns` (doubled on the first stage), `R_κC = 41.2 ns`,
/// `R_κ0 C_1 = R_κ1 C_1 / 0.1` and a 194.7 MHz clock. Other orders reuse the
/// same per-stage values; other bandwidths scale every time constant by
/// `10 MHz / bandwidth`.
pub fn nominal_config(order: usize, bandwidth: f64) -> Result<LeapfrogConfig> {
    if order < 1 {
        return Err(Error::invalid("order", "must be at least 1"));
    }
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::invalid("bandwidth", "must be finite and positive"));
    }
    let scale = NOMINAL_BANDWIDTH / bandwidth;
    let tau_beta: Vec<f64> = (0..order)
        .map(|l| {
            if l == 0 {
                2.0 * NOMINAL_TAU_BETA * scale
            } else {
                NOMINAL_TAU_BETA * scale
            }
        })
        .collect();
    let tau_kappa = vec![4.0 * NOMINAL_TAU_BETA * scale; order];
    let tau_kappa0 = tau_kappa[0] / DEFAULT_REFERENCE_RATIO;
    Ok(LeapfrogConfig {
        order,
        tau_alpha: vec![NOMINAL_TAU_ALPHA * scale; order - 1],
        tau_beta,
        tau_kappa,
        tau_kappa0,
        clock_period: scale / NOMINAL_CLOCK,
    })
}

/// Which source a transfer function starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// The input `u`.
    Signal,
    /// Control `s_ℓ`; `Control(0)` is the reference.
    Control(usize),
}

/// `dx/dt = A x + B u + Γ s`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceSystem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    gamma: DMatrix<f64>,
    observation: Vec<usize>,
}

impl StateSpaceSystem {
    /// Assemble a system from raw matrices. Comparator `ℓ` (1-based control
    /// index) observes state `observation[ℓ - 1]`.
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        gamma: DMatrix<f64>,
        observation: Vec<usize>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.len() != n || gamma.nrows() != n {
            return Err(Error::Shape(format!(
                "A is {}x{}, B has {} rows, Gamma has {} rows",
                a.nrows(),
                a.ncols(),
                b.len(),
                gamma.nrows()
            )));
        }
        if gamma.ncols() != observation.len() + 1 {
            return Err(Error::Shape(format!(
                "Gamma has {} columns but {} comparators are observed",
                gamma.ncols(),
                observation.len()
            )));
        }
        if let Some(&bad) = observation.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("observation index {bad} out of range")));
        }
        Ok(Self {
            a,
            b,
            gamma,
            observation,
        })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_controls(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn observation(&self) -> &[usize] {
        &self.observation
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        self.a.complex_eigenvalues().iter().copied().collect()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    fn source_column(&self, source: Source) -> Result<DVector<f64>> {
        match source {
            Source::Signal => Ok(self.b.clone()),
            Source::Control(l) if l < self.n_controls() => Ok(self.gamma.column(l).into_owned()),
            Source::Control(l) => Err(Error::invalid(
                "source",
                format!("control index {l} out of range 0..={}", self.n_controls() - 1),
            )),
        }
    }
}

/// Build the leapfrog frontend.
///
/// Sign convention: `+1/τ_β` on the sub-diagonal, `-1/τ_α` on the
/// super-diagonal, `-1/τ_κ` for the local controls and `+1/τ_κ0` for the
/// reference. With this choice `A` is skew-like with purely imaginary
/// eigenvalues and every local control opposes the state it observes.
pub fn build_leapfrog(config: &LeapfrogConfig) -> Result<StateSpaceSystem> {
    config.validate()?;
    let n = config.order;
    let mut a = DMatrix::zeros(n, n);
    for l in 0..n - 1 {
        a[(l + 1, l)] = 1.0 / config.tau_beta[l + 1];
        a[(l, l + 1)] = -1.0 / config.tau_alpha[l];
    }
    let mut b = DVector::zeros(n);
    b[0] = 1.0 / config.tau_beta[0];
    let mut gamma = DMatrix::zeros(n, n + 1);
    gamma[(0, 0)] = 1.0 / config.tau_kappa0;
    for l in 0..n {
        gamma[(l, l + 1)] = -1.0 / config.tau_kappa[l];
    }
    StateSpaceSystem::new(a, b, gamma, (0..n).collect())
}

/// Transfer function from `source` to the last state `x_N`, evaluated at
/// `s = iω`.
pub fn frequency_response(sys: &StateSpaceSystem, omega: f64, source: Source) -> Result<Complex64> {
    let n = sys.order();
    let column = sys.source_column(source)?;
    let scale = sys.spectral_radius().max(omega.abs());
    let s = Complex64::new(0.0, omega);
    for ev in sys.eigenvalues() {
        if (s - ev).norm() <= 1e-9 * scale {
            return Err(Error::Resonance {
                omega,
                eigenvalue: ev.im,
            });
        }
    }
    let m = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { s } else { Complex64::new(0.0, 0.0) };
        diag - Complex64::new(sys.a[(i, j)], 0.0)
    });
    let rhs = column.map(|v| Complex64::new(v, 0.0));
    let x = m.lu().solve(&rhs).ok_or(Error::Resonance {
        omega,
        eigenvalue: omega,
    })?;
    Ok(x[n - 1])
}

//! Clocked simulation of the frontend with exact inter-sample propagation.
//!
//! Between clock edges every control is held constant (NRZ DAC), so the state
//! evolves by a matrix exponential. A sinusoidal input is carried along as a
//! two-state undamped oscillator in an augmented system; sampled inputs are
//! held over `samples_per_period` sub-steps.

mod record;
mod reference;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::frontend::StateSpaceSystem;

pub use record::ControlRecord;
pub(crate) use record::{is_csv, read_u32, read_u64};
pub use reference::generate_reference;

/// Input amplitude (in DAC units) that corresponds to 0 dBFS for the nominal
/// frontend: the input swing is half the control swing.
pub const NOMINAL_FULL_SCALE: f64 = 0.5;

/// Default number of hold sub-steps per clock period for sampled inputs.
pub const DEFAULT_SUBSTEPS: usize = 16;

/// DAC impulse response `θ(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DacWaveform {
    /// Held for the full period `[0, T)`.
    #[default]
    Nrz,
}

impl DacWaveform {
    pub fn value(&self, t: f64, period: f64) -> f64 {
        match self {
            DacWaveform::Nrz => {
                if (0.0..period).contains(&t) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `∫ θ(t) dt` for a unit control.
    pub fn area(&self, period: f64) -> f64 {
        match self {
            DacWaveform::Nrz => period,
        }
    }
}

/// Signal applied to the input `u`; amplitudes are fractions of full scale.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSignal {
    Zero,
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// `values[k * samples_per_period + m]` is held over the `m`th sub-interval
    /// of period `k`.
    Sampled {
        values: Vec<f64>,
        samples_per_period: usize,
    },
}

impl InputSignal {
    pub fn tone_dbfs(dbfs: f64, frequency: f64, phase: f64) -> Self {
        InputSignal::Sinusoid {
            amplitude: 10f64.powf(dbfs / 20.0),
            frequency,
            phase,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            InputSignal::Zero => Ok(()),
            InputSignal::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => {
                if !(amplitude.is_finite() && *amplitude >= 0.0) {
                    return Err(Error::invalid("amplitude", "must be finite and non-negative"));
                }
                if !frequency.is_finite() || !phase.is_finite() {
                    return Err(Error::invalid("frequency", "must be finite"));
                }
                Ok(())
            }
            InputSignal::Sampled {
                values,
                samples_per_period,
            } => {
                if *samples_per_period == 0 {
                    return Err(Error::invalid("samples_per_period", "must be positive"));
                }
                if values.len() < n * samples_per_period {
                    return Err(Error::TooShort {
                        required: n * samples_per_period,
                        actual: values.len(),
                    });
                }
                Ok(())
            }
        }
    }
}

/// Simulation knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    /// Input amplitude, in DAC units, that maps to 0 dBFS.
    pub full_scale: f64,
    pub initial_state: Option<Vec<f64>>,
    pub record_states: bool,
    /// A state magnitude above this (or non-finite) aborts the run.
    pub divergence_bound: f64,
    /// Seed stored in the record header.
    pub reference_seed: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            full_scale: NOMINAL_FULL_SCALE,
            initial_state: None,
            record_states: true,
            divergence_bound: 1e3,
            reference_seed: 0,
        }
    }
}

/// One-step exact propagator `z ← Φ z + Ψ s + ψ u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    step: f64,
    n_states: usize,
    transition: DMatrix<f64>,
    control_input: DMatrix<f64>,
    held_input: DVector<f64>,
}

impl Propagator {
    /// `Φ = exp(A h)`, `Ψ = ∫₀ʰ exp(Aτ)dτ Γ` and `ψ = ∫₀ʰ exp(Aτ)dτ B`.
    pub fn new(sys: &StateSpaceSystem, step: f64) -> Result<Self> {
        check_step(step)?;
        let n = sys.order();
        let inputs = DMatrix::from_fn(n, 1 + sys.n_controls(), |i, j| {
            if j == 0 {
                sys.b()[i]
            } else {
                sys.gamma()[(i, j - 1)]
            }
        });
        let (transition, integrated) = zoh_exponential(sys.a(), &inputs, step);
        Ok(Self {
            step,
            n_states: n,
            transition,
            held_input: integrated.column(0).into_owned(),
            control_input: integrated.columns(1, sys.n_controls()).into_owned(),
        })
    }

    /// Propagator of the system augmented with an oscillator `(p, q)`,
    /// `dp/dt = ω q`, `dq/dt = -ω p`, driving `u = p`.
    pub fn with_oscillator(sys: &StateSpaceSystem, step: f64, omega: f64) -> Result<Self> {
        check_step(step)?;
        let n = sys.order();
        let d = n + 2;
        let mut a = DMatrix::zeros(d, d);
        a.view_mut((0, 0), (n, n)).copy_from(sys.a());
        for i in 0..n {
            a[(i, n)] = sys.b()[i];
        }
        a[(n, n + 1)] = omega;
        a[(n + 1, n)] = -omega;
        let gamma = DMatrix::from_fn(d, sys.n_controls(), |i, j| {
            if i < n {
                sys.gamma()[(i, j)]
            } else {
                0.0
            }
        });
        let (transition, control_input) = zoh_exponential(&a, &gamma, step);
        Ok(Self {
            step,
            n_states: n,
            transition,
            control_input,
            held_input: DVector::zeros(d),
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// `Φ`; includes the oscillator block when augmented.
    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    /// `Ψ`, one column per control `s_0..s_N`.
    pub fn control_input(&self) -> &DMatrix<f64> {
        &self.control_input
    }

    pub fn held_input(&self) -> &DVector<f64> {
        &self.held_input
    }

    /// Number of frontend states (excluding any oscillator states).
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    fn advance(&self, z: &DVector<f64>, controls: &DVector<f64>, u: f64, out: &mut DVector<f64>) {
        out.gemv(1.0, &self.transition, z, 0.0);
        out.gemv(1.0, &self.control_input, controls, 1.0);
        if u != 0.0 {
            out.axpy(u, &self.held_input, 1.0);
        }
    }
}

fn check_step(step: f64) -> Result<()> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::invalid("step", "must be finite and positive"));
    }
    Ok(())
}

/// `exp([[A, G], [0, 0]] h)` split into `exp(Ah)` and `∫₀ʰ exp(Aτ)dτ G`.
fn zoh_exponential(a: &DMatrix<f64>, g: &DMatrix<f64>, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let m = g.ncols();
    let mut big = DMatrix::zeros(n + m, n + m);
    big.view_mut((0, 0), (n, n)).copy_from(&(a * h));
    big.view_mut((0, n), (n, m)).copy_from(&(g * h));
    let e = big.exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    )
}

enum Drive {
    Held(Propagator),
    Oscillator(Propagator),
    Sampled {
        sub: Propagator,
        values: Vec<f64>,
        per_period: usize,
    },
}

struct Stepper {
    drive: Drive,
    z: DVector<f64>,
    scratch: DVector<f64>,
    n: usize,
}

impl Stepper {
    fn new(sys: &StateSpaceSystem, period: f64, input: &InputSignal, opts: &SimOptions) -> Result<Self> {
        let n = sys.order();
        let x0 = match &opts.initial_state {
            Some(x) if x.len() != n => {
                return Err(Error::Shape(format!(
                    "initial state has {} entries, expected {n}",
                    x.len()
                )))
            }
            Some(x) => x.clone(),
            None => vec![0.0; n],
        };
        let (drive, extra) = match input {
            InputSignal::Zero => (Drive::Held(Propagator::new(sys, period)?), vec![]),
            InputSignal::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => {
                let omega = 2.0 * std::f64::consts::PI * frequency;
                let a = amplitude * opts.full_scale;
                (
                    Drive::Oscillator(Propagator::with_oscillator(sys, period, omega)?),
                    vec![a * phase.sin(), a * phase.cos()],
                )
            }
            InputSignal::Sampled {
                values,
                samples_per_period,
            } => (
                Drive::Sampled {
                    sub: Propagator::new(sys, period / *samples_per_period as f64)?,
                    values: values.iter().map(|v| v * opts.full_scale).collect(),
                    per_period: *samples_per_period,
                },
                vec![],
            ),
        };
        let z = DVector::from_iterator(n + extra.len(), x0.into_iter().chain(extra));
        let scratch = z.clone();
        Ok(Self {
            drive,
            z,
            scratch,
            n,
        })
    }

    fn state(&self) -> &[f64] {
        &self.z.as_slice()[..self.n]
    }

    fn advance(&mut self, k: usize, controls: &DVector<f64>) {
        match &self.drive {
            Drive::Held(p) | Drive::Oscillator(p) => {
                p.advance(&self.z, controls, 0.0, &mut self.scratch);
                std::mem::swap(&mut self.z, &mut self.scratch);
            }
            Drive::Sampled {
                sub,
                values,
                per_period,
            } => {
                for m in 0..*per_period {
                    let u = values[k * per_period + m];
                    sub.advance(&self.z, controls, u, &mut self.scratch);
                    std::mem::swap(&mut self.z, &mut self.scratch);
                }
            }
        }
    }

    fn check(&self, step: usize, bound: f64) -> Result<()> {
        for (i, &x) in self.state().iter().enumerate() {
            if !x.is_finite() || x.abs() > bound {
                return Err(Error::Unstable {
                    step,
                    state: i,
                    magnitude: x.abs(),
                });
            }
        }
        Ok(())
    }
}

/// Closed-loop simulation over `n` clock periods.
///
/// At each edge `kT` comparator `ℓ` emits `s_ℓ[k] = sign(x_ℓ(kT))` (with
/// `sign(0) = +1`); together with `reference[k]` the controls are then held
/// for one period while the state is propagated exactly.
pub fn simulate(
    sys: &StateSpaceSystem,
    input: &InputSignal,
    reference: &[i8],
    n: usize,
    period: f64,
    opts: &SimOptions,
) -> Result<ControlRecord> {
    if reference.len() < n {
        return Err(Error::TooShort {
            required: n,
            actual: reference.len(),
        });
    }
    input.validate(n)?;
    let order = sys.order();
    let mut stepper = Stepper::new(sys, period, input, opts)?;
    let mut controls = vec![Vec::with_capacity(n); sys.n_controls()];
    let mut states = opts.record_states.then(|| DMatrix::zeros(n, order));
    let mut s = DVector::zeros(sys.n_controls());
    for k in 0..n {
        let x = stepper.state();
        if let Some(states) = states.as_mut() {
            for (i, &v) in x.iter().enumerate() {
                states[(k, i)] = v;
            }
        }
        s[0] = reference[k] as f64;
        controls[0].push(reference[k]);
        for (l, &obs) in sys.observation().iter().enumerate() {
            let bit: i8 = if x[obs] >= 0.0 { 1 } else { -1 };
            s[l + 1] = bit as f64;
            controls[l + 1].push(bit);
        }
        stepper.advance(k, &s);
        stepper.check(k + 1, opts.divergence_bound)?;
    }
    ControlRecord::new(period, opts.reference_seed, controls, states)
}

/// Open-loop run with every control forced: `drive[ℓ][k]` is applied on
/// `[kT, (k+1)T)` regardless of the state. Returns `x(kT)` for `k = 0..=n`.
pub fn simulate_open_loop(
    sys: &StateSpaceSystem,
    input: &InputSignal,
    drive: &[Vec<f64>],
    n: usize,
    period: f64,
    opts: &SimOptions,
) -> Result<DMatrix<f64>> {
    if drive.len() != sys.n_controls() {
        return Err(Error::Shape(format!(
            "{} drive channels for {} controls",
            drive.len(),
            sys.n_controls()
        )));
    }
    if let Some(short) = drive.iter().find(|c| c.len() < n) {
        return Err(Error::TooShort {
            required: n,
            actual: short.len(),
        });
    }
    input.validate(n)?;
    let mut stepper = Stepper::new(sys, period, input, opts)?;
    let mut out = DMatrix::zeros(n + 1, sys.order());
    let mut s = DVector::zeros(sys.n_controls());
    for k in 0..=n {
        for (i, &v) in stepper.state().iter().enumerate() {
            out[(k, i)] = v;
        }
        if k == n {
            break;
        }
        for (l, c) in drive.iter().enumerate() {
            s[l] = c[k];
        }
        stepper.advance(k, &s);
        stepper.check(k + 1, opts.divergence_bound)?;
    }
    Ok(out)
}

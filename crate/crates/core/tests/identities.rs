use cbcal::frontend::{build_leapfrog, nominal_config, LeapfrogConfig};
use cbcal::simulator::{
    generate_reference, simulate, simulate_open_loop, InputSignal, SimOptions,
};

fn second_order() -> LeapfrogConfig {
    nominal_config(2, 10e6).unwrap()
}

fn drive(seed: u64, n: usize) -> Vec<f64> {
    generate_reference(seed, n).into_iter().map(f64::from).collect()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs() / scale))
}

#[test]
fn superposition_of_input_and_controls() {
    let cfg = second_order();
    let sys = build_leapfrog(&cfg).unwrap();
    let n = 1024;
    let controls: Vec<Vec<f64>> = (0..3).map(|l| drive(10 + l, n)).collect();
    let silent = vec![vec![0.0; n]; 3];
    let tone = InputSignal::tone_dbfs(-1.0, 1.3e6, 0.4);
    let opts = SimOptions::default();
    let t = cfg.clock_period;
    let joint = simulate_open_loop(&sys, &tone, &controls, n, t, &opts).unwrap();
    let from_u = simulate_open_loop(&sys, &tone, &silent, n, t, &opts).unwrap();
    let mut sum = from_u.clone();
    for l in 0..3 {
        let mut only = silent.clone();
        only[l] = controls[l].clone();
        sum += simulate_open_loop(&sys, &InputSignal::Zero, &only, n, t, &opts).unwrap();
    }
    let err = (&joint - &sum).amax() / joint.amax();
    assert!(err < 1e-9, "relative error {err:e}");
}

/// For `N = 2`, `x_2` responds to a unit NRZ pulse on `[0, T)` entering
/// state 1 with gain `γ` as `γ (β/ω²)(cos ω(k−1)T − cos ωkT)` at `t = kT`,
/// and to one entering state 2 as `γ (sin ωkT − sin ω(k−1)T)/ω`, where
/// `ω² = β/τ_α` and `β = 1/τ_β2`.
#[test]
fn discrete_kernel_reproduces_continuous_convolution() {
    let cfg = second_order();
    let sys = build_leapfrog(&cfg).unwrap();
    let t = cfg.clock_period;
    let beta = 1.0 / cfg.tau_beta[1];
    let omega = (beta / cfg.tau_alpha[0]).sqrt();
    let n = 2048;
    for l in 0..3 {
        let row = if l == 2 { 1 } else { 0 };
        let gamma = sys.gamma()[(row, l)];
        let kernel = |k: usize| -> f64 {
            if k == 0 {
                return 0.0;
            }
            let (a, b) = (omega * (k - 1) as f64 * t, omega * k as f64 * t);
            if row == 0 {
                gamma * beta / (omega * omega) * (a.cos() - b.cos())
            } else {
                gamma * (b.sin() - a.sin()) / omega
            }
        };
        let s = drive(40 + l as u64, n);
        let mut forced = vec![vec![0.0; n]; 3];
        forced[l] = s.clone();
        let states =
            simulate_open_loop(&sys, &InputSignal::Zero, &forced, n, t, &SimOptions::default())
                .unwrap();
        let continuous: Vec<f64> = (0..=n).map(|k| states[(k, 1)]).collect();
        let g: Vec<f64> = (0..=n).map(kernel).collect();
        let discrete: Vec<f64> = (0..=n)
            .map(|k| (0..k).map(|k1| s[k1] * g[k - k1]).sum())
            .collect();
        let err = max_rel(&discrete, &continuous);
        assert!(err < 1e-6, "control {l}: relative error {err:e}");
    }
}

#[test]
fn nominal_states_stay_bounded() {
    let cfg = nominal_config(6, 10e6).unwrap();
    let sys = build_leapfrog(&cfg).unwrap();
    let n = 1 << 15;
    let reference = generate_reference(3, n);
    let tone = InputSignal::tone_dbfs(-1.0, cfg.sample_rate() / 256.0, 0.0);
    let rec = simulate(&sys, &tone, &reference, n, cfg.clock_period, &SimOptions::default())
        .unwrap();
    let bound = rec.max_abs_state().unwrap();
    assert!(bound <= 1.0, "max |x| = {bound}");
}

#[test]
fn simulation_is_bit_reproducible() {
    let cfg = nominal_config(6, 10e6).unwrap();
    let sys = build_leapfrog(&cfg).unwrap();
    let n = 4096;
    let reference = generate_reference(8, n);
    let tone = InputSignal::tone_dbfs(-1.0, cfg.sample_rate() / 256.0, 0.2);
    let run = || {
        let rec =
            simulate(&sys, &tone, &reference, n, cfg.clock_period, &SimOptions::default()).unwrap();
        let mut bytes = Vec::new();
        rec.write_binary(&mut bytes).unwrap();
        (rec, bytes)
    };
    let (a, bytes_a) = run();
    let (b, bytes_b) = run();
    assert_eq!(a, b);
    assert_eq!(bytes_a, bytes_b);
}

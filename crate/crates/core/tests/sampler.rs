//! Integrator tests against closed-form linear-drift and Brownian limits.

use entbridge::net::{init_vector_field, NetSpec};
use entbridge::numerics::{sample_std_normal, Batch, RngState};
use entbridge::sampler::{
    bidirectional_pf_drift, euler_maruyama, euler_maruyama_endpoint, path_energy, pf_drift_from,
    pf_ode, Field, SamplerError,
};
use ndarray::Array2;

fn batch_fill(n: usize, d: usize, v: f64) -> Batch<f64> {
    Batch::new(Array2::from_elem((n, d), v)).unwrap()
}

fn zero_field(_t: f64, x: &Batch<f64>) -> Batch<f64> {
    batch_fill(x.n(), x.dim(), 0.0)
}

fn decay_field(_t: f64, x: &Batch<f64>) -> Batch<f64> {
    Batch::new(x.array().mapv(|v| -v)).unwrap()
}

#[test]
fn zero_drift_zero_noise_is_constant() {
    let x0 = batch_fill(3, 2, 1.5);
    let mut rng = RngState::new(1, 0);
    let traj = euler_maruyama(&zero_field, &x0, 7, 0.0, &mut rng).unwrap();
    assert_eq!(traj.n_steps(), 7);
    assert_eq!(traj.times()[0], 0.0);
    assert_eq!(*traj.times().last().unwrap(), 1.0);
    for w in traj.times().windows(2) {
        assert!((w[1] - w[0] - 1.0 / 7.0).abs() < 1e-15);
    }
    for s in traj.states() {
        assert_eq!(s.array(), x0.array());
    }
}

#[test]
fn linear_drift_matches_the_exponential_flow() {
    let x0 = batch_fill(1, 1, 1.0);
    let mut rng = RngState::new(2, 0);
    let traj = euler_maruyama(&decay_field, &x0, 10_000, 0.0, &mut rng).unwrap();
    let v = traj.final_state().array()[[0, 0]];
    assert!((v - (-1.0f64).exp()).abs() < 1e-3, "{v}");
}

#[test]
fn endpoint_mode_matches_the_stored_trajectory() {
    let mut rng = RngState::new(3, 0);
    let x0 = sample_std_normal(&mut rng, 16, 2);
    let mut r1 = RngState::new(9, 1);
    let mut r2 = RngState::new(9, 1);
    let traj = euler_maruyama(&decay_field, &x0, 50, 0.7, &mut r1).unwrap();
    let end = euler_maruyama_endpoint(&decay_field, &x0, 50, 0.7, &mut r2).unwrap();
    assert_eq!(traj.final_state().array(), end.array());
    assert_eq!(r1, r2);
}

#[test]
fn pure_noise_variance_matches_brownian_motion() {
    let n = 100_000;
    let x0 = batch_fill(n, 1, 0.0);
    let mut rng = RngState::new(4, 0);
    let end = euler_maruyama_endpoint(&zero_field, &x0, 100, 1.0, &mut rng).unwrap();
    let mean = end.array().iter().sum::<f64>() / n as f64;
    let var = end.array().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let se = (2.0 / (n as f64 - 1.0)).sqrt();
    assert!((var - 1.0).abs() < 4.0 * se, "sample variance {var}");
}

#[test]
fn zero_noise_run_leaves_the_rng_untouched() {
    let x0 = batch_fill(2, 2, 0.5);
    let mut rng = RngState::new(5, 0);
    let before = rng;
    euler_maruyama(&decay_field, &x0, 20, 0.0, &mut rng).unwrap();
    assert_eq!(rng, before);
}

#[test]
fn probability_flow_is_deterministic() {
    let spec = NetSpec {
        input_dim: 2,
        hidden_units: 8,
        depth: 2,
        time_embed_dim: 8,
        embed_hidden: 6,
        bidirectional: true,
    };
    let mut rng = RngState::new(6, 0);
    let params = init_vector_field::<f64>(spec, &mut rng).unwrap();
    let x0 = sample_std_normal(&mut rng, 8, 2);
    let drift = bidirectional_pf_drift(&params).unwrap();
    let a = pf_ode(&drift, &x0, 20).unwrap();
    let b = pf_ode(&drift, &x0, 20).unwrap();
    for (sa, sb) in a.states().iter().zip(b.states().iter()) {
        assert_eq!(sa.array(), sb.array());
    }
}

#[test]
fn matched_direction_fields_cancel_in_the_probability_flow() {
    // Both direction signals emit the same constant, so the composed drift
    // is identically zero and the trajectory never moves.
    let c = |_t: f64, x: &Batch<f64>| batch_fill(x.n(), x.dim(), 0.8);
    let drift = pf_drift_from(c, c);
    let x0 = batch_fill(4, 2, -1.0);
    let traj = pf_ode(&drift, &x0, 15).unwrap();
    for s in traj.states() {
        assert_eq!(s.array(), x0.array());
    }
}

#[test]
fn opposed_constant_fields_advect_by_their_value() {
    let a = 0.75;
    let fwd = move |_t: f64, x: &Batch<f64>| batch_fill(x.n(), x.dim(), a);
    let bwd = move |_t: f64, x: &Batch<f64>| batch_fill(x.n(), x.dim(), -a);
    let drift = pf_drift_from(fwd, bwd);
    let x0 = batch_fill(2, 1, 0.25);
    let probe = drift.eval(0.4, &x0).unwrap();
    assert!(probe.array().iter().all(|&v| (v - a).abs() < 1e-15));
    let traj = pf_ode(&drift, &x0, 10).unwrap();
    let end = traj.final_state().array()[[0, 0]];
    assert!((end - (0.25 + a)).abs() < 1e-12, "{end}");
}

#[test]
fn single_direction_nets_cannot_form_a_probability_flow() {
    let spec = NetSpec {
        input_dim: 1,
        hidden_units: 8,
        depth: 2,
        time_embed_dim: 8,
        embed_hidden: 6,
        bidirectional: false,
    };
    let mut rng = RngState::new(7, 0);
    let params = init_vector_field::<f64>(spec, &mut rng).unwrap();
    let e = bidirectional_pf_drift(&params).unwrap_err();
    assert!(matches!(e, SamplerError::NotBidirectional));
    assert_eq!(
        e.to_string(),
        "probability-flow drift requires a bidirectional parameter set"
    );
}

#[test]
fn path_energy_hand_values() {
    let x0 = batch_fill(3, 1, 0.0);
    assert_eq!(path_energy(&zero_field, &x0, 25).unwrap(), 0.0);
    let a = 1.5;
    let c = move |_t: f64, x: &Batch<f64>| batch_fill(x.n(), x.dim(), a);
    let e = path_energy(&c, &x0, 25).unwrap();
    assert!((e - a * a).abs() < 1e-12, "{e}");
}

#[test]
fn path_energy_of_the_decaying_flow() {
    // X_t = e^{-t}: the squared-speed integral over the unit interval is
    // (1 - e^{-2}) / 2.
    let x0 = batch_fill(1, 1, 1.0);
    let e = path_energy(&decay_field, &x0, 10_000).unwrap();
    let truth = (1.0 - (-2.0f64).exp()) / 2.0;
    assert!((e - truth).abs() < 1e-3, "{e} vs {truth}");
}

#[test]
fn explosion_reports_the_failing_step() {
    let x0 = batch_fill(1, 1, 1.0e308);
    let grow = |_t: f64, x: &Batch<f64>| x.clone();
    let mut rng = RngState::new(8, 0);
    let e = euler_maruyama(&grow, &x0, 2, 0.0, &mut rng).unwrap_err();
    match &e {
        SamplerError::NonFiniteState { step } => assert_eq!(*step, 1),
        other => panic!("expected non-finite state error, got {other:?}"),
    }
    assert!(e.to_string().contains("non-finite state at step 1"));
}

//! Interpolant, target, loss, and preconditioning tests, including the
//! moment checks that pin the preconditioner's derived coefficients.

use entbridge::bridge::{
    bidirectional_empirical_loss, bidirectional_loss_with, interp, interp_general,
    optimal_eps_star, precond_coeffs, targets, BridgeError, InterpolantSchedule,
};
use entbridge::net::{forward, init_vector_field, Direction, NetSpec, VectorFieldParams};
use entbridge::numerics::{sample_std_normal, sample_uniform, Batch, CouplingBatch, RngState};
use ndarray::Array2;

fn batch_from(rows: usize, dim: usize, vals: &[f64]) -> Batch<f64> {
    Batch::new(Array2::from_shape_vec((rows, dim), vals.to_vec()).unwrap()).unwrap()
}

fn random_triple(rng: &mut RngState, n: usize, d: usize) -> (Batch<f64>, Batch<f64>, Batch<f64>) {
    (
        sample_std_normal(rng, n, d),
        sample_std_normal(rng, n, d),
        sample_std_normal(rng, n, d),
    )
}

// ------------------------------------------------------------- interpolation

#[test]
fn interp_is_exact_at_the_endpoints() {
    let mut rng = RngState::new(1, 0);
    let (x0, x1, z) = random_triple(&mut rng, 6, 3);
    let at0 = interp(&x0, &x1, &z, &[0.0; 6], 0.7).unwrap();
    assert_eq!(at0.array(), x0.array());
    let at1 = interp(&x0, &x1, &z, &[1.0; 6], 0.7).unwrap();
    assert_eq!(at1.array(), x1.array());
}

#[test]
fn interp_hand_values() {
    let x0 = batch_from(1, 1, &[0.0]);
    let x1 = batch_from(1, 1, &[1.0]);
    let z = batch_from(1, 1, &[1.0]);
    // eps = 0: plain linear interpolation midpoint.
    let zero_noise = batch_from(1, 1, &[0.3]);
    let mid = interp(&x0, &x1, &zero_noise, &[0.5], 0.0).unwrap();
    assert_eq!(mid.array()[[0, 0]], 0.5);
    // eps = 1, z = 1 at the midpoint: 0.5 + sqrt(1/4).
    let noisy = interp(&x0, &x1, &z, &[0.5], 1.0).unwrap();
    assert!((noisy.array()[[0, 0]] - 1.0).abs() < 1e-15);
}

#[test]
fn interp_rejects_negative_eps() {
    let mut rng = RngState::new(2, 0);
    let (x0, x1, z) = random_triple(&mut rng, 2, 2);
    assert!(matches!(
        interp(&x0, &x1, &z, &[0.5, 0.5], -0.1),
        Err(BridgeError::NegativeEps { .. })
    ));
}

#[test]
fn interp_moment_check() {
    // Independent standard normals: Var(X_t) = (1-t)^2 + t^2 + eps t (1-t).
    let n = 100_000;
    let mut rng = RngState::new(77, 0);
    let (x0, x1, z) = random_triple(&mut rng, n, 1);
    for &(t, eps) in &[(0.3f64, 0.25f64), (0.5, 1.0), (0.9, 2.0)] {
        let xt = interp(&x0, &x1, &z, &vec![t; n], eps).unwrap();
        let mean = xt.array().iter().sum::<f64>() / n as f64;
        let var = xt.array().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let truth = (1.0 - t) * (1.0 - t) + t * t + eps * t * (1.0 - t);
        let se = truth * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!(
            (var - truth).abs() < 4.0 * se,
            "t={t} eps={eps}: sample var {var} vs {truth} (4se = {})",
            4.0 * se
        );
    }
}

#[test]
fn general_schedule_reproduces_brownian_interp() {
    let mut rng = RngState::new(3, 0);
    let (x0, x1, z) = random_triple(&mut rng, 8, 2);
    let eps = 0.25;
    let schedule = InterpolantSchedule::brownian(eps);
    let t: Vec<f64> = sample_uniform(&mut rng, 8);
    let a = interp(&x0, &x1, &z, &t, eps).unwrap();
    let b = interp_general(&x0, &x1, &z, &t, &schedule).unwrap();
    for (u, v) in a.array().iter().zip(b.array().iter()) {
        assert!((u - v).abs() < 1e-14);
    }
    // t = 0 identity through the general path.
    let at0 = interp_general(&x0, &x1, &z, &[0.0; 8], &schedule).unwrap();
    assert_eq!(at0.array(), x0.array());
}

#[test]
fn linear_schedule_hand_value() {
    let schedule = InterpolantSchedule::<f64>::deterministic_linear();
    let x0 = batch_from(1, 1, &[0.0]);
    let x1 = batch_from(1, 1, &[4.0]);
    let z = batch_from(1, 1, &[9.9]); // ignored: gamma = 0
    let v = interp_general(&x0, &x1, &z, &[0.25], &schedule).unwrap();
    assert_eq!(v.array()[[0, 0]], 1.0);
}

#[test]
fn schedule_constructor_rejects_broken_endpoints() {
    // beta(1) = 2 violates the endpoint identity.
    let bad = InterpolantSchedule::<f64>::new(
        Box::new(|t| 1.0 - t),
        Box::new(|t| 2.0 * t),
        Box::new(|_| 0.0),
        Box::new(|_| -1.0),
        Box::new(|_| 2.0),
        Box::new(|_| 0.0),
    );
    assert!(matches!(bad, Err(BridgeError::InvalidSchedule(_))));
}

// ------------------------------------------------------- optimal diffusivity

#[test]
fn brownian_schedule_has_constant_optimal_diffusivity() {
    // Reference-process scale sigma0: eps = 2 sigma0^2, eps* = sqrt(2) sigma0.
    for &sigma0 in &[0.5f64, 1.0, 2.0] {
        let schedule = InterpolantSchedule::brownian(2.0 * sigma0 * sigma0);
        for &t in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            let e: f64 = optimal_eps_star(&schedule, t).unwrap();
            assert!(
                (e - std::f64::consts::SQRT_2 * sigma0).abs() < 1e-12,
                "sigma0={sigma0} t={t}: {e}"
            );
        }
    }
}

#[test]
fn deterministic_schedule_has_zero_diffusivity() {
    let schedule = InterpolantSchedule::<f64>::deterministic_linear();
    let e = optimal_eps_star(&schedule, 0.4).unwrap();
    assert_eq!(e, 0.0);
}

#[test]
fn shrinking_noise_schedule_admits_no_diffusivity() {
    // gamma = sin^2(pi t) collapses faster than the drift can compensate
    // near t = 1: the radicand goes negative.
    let pi = std::f64::consts::PI;
    let schedule = InterpolantSchedule::<f64>::new(
        Box::new(|t| 1.0 - t),
        Box::new(|t| t),
        Box::new(move |t| (pi * t).sin().powi(2)),
        Box::new(|_| -1.0),
        Box::new(|_| 1.0),
        Box::new(move |t| pi * (2.0 * pi * t).sin()),
    )
    .unwrap();
    let e = optimal_eps_star(&schedule, 0.75);
    match e {
        Err(BridgeError::NoValidDiffusivity { t }) => assert!((t - 0.75).abs() < 1e-15),
        other => panic!("expected no-valid-diffusivity error, got {other:?}"),
    }
    assert_eq!(
        BridgeError::NoValidDiffusivity { t: 0.75 }.to_string(),
        "schedule admits no valid diffusivity at t = 0.75"
    );
}

// ------------------------------------------------------------------- targets

#[test]
fn target_hand_values() {
    // Forward at x_t = x1 vanishes.
    let x0 = batch_from(2, 1, &[0.0, -1.0]);
    let x1 = batch_from(2, 1, &[1.0, 2.0]);
    let tau = targets(&x0, &x1, &x1, &[0.25, 0.5], Direction::Forward).unwrap();
    assert!(tau.array().iter().all(|&v| v == 0.0));
    // Forward scalar: (1 - 0) / (1 - 0.5) = 2.
    let xt = batch_from(2, 1, &[0.0, 1.0]);
    let tau = targets(&x0, &x1, &xt, &[0.5, 0.5], Direction::Forward).unwrap();
    assert_eq!(tau.array()[[0, 0]], 2.0);
    // Backward: (-1 - 1) / 0.5 = -4.
    let tau = targets(&x0, &x1, &xt, &[0.5, 0.5], Direction::Backward).unwrap();
    assert_eq!(tau.array()[[1, 0]], -4.0);
}

#[test]
fn target_division_guards() {
    let x0 = batch_from(1, 1, &[0.0]);
    let x1 = batch_from(1, 1, &[1.0]);
    let e = targets(&x0, &x1, &x1, &[1.0], Direction::Forward).unwrap_err();
    assert!(matches!(
        e,
        BridgeError::TimeDivisionGuard {
            row: 0,
            direction: Direction::Forward,
            ..
        }
    ));
    let e = targets(&x0, &x1, &x1, &[0.0], Direction::Backward).unwrap_err();
    assert!(matches!(
        e,
        BridgeError::TimeDivisionGuard {
            row: 0,
            direction: Direction::Backward,
            ..
        }
    ));
}

#[test]
fn targets_obey_time_reversal_symmetry() {
    // Swapping (x0 <-> x1, t <-> 1-t) maps the forward target onto the
    // backward target bitwise.
    let mut rng = RngState::new(4, 0);
    let (x0, x1, xt) = random_triple(&mut rng, 5, 3);
    for &t in &[0.2f64, 0.5, 0.8] {
        let fwd = targets(&x0, &x1, &xt, &[t; 5], Direction::Forward).unwrap();
        let bwd = targets(&x1, &x0, &xt, &[1.0 - t; 5], Direction::Backward).unwrap();
        assert_eq!(fwd.array(), bwd.array());
    }
}

// ------------------------------------------------------------ preconditioner

#[test]
fn precond_hand_values() {
    // t = 0 for any eps.
    for &eps in &[0.0f64, 0.25, 2.0, 10.0] {
        let c = precond_coeffs(0.0, eps).unwrap();
        assert_eq!((c.c_in_sq, c.c_skip, c.c_out_sq), (1.0, -1.0, 1.0));
    }
    // eps = 2, t = 1/2: D = 1.
    let c = precond_coeffs(0.5f64, 2.0).unwrap();
    assert!((c.c_in_sq - 1.0).abs() < 1e-15);
    assert!((c.c_skip + 1.0).abs() < 1e-15);
    assert!((c.c_out_sq - 3.0).abs() < 1e-15);
    assert_eq!(c.lambda(), 1.0);
}

#[test]
fn precond_skip_identity() {
    // 1 + c_skip (1 - t) = t * c_in_sq over random (t, eps).
    let mut rng = RngState::new(5, 0);
    let ts: Vec<f64> = sample_uniform(&mut rng, 100);
    let es: Vec<f64> = sample_uniform(&mut rng, 100);
    for (u, v) in ts.iter().zip(es.iter()) {
        let t = 0.99 * u; // keep strictly below 1
        let eps = 4.0 * v;
        let c = precond_coeffs(t, eps).unwrap();
        let lhs = 1.0 + c.c_skip * (1.0 - t);
        let rhs = t * c.c_in_sq;
        assert!((lhs - rhs).abs() < 1e-12, "t={t} eps={eps}: {lhs} vs {rhs}");
    }
}

#[test]
fn precond_denominator_guard() {
    // eps < -2 drives D negative at the midpoint.
    let e = precond_coeffs(0.5, -3.0f64).unwrap_err();
    assert!(matches!(e, BridgeError::PrecondDenominator { .. }));
}

#[test]
fn preconditioned_targets_have_unit_second_moment() {
    // With the derived (c_in, c_skip, c_out), the normalized residual
    // (tau - c_skip x_t) / c_out has unit variance per coordinate, so the
    // rowwise squared norm averages to d.
    let n = 50_000;
    let d = 2;
    let mut rng = RngState::new(88, 0);
    let (x0, x1, z) = random_triple(&mut rng, n, d);
    for &eps in &[0.25f64, 2.0] {
        for &t in &[0.1f64, 0.5, 0.9] {
            let xt = interp(&x0, &x1, &z, &vec![t; n], eps).unwrap();
            let tau = targets(&x0, &x1, &xt, &vec![t; n], Direction::Forward).unwrap();
            let c = precond_coeffs(t, eps).unwrap();
            let c_out = c.c_out_sq.sqrt();
            let mean_sq = tau
                .array()
                .iter()
                .zip(xt.array().iter())
                .map(|(&tv, &xv)| {
                    let r = (tv - c.c_skip * xv) / c_out;
                    r * r
                })
                .sum::<f64>()
                / n as f64;
            assert!(
                (mean_sq - d as f64).abs() < 0.1 * d as f64,
                "t={t} eps={eps}: mean squared norm {mean_sq} vs {d}"
            );
        }
    }
}

// -------------------------------------------------------------------- loss

fn loss_spec(d: usize) -> NetSpec {
    NetSpec {
        input_dim: d,
        hidden_units: 8,
        depth: 2,
        time_embed_dim: 8,
        embed_hidden: 6,
        bidirectional: true,
    }
}

#[test]
fn loss_vanishes_when_outputs_match_targets() {
    // Zero parameters emit the zero field; a coupling with both endpoints at
    // the origin and zero noise makes every target zero.
    let params = VectorFieldParams::<f64>::zeros(loss_spec(2)).unwrap();
    let zeros = batch_from(3, 2, &[0.0; 6]);
    let coupling = CouplingBatch::new(zeros.clone(), zeros.clone()).unwrap();
    let (loss, grads) = bidirectional_loss_with(
        &params,
        &coupling,
        &coupling,
        &[0.3, 0.5, 0.7],
        &zeros,
        &[0.4, 0.5, 0.6],
        &zeros,
        0.25,
    )
    .unwrap();
    assert_eq!(loss.total, 0.0);
    assert_eq!((loss.fwd, loss.bwd), (0.0, 0.0));
    assert!(grads.coords().all(|&g| g == 0.0));
}

#[test]
fn loss_matches_hand_computation_on_single_rows() {
    let mut rng = RngState::new(6, 0);
    let params = init_vector_field::<f64>(loss_spec(2), &mut rng).unwrap();
    let x0f = batch_from(1, 2, &[0.2, -0.4]);
    let x1f = batch_from(1, 2, &[1.0, 0.5]);
    let x0b = batch_from(1, 2, &[-0.3, 0.9]);
    let x1b = batch_from(1, 2, &[0.6, -1.1]);
    let cf = CouplingBatch::new(x0f.clone(), x1f.clone()).unwrap();
    let cb = CouplingBatch::new(x0b.clone(), x1b.clone()).unwrap();
    let zf = batch_from(1, 2, &[0.3, -0.8]);
    let zb = batch_from(1, 2, &[-0.5, 0.1]);
    let (t_f, t_b, eps) = (0.35f64, 0.6f64, 0.25f64);

    let (loss, _) =
        bidirectional_loss_with(&params, &cf, &cb, &[t_f], &zf, &[t_b], &zb, eps).unwrap();

    // By hand: interpolate, target, evaluate both direction fields.
    let xtf = interp(&x0f, &x1f, &zf, &[t_f], eps).unwrap();
    let tauf = targets(&x0f, &x1f, &xtf, &[t_f], Direction::Forward).unwrap();
    let vf = forward(&params, Direction::Forward, t_f, &xtf).unwrap();
    let xtb = interp(&x0b, &x1b, &zb, &[t_b], eps).unwrap();
    let taub = targets(&x0b, &x1b, &xtb, &[t_b], Direction::Backward).unwrap();
    let vb = forward(&params, Direction::Backward, 1.0 - t_b, &xtb).unwrap();
    let sq = |v: &Batch<f64>, tau: &Batch<f64>| {
        v.array()
            .iter()
            .zip(tau.array().iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    };
    let hand = 0.5 * (sq(&vf, &tauf) + sq(&vb, &taub));
    assert!((loss.total - hand).abs() < 1e-12, "{} vs {hand}", loss.total);
    assert!((loss.fwd - sq(&vf, &tauf)).abs() < 1e-12);
    assert!((loss.bwd - sq(&vb, &taub)).abs() < 1e-12);
}

#[test]
fn loss_scales_quadratically_in_the_residual() {
    // Zero params: the prediction is 0, so scaling the coupling (with zero
    // bridge noise) doubles every target and quadruples the loss.
    let params = VectorFieldParams::<f64>::zeros(loss_spec(2)).unwrap();
    let mut rng = RngState::new(7, 0);
    let (a, b, _) = random_triple(&mut rng, 4, 2);
    let z = batch_from(4, 2, &[0.0; 8]);
    let scale2 = |x: &Batch<f64>| Batch::new(x.array().mapv(|v| 2.0 * v)).unwrap();
    let c1 = CouplingBatch::new(a.clone(), b.clone()).unwrap();
    let c2 = CouplingBatch::new(scale2(&a), scale2(&b)).unwrap();
    let t = [0.3, 0.45, 0.55, 0.7];
    let (l1, _) = bidirectional_loss_with(&params, &c1, &c1, &t, &z, &t, &z, 0.25).unwrap();
    let (l2, _) = bidirectional_loss_with(&params, &c2, &c2, &t, &z, &t, &z, 0.25).unwrap();
    let (l1, l2) = (l1.total, l2.total);
    assert!((l2 - 4.0 * l1).abs() < 1e-10 * l1.max(1.0), "{l2} vs 4*{l1}");
}

#[test]
fn empirical_loss_is_reproducible() {
    let mut rng = RngState::new(9, 0);
    let params = init_vector_field::<f64>(loss_spec(2), &mut rng).unwrap();
    let (x0, x1, _) = random_triple(&mut rng, 8, 2);
    let cf = CouplingBatch::new(x0.clone(), x1.clone()).unwrap();
    let mut r1 = RngState::new(42, 7);
    let mut r2 = RngState::new(42, 7);
    let (l1, g1) = bidirectional_empirical_loss(&params, &cf, &cf, &mut r1, 0.25).unwrap();
    let (l2, g2) = bidirectional_empirical_loss(&params, &cf, &cf, &mut r2, 0.25).unwrap();
    assert_eq!(l1.total, l2.total);
    assert_eq!((l1.fwd, l1.bwd), (l2.fwd, l2.bwd));
    assert!(g1.coords().zip(g2.coords()).all(|(a, b)| a == b));
    assert_eq!(r1, r2);
}

#[test]
fn empirical_loss_rejects_mismatched_halves() {
    let mut rng = RngState::new(10, 0);
    let params = init_vector_field::<f64>(loss_spec(2), &mut rng).unwrap();
    let (x0, x1, _) = random_triple(&mut rng, 4, 2);
    let (y0, y1, _) = random_triple(&mut rng, 6, 2);
    let cf = CouplingBatch::new(x0, x1).unwrap();
    let cb = CouplingBatch::new(y0, y1).unwrap();
    assert!(matches!(
        bidirectional_empirical_loss(&params, &cf, &cb, &mut rng, 0.25),
        Err(BridgeError::ShapeMismatch(_))
    ));
}

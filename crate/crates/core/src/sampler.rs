//! Euler–Maruyama integration of the learned forward and backward SDEs,
//! the deterministic probability-flow ODE, and the path-energy functional.
//!
//! Both integrators run on their own clock from 0 to 1 regardless of
//! direction: a backward trajectory starts at a terminal-marginal sample and
//! the direction label picks which signal of the network it consumes. Drift
//! is evaluated at the left endpoint of each step, with the evaluation time
//! clamped to `1 - T_MIN` so the near-terminal singularity of the regression
//! target never reaches the network.

use crate::bridge::T_MIN;
use crate::net::{forward, Direction, NetError, VectorFieldParams};
use crate::numerics::{sample_std_normal, Batch, NumericsError, RngState};
use crate::Real;
use ndarray::Array2;
use thiserror::Error;

/// Integration failures.
#[derive(Debug, Error)]
pub enum SamplerError {
    /// The state left the finite domain; `step` is the offending update.
    #[error("integration produced a non-finite state at step {step}")]
    NonFiniteState { step: usize },
    /// A probability-flow drift was requested from a single-direction net.
    #[error("probability-flow drift requires a bidirectional parameter set")]
    NotBidirectional,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// A time-dependent drift over batches. Integrators call `eval` with times
/// in `[0, 1 - T_MIN]`.
pub trait Field<T: Real> {
    fn eval(&self, t: T, x: &Batch<T>) -> Result<Batch<T>, NetError>;
}

/// Closures are fields; handy for analytic drifts in tests and oracles.
impl<T: Real, F> Field<T> for F
where
    F: Fn(T, &Batch<T>) -> Batch<T>,
{
    fn eval(&self, t: T, x: &Batch<T>) -> Result<Batch<T>, NetError> {
        Ok(self(t, x))
    }
}

/// One direction of a trained vector field, borrowed for the duration of a
/// sampling run.
#[derive(Debug, Clone, Copy)]
pub struct NetField<'a, T: Real> {
    params: &'a VectorFieldParams<T>,
    direction: Direction,
}

impl<'a, T: Real> NetField<'a, T> {
    pub fn new(params: &'a VectorFieldParams<T>, direction: Direction) -> Self {
        NetField { params, direction }
    }
}

impl<T: Real> Field<T> for NetField<'_, T> {
    fn eval(&self, t: T, x: &Batch<T>) -> Result<Batch<T>, NetError> {
        forward(self.params, self.direction, t, x)
    }
}

/// Drift of the probability-flow ODE: half the difference between the
/// forward field at `t` and the backward field at `1 - t` (clamped away
/// from the endpoint, where the backward clock would leave the domain).
#[derive(Debug, Clone, Copy)]
pub struct PfDrift<F, B> {
    fwd: F,
    bwd: B,
}

impl<T: Real, F: Field<T>, B: Field<T>> Field<T> for PfDrift<F, B> {
    fn eval(&self, t: T, x: &Batch<T>) -> Result<Batch<T>, NetError> {
        let u = clamp_time(T::one() - t);
        let vf = self.fwd.eval(t, x)?;
        let vb = self.bwd.eval(u, x)?;
        let half = T::of(0.5);
        let arr = (vf.array() - vb.array()).mapv(|v| half * v);
        Ok(Batch::new(arr).expect("difference of finite drifts is finite"))
    }
}

/// Compose a probability-flow drift from explicit forward and backward
/// fields, each on its own clock.
pub fn pf_drift_from<T: Real, F: Field<T>, B: Field<T>>(fwd: F, bwd: B) -> PfDrift<F, B> {
    PfDrift { fwd, bwd }
}

/// Probability-flow drift of a bidirectional model.
pub fn bidirectional_pf_drift<T: Real>(
    params: &VectorFieldParams<T>,
) -> Result<PfDrift<NetField<'_, T>, NetField<'_, T>>, SamplerError> {
    if !params.spec().bidirectional {
        return Err(SamplerError::NotBidirectional);
    }
    Ok(pf_drift_from(
        NetField::new(params, Direction::Forward),
        NetField::new(params, Direction::Backward),
    ))
}

/// Probability-flow drift of a two-network model.
pub fn two_net_pf_drift<'a, T: Real>(
    fwd: &'a VectorFieldParams<T>,
    bwd: &'a VectorFieldParams<T>,
) -> PfDrift<NetField<'a, T>, NetField<'a, T>> {
    pf_drift_from(
        NetField::new(fwd, Direction::Forward),
        NetField::new(bwd, Direction::Backward),
    )
}

/// A discretized path: `times` runs from 0 to 1 on a uniform grid and
/// `states[k]` is the batch at `times[k]`.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Real> {
    times: Vec<T>,
    states: Vec<Batch<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn states(&self) -> &[Batch<T>] {
        &self.states
    }

    pub fn final_state(&self) -> &Batch<T> {
        self.states.last().expect("trajectory holds the initial state")
    }

    /// Number of integration steps (one less than the number of stored states).
    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }
}

fn clamp_time<T: Real>(t: T) -> T {
    t.min(T::one() - T::of(T_MIN))
}

/// Grid time `k / n`, computed as a ratio so the terminal node is exactly 1.
fn grid_time<T: Real>(k: usize, n: usize) -> T {
    T::from_usize(k).expect("step index fits in scalar")
        / T::from_usize(n).expect("step count fits in scalar")
}

fn step_state<T: Real>(
    field: &impl Field<T>,
    x: &Batch<T>,
    k: usize,
    n_steps: usize,
    eps: T,
    rng: Option<&mut RngState>,
) -> Result<Batch<T>, SamplerError> {
    let h = T::one() / T::from_usize(n_steps).expect("step count fits in scalar");
    let t = clamp_time(grid_time(k, n_steps));
    let v = field.eval(t, x)?;
    let mut arr = x.array() + &v.array().mapv(|d| d * h);
    if eps > T::zero() {
        let rng = rng.expect("stochastic step needs an rng");
        let z = sample_std_normal::<T>(rng, x.n(), x.dim());
        let scale = (eps * h).sqrt();
        arr = arr + &z.array().mapv(|w| scale * w);
    }
    finite_batch(arr, k)
}

fn finite_batch<T: Real>(arr: Array2<T>, step: usize) -> Result<Batch<T>, SamplerError> {
    Batch::new(arr).map_err(|_| SamplerError::NonFiniteState { step })
}

/// Integrate `dX = v dt + sqrt(eps) dW` from `x_init` over `n_steps` uniform
/// steps, storing every state.
pub fn euler_maruyama<T: Real>(
    field: &impl Field<T>,
    x_init: &Batch<T>,
    n_steps: usize,
    eps: T,
    rng: &mut RngState,
) -> Result<Trajectory<T>, SamplerError> {
    assert!(n_steps >= 1, "integration needs at least one step");
    assert!(eps >= T::zero(), "diffusivity must be nonnegative");
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(x_init.clone());
    for k in 0..n_steps {
        let next = step_state(field, &states[k], k, n_steps, eps, Some(rng))?;
        states.push(next);
    }
    let times = (0..=n_steps).map(|k| grid_time(k, n_steps)).collect();
    Ok(Trajectory { times, states })
}

/// As `euler_maruyama`, but keeps only the terminal state; memory stays
/// O(n·d) regardless of step count.
pub fn euler_maruyama_endpoint<T: Real>(
    field: &impl Field<T>,
    x_init: &Batch<T>,
    n_steps: usize,
    eps: T,
    rng: &mut RngState,
) -> Result<Batch<T>, SamplerError> {
    assert!(n_steps >= 1, "integration needs at least one step");
    assert!(eps >= T::zero(), "diffusivity must be nonnegative");
    let mut x = x_init.clone();
    for k in 0..n_steps {
        x = step_state(field, &x, k, n_steps, eps, Some(rng))?;
    }
    Ok(x)
}

/// Explicit Euler on a deterministic drift; bit-identical across runs.
pub fn pf_ode<T: Real>(
    field: &impl Field<T>,
    x_init: &Batch<T>,
    n_steps: usize,
) -> Result<Trajectory<T>, SamplerError> {
    assert!(n_steps >= 1, "integration needs at least one step");
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(x_init.clone());
    for k in 0..n_steps {
        let next = step_state(field, &states[k], k, n_steps, T::zero(), None)?;
        states.push(next);
    }
    let times = (0..=n_steps).map(|k| grid_time(k, n_steps)).collect();
    Ok(Trajectory { times, states })
}

/// Riemann estimate of the kinetic energy along probability-flow paths:
/// the batch mean of `sum_k ||drift(t_k, X_k)||^2 h`.
pub fn path_energy<T: Real>(
    field: &impl Field<T>,
    x0: &Batch<T>,
    n_steps: usize,
) -> Result<T, SamplerError> {
    assert!(n_steps >= 1, "integration needs at least one step");
    let h = T::one() / T::from_usize(n_steps).expect("step count fits in scalar");
    let n_rows = T::from_usize(x0.n()).expect("batch size fits in scalar");
    let mut x = x0.clone();
    let mut acc = T::zero();
    for k in 0..n_steps {
        let t = clamp_time(grid_time(k, n_steps));
        let v = field.eval(t, &x)?;
        for &d in v.array().iter() {
            acc += d * d * h;
        }
        let arr = x.array() + &v.array().mapv(|d| d * h);
        x = finite_batch(arr, k)?;
    }
    Ok(acc / n_rows)
}

//! Stochastic interpolants, bridge regression targets, the bidirectional
//! empirical loss, and the preconditioning / optimal-diffusivity formulas.
//!
//! The Brownian interpolant `X_t = (1-t) X0 + t X1 + sqrt(eps t (1-t)) Z`
//! is the workhorse; [`InterpolantSchedule`] generalizes it to arbitrary
//! `alpha_t X0 + beta_t X1 + gamma_t Z` schedules, for which
//! [`optimal_eps_star`] recovers the diffusivity whose SDE reproduces the
//! interpolant's marginals.
//!
//! [`bidirectional_empirical_loss`] draws per-row times and bridge noise and
//! regresses both transport directions in one step: forward rows carry the
//! drift target `(x1 - x_t)/(1-t)` at network time `t`, backward rows carry
//! `(x0 - x_t)/t` at network time `1 - t` (each direction runs its own
//! clock). The descended objective is the average of the two equally sized
//! direction losses, reported individually in [`LossParts`].

use ndarray::Array2;
use thiserror::Error;

use crate::net::{loss_and_grad, Direction, Gradients, LossBatch, NetError, VectorFieldParams};
use crate::numerics::{sample_std_normal, sample_uniform, Batch, CouplingBatch, RngState};
use crate::Real;

/// Loss-time clamp: times are drawn from `[T_MIN, 1 - T_MIN]`. The drift
/// targets are singular at the endpoints, which sampling on the closed unit
/// interval would hit with positive probability in floating point.
pub const T_MIN: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BridgeError {
    #[error("interpolation diffusivity must be nonnegative, got {eps}")]
    NegativeEps { eps: f64 },
    #[error("bridge shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("target division guard: t = {t} at row {row} is outside the {direction:?} domain")]
    TimeDivisionGuard {
        row: usize,
        t: f64,
        direction: Direction,
    },
    #[error("invalid interpolant schedule: {0}")]
    InvalidSchedule(String),
    #[error("schedule admits no valid diffusivity at t = {t}")]
    NoValidDiffusivity { t: f64 },
    #[error("preconditioner denominator is not positive at t = {t}, eps = {eps}")]
    PrecondDenominator { t: f64, eps: f64 },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
}

fn check_interp_shapes<T: Real>(
    x0: &Batch<T>,
    x1: &Batch<T>,
    z: &Batch<T>,
    t: &[T],
) -> Result<(), BridgeError> {
    if x0.n() != x1.n() || x0.dim() != x1.dim() || x0.n() != z.n() || x0.dim() != z.dim() {
        return Err(BridgeError::ShapeMismatch(format!(
            "x0 {}x{}, x1 {}x{}, z {}x{}",
            x0.n(),
            x0.dim(),
            x1.n(),
            x1.dim(),
            z.n(),
            z.dim()
        )));
    }
    if t.len() != x0.n() {
        return Err(BridgeError::ShapeMismatch(format!(
            "{} time rows for {} sample rows",
            t.len(),
            x0.n()
        )));
    }
    Ok(())
}

/// Brownian interpolation `(1-t) x0 + t x1 + sqrt(eps t (1-t)) z`, rowwise.
///
/// `t` is per-row in `[0, 1]`; the endpoints return `x0` / `x1` exactly.
pub fn interp<T: Real>(
    x0: &Batch<T>,
    x1: &Batch<T>,
    z: &Batch<T>,
    t: &[T],
    eps: T,
) -> Result<Batch<T>, BridgeError> {
    if eps < T::zero() {
        return Err(BridgeError::NegativeEps {
            eps: eps.to_f64_lossy(),
        });
    }
    check_interp_shapes(x0, x1, z, t)?;
    let one = T::one();
    let mut out = Array2::zeros((x0.n(), x0.dim()));
    for (i, &ti) in t.iter().enumerate() {
        assert!(
            ti >= T::zero() && ti <= one,
            "interpolation time must lie in [0, 1], got {ti} at row {i}"
        );
        let noise = (eps * ti * (one - ti)).sqrt();
        for j in 0..x0.dim() {
            out[[i, j]] = (one - ti) * x0.array()[[i, j]]
                + ti * x1.array()[[i, j]]
                + noise * z.array()[[i, j]];
        }
    }
    Ok(Batch::new(out)?)
}

/// One scalar function of time in an interpolant schedule.
pub type ScheduleFn<T> = Box<dyn Fn(T) -> T + Send + Sync>;

/// General interpolant schedule `X_t = alpha_t X0 + beta_t X1 + gamma_t Z`
/// with its derivatives.
///
/// Constructors validate the endpoint identities `alpha(0) = beta(1) = 1`,
/// `alpha(1) = beta(0) = gamma(0) = gamma(1) = 0` (the interpolant must pin
/// the endpoints and carry no noise there).
pub struct InterpolantSchedule<T> {
    alpha: ScheduleFn<T>,
    beta: ScheduleFn<T>,
    gamma: ScheduleFn<T>,
    alpha_dot: ScheduleFn<T>,
    beta_dot: ScheduleFn<T>,
    gamma_dot: ScheduleFn<T>,
}

impl<T: Real> InterpolantSchedule<T> {
    pub fn new(
        alpha: ScheduleFn<T>,
        beta: ScheduleFn<T>,
        gamma: ScheduleFn<T>,
        alpha_dot: ScheduleFn<T>,
        beta_dot: ScheduleFn<T>,
        gamma_dot: ScheduleFn<T>,
    ) -> Result<Self, BridgeError> {
        let s = Self {
            alpha,
            beta,
            gamma,
            alpha_dot,
            beta_dot,
            gamma_dot,
        };
        let tol = T::of(1e-12);
        let zero = T::zero();
        let one = T::one();
        let checks = [
            ((s.alpha)(zero) - one, "alpha(0) = 1"),
            ((s.alpha)(one), "alpha(1) = 0"),
            ((s.beta)(zero), "beta(0) = 0"),
            ((s.beta)(one) - one, "beta(1) = 1"),
            ((s.gamma)(zero), "gamma(0) = 0"),
            ((s.gamma)(one), "gamma(1) = 0"),
        ];
        for (residual, name) in checks {
            if residual.abs() > tol {
                return Err(BridgeError::InvalidSchedule(format!(
                    "endpoint identity {name} violated by {residual:?}"
                )));
            }
        }
        Ok(s)
    }

    /// The Brownian-bridge schedule of diffusivity `eps`:
    /// `alpha = 1-t`, `beta = t`, `gamma = sqrt(eps t (1-t))`.
    ///
    /// [`interp_general`] with this schedule reproduces [`interp`]. In the
    /// scale convention where the reference process is `sigma0 sqrt(2) B_t`,
    /// this is `eps = 2 sigma0^2` and [`optimal_eps_star`] returns
    /// `sqrt(2) sigma0` at every interior time.
    pub fn brownian(eps: T) -> Self {
        assert!(eps >= T::zero(), "diffusivity must be nonnegative");
        let one = T::one();
        let two = T::of(2.0);
        Self::new(
            Box::new(move |t| one - t),
            Box::new(|t| t),
            Box::new(move |t| (eps * t * (one - t)).sqrt()),
            Box::new(move |_| -one),
            Box::new(move |_| one),
            Box::new(move |t| eps * (one - two * t) / (two * (eps * t * (one - t)).sqrt())),
        )
        .expect("brownian schedule satisfies the endpoint identities")
    }

    /// Noise-free straight-line schedule (`gamma = 0`).
    pub fn deterministic_linear() -> Self {
        let one = T::one();
        Self::new(
            Box::new(move |t| one - t),
            Box::new(|t| t),
            Box::new(|_| T::zero()),
            Box::new(move |_| -one),
            Box::new(move |_| one),
            Box::new(|_| T::zero()),
        )
        .expect("linear schedule satisfies the endpoint identities")
    }

    pub fn alpha(&self, t: T) -> T {
        (self.alpha)(t)
    }
    pub fn beta(&self, t: T) -> T {
        (self.beta)(t)
    }
    pub fn gamma(&self, t: T) -> T {
        (self.gamma)(t)
    }
    pub fn alpha_dot(&self, t: T) -> T {
        (self.alpha_dot)(t)
    }
    pub fn beta_dot(&self, t: T) -> T {
        (self.beta_dot)(t)
    }
    pub fn gamma_dot(&self, t: T) -> T {
        (self.gamma_dot)(t)
    }
}

/// General interpolation `alpha_t x0 + beta_t x1 + gamma_t z`, rowwise.
pub fn interp_general<T: Real>(
    x0: &Batch<T>,
    x1: &Batch<T>,
    z: &Batch<T>,
    t: &[T],
    schedule: &InterpolantSchedule<T>,
) -> Result<Batch<T>, BridgeError> {
    check_interp_shapes(x0, x1, z, t)?;
    let mut out = Array2::zeros((x0.n(), x0.dim()));
    for (i, &ti) in t.iter().enumerate() {
        let (a, b, g) = (schedule.alpha(ti), schedule.beta(ti), schedule.gamma(ti));
        for j in 0..x0.dim() {
            out[[i, j]] =
                a * x0.array()[[i, j]] + b * x1.array()[[i, j]] + g * z.array()[[i, j]];
        }
    }
    Ok(Batch::new(out)?)
}

/// Diffusivity whose SDE shares the interpolant's time marginals:
/// `(eps*_t)^2 = 2 gamma gamma_dot - 2 gamma^2 alpha_dot / alpha`,
/// evaluated at interior `t`.
///
/// A negative radicand means no SDE of this form reproduces the schedule's
/// marginals at `t`.
pub fn optimal_eps_star<T: Real>(
    schedule: &InterpolantSchedule<T>,
    t: T,
) -> Result<T, BridgeError> {
    assert!(
        t > T::zero() && t < T::one(),
        "optimal diffusivity is defined on interior times, got {t}"
    );
    let a = schedule.alpha(t);
    if a == T::zero() {
        return Err(BridgeError::InvalidSchedule(format!(
            "alpha vanishes at interior time {t:?}"
        )));
    }
    let g = schedule.gamma(t);
    let two = T::of(2.0);
    // gamma == 0 short-circuits: the schedule is noise-free at t and the
    // gamma_dot closure may be singular there (0/0 in the Brownian form).
    if g == T::zero() {
        return Ok(T::zero());
    }
    let radicand = two * g * schedule.gamma_dot(t) - two * g * g * schedule.alpha_dot(t) / a;
    if radicand < T::zero() {
        return Err(BridgeError::NoValidDiffusivity {
            t: t.to_f64_lossy(),
        });
    }
    Ok(radicand.sqrt())
}

/// Bridge regression targets, rowwise: forward `(x1 - x_t)/(1 - t)`,
/// backward `(x0 - x_t)/t`.
///
/// The forward target requires `t < 1` and the backward target `t > 0`
/// per row; a violation is a division-guard error, not a NaN.
pub fn targets<T: Real>(
    x0: &Batch<T>,
    x1: &Batch<T>,
    x_t: &Batch<T>,
    t: &[T],
    direction: Direction,
) -> Result<Batch<T>, BridgeError> {
    check_interp_shapes(x0, x1, x_t, t)?;
    let one = T::one();
    let mut out = Array2::zeros((x0.n(), x0.dim()));
    for (i, &ti) in t.iter().enumerate() {
        let denom = match direction {
            Direction::Forward => one - ti,
            Direction::Backward => ti,
        };
        if denom <= T::zero() {
            return Err(BridgeError::TimeDivisionGuard {
                row: i,
                t: ti.to_f64_lossy(),
                direction,
            });
        }
        let endpoint = match direction {
            Direction::Forward => x1,
            Direction::Backward => x0,
        };
        for j in 0..x0.dim() {
            out[[i, j]] = (endpoint.array()[[i, j]] - x_t.array()[[i, j]]) / denom;
        }
    }
    Ok(Batch::new(out)?)
}

/// Input/skip/output scalings of the preconditioned parameterization
/// `v(x) = c_out * nn(c_in * x) + c_skip * x` at one `(t, eps)`.
///
/// The scalings assume the independent standard-normal coupling: `c_in`
/// whitens `X_t`, `c_skip` is the regression coefficient of the forward
/// drift target on `X_t`, and `c_out^2` is the residual variance, so a
/// unit-variance network output reproduces the target's second moment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecondCoeffs<T> {
    pub c_in_sq: T,
    pub c_skip: T,
    pub c_out_sq: T,
}

impl<T: Real> PrecondCoeffs<T> {
    /// Loss weight; fixed at 1.
    pub fn lambda(&self) -> T {
        T::one()
    }

    /// The alternative output-normalized weight `1 / c_out^2`. Exposed for
    /// experiments; nothing in the test suite exercises it.
    pub fn lambda_inverse_out(&self) -> T {
        T::one() / self.c_out_sq
    }
}

/// Preconditioning coefficients at time `t` and diffusivity `eps`, built
/// from the marginal variance `D = 1 + (eps - 2) t (1 - t)` of the
/// independent-coupling interpolant:
///
/// `c_in^2 = 1/D`, `c_skip = -(1 + (eps-2) t)/D`,
/// `c_out^2 = (1 - t + eps t)/(D (1 - t))`.
pub fn precond_coeffs<T: Real>(t: T, eps: T) -> Result<PrecondCoeffs<T>, BridgeError> {
    let one = T::one();
    assert!(
        t >= T::zero() && t < one,
        "preconditioning is defined for t in [0, 1), got {t}"
    );
    let u = eps - T::of(2.0);
    let d = one + u * t * (one - t);
    if d <= T::zero() {
        return Err(BridgeError::PrecondDenominator {
            t: t.to_f64_lossy(),
            eps: eps.to_f64_lossy(),
        });
    }
    Ok(PrecondCoeffs {
        c_in_sq: one / d,
        c_skip: -(one + u * t) / d,
        c_out_sq: (one - t + eps * t) / (d * (one - t)),
    })
}

/// The two direction losses of one step and their average, the trained
/// objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    /// `(fwd + bwd) / 2`, the quantity the gradient descends.
    pub total: T,
    pub fwd: T,
    pub bwd: T,
}

/// Mean squared bridge-regression error of one direction: interpolate the
/// coupling's bridges at the given times and noise, form the drift targets,
/// and regress the direction's signal of the network on them. Backward rows
/// are evaluated at network time `1 - t` (each direction runs its own
/// clock). Row indices in errors refer to rows of `coupling`.
pub fn direction_loss_with<T: Real>(
    params: &VectorFieldParams<T>,
    coupling: &CouplingBatch<T>,
    t: &[T],
    z: &Batch<T>,
    eps: T,
    direction: Direction,
) -> Result<(T, Gradients<T>), BridgeError> {
    let x_t = interp(coupling.x0(), coupling.x1(), z, t, eps)?;
    let tau = targets(coupling.x0(), coupling.x1(), &x_t, t, direction)?;
    let one = T::one();
    let times: Vec<T> = match direction {
        Direction::Forward => t.to_vec(),
        Direction::Backward => t.iter().map(|&ti| one - ti).collect(),
    };
    let dirs = vec![direction; coupling.n()];
    let batch = LossBatch {
        dirs: &dirs,
        times: &times,
        x: &x_t,
        target: &tau,
    };
    Ok(loss_and_grad(params, &batch)?)
}

/// Deterministic core of [`bidirectional_empirical_loss`]: the caller
/// supplies the per-row times and bridge noise. Forward rows regress
/// `v(1, t, .)` on `coupling_fwd`'s bridges, backward rows regress
/// `v(0, 1-t, .)` on `coupling_bwd`'s; the two halves must have equal size,
/// and the returned gradient is of the average `(fwd + bwd) / 2`.
#[allow(clippy::too_many_arguments)]
pub fn bidirectional_loss_with<T: Real>(
    params: &VectorFieldParams<T>,
    coupling_fwd: &CouplingBatch<T>,
    coupling_bwd: &CouplingBatch<T>,
    t_fwd: &[T],
    z_fwd: &Batch<T>,
    t_bwd: &[T],
    z_bwd: &Batch<T>,
    eps: T,
) -> Result<(LossParts<T>, Gradients<T>), BridgeError> {
    let b = coupling_fwd.n();
    if coupling_bwd.n() != b || coupling_fwd.dim() != coupling_bwd.dim() {
        return Err(BridgeError::ShapeMismatch(format!(
            "half-batches must agree: forward {}x{}, backward {}x{}",
            b,
            coupling_fwd.dim(),
            coupling_bwd.n(),
            coupling_bwd.dim()
        )));
    }
    let (loss_fwd, mut grads) =
        direction_loss_with(params, coupling_fwd, t_fwd, z_fwd, eps, Direction::Forward)?;
    let (loss_bwd, grads_bwd) =
        direction_loss_with(params, coupling_bwd, t_bwd, z_bwd, eps, Direction::Backward)?;
    let half = T::of(0.5);
    grads.zip_mut_with(&grads_bwd, |a, b| *a = half * (*a + b));
    let parts = LossParts {
        total: half * (loss_fwd + loss_bwd),
        fwd: loss_fwd,
        bwd: loss_bwd,
    };
    Ok((parts, grads))
}

fn draw_loss_times<T: Real>(rng: &mut RngState, n: usize, t_min: T) -> Vec<T> {
    let span = T::one() - T::of(2.0) * t_min;
    sample_uniform::<T>(rng, n)
        .into_iter()
        .map(|u| t_min + span * u)
        .collect()
}

/// One direction of the empirical loss with freshly drawn times (uniform on
/// `[t_min, 1 - t_min]`) and bridge noise, consumed in that order.
pub fn direction_empirical_loss<T: Real>(
    params: &VectorFieldParams<T>,
    coupling: &CouplingBatch<T>,
    rng: &mut RngState,
    eps: T,
    t_min: T,
    direction: Direction,
) -> Result<(T, Gradients<T>), BridgeError> {
    let t = draw_loss_times(rng, coupling.n(), t_min);
    let z = sample_std_normal::<T>(rng, coupling.n(), coupling.dim());
    direction_loss_with(params, coupling, &t, &z, eps, direction)
}

/// Empirical bidirectional bridge-matching loss and its gradient, with the
/// loss-time window `[t_min, 1 - t_min]` chosen by the caller.
///
/// Per half-batch row, one time and one standard-normal bridge noise row
/// are drawn; the RNG stream is consumed in the fixed order (forward times,
/// forward noise, backward times, backward noise), which makes runs with
/// equal states bit-reproducible.
pub fn bidirectional_empirical_loss_windowed<T: Real>(
    params: &VectorFieldParams<T>,
    coupling_fwd: &CouplingBatch<T>,
    coupling_bwd: &CouplingBatch<T>,
    rng: &mut RngState,
    eps: T,
    t_min: T,
) -> Result<(LossParts<T>, Gradients<T>), BridgeError> {
    let b = coupling_fwd.n();
    let d = coupling_fwd.dim();
    let t_fwd = draw_loss_times(rng, b, t_min);
    let z_fwd = sample_std_normal::<T>(rng, b, d);
    let t_bwd = draw_loss_times(rng, b, t_min);
    let z_bwd = sample_std_normal::<T>(rng, b, d);
    bidirectional_loss_with(
        params,
        coupling_fwd,
        coupling_bwd,
        &t_fwd,
        &z_fwd,
        &t_bwd,
        &z_bwd,
        eps,
    )
}

/// [`bidirectional_empirical_loss_windowed`] at the default window
/// `[T_MIN, 1 - T_MIN]`.
pub fn bidirectional_empirical_loss<T: Real>(
    params: &VectorFieldParams<T>,
    coupling_fwd: &CouplingBatch<T>,
    coupling_bwd: &CouplingBatch<T>,
    rng: &mut RngState,
    eps: T,
) -> Result<(LossParts<T>, Gradients<T>), BridgeError> {
    bidirectional_empirical_loss_windowed(
        params,
        coupling_fwd,
        coupling_bwd,
        rng,
        eps,
        T::of(T_MIN),
    )
}

//! Closed-form Gaussian and toy-model ground truth.
//!
//! Three independent verification tracks live here:
//!
//! * the entropic optimal coupling of two centered Gaussians, both in closed
//!   form ([`gaussian_eot_cross_cov`]) and as a grid-discretized Sinkhorn
//!   solve ([`sinkhorn_1d_oracle`]) that validates the closed form;
//! * the exact covariance recursion of the alternating projection iteration
//!   for standard normal marginals at reference diffusivity 2
//!   ([`imf_gaussian_step`]), including the drift-error perturbation that
//!   separates the stable forward-backward scheme from the unstable
//!   forward-forward one;
//! * a two-dimensional projected toy system ([`toy_flow`], [`toy_iterate`])
//!   whose flow and iterates are known exactly.
//!
//! The recursion works with scalar coupling coefficients `(c00, c11, c01)`:
//! both endpoint marginals are isotropic, so every covariance matrix in play
//! is a multiple of the identity and one scalar per block suffices.

use thiserror::Error;

use crate::numerics::{quadrature, Batch, NumericsError};
use crate::Real;

/// Composite-Simpson panels per unit interval for the recursion's exponent
/// integrals. One panel is one application of the basic rule and spans two
/// evaluation subintervals, so the node spacing at full resolution is
/// `1 / (2 * IMF_PANELS_PER_UNIT)`; that keeps the exact-recursion examples
/// (unit terminal variance at zero drift error) well inside 1e-9.
pub const IMF_PANELS_PER_UNIT: usize = 512;

/// Consecutive-iterate movement below this is treated as a fixed point.
pub const FIXED_POINT_TOL: f64 = 1e-12;

/// Reference diffusivity of the recursion testbed (the SDEs carry `sqrt(2) dB`).
const RECURSION_EPS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error("covariance state left admissible region")]
    CovarianceInadmissible,
    #[error("sinkhorn failed to converge within {max_iters} iterations (marginal L1 error {residual:.3e})")]
    SinkhornDiverged { max_iters: usize, residual: f64 },
    #[error("toy start must satisfy 0 < y0 < x0, got ({x0}, {y0})")]
    ToyPrecondition { x0: f64, y0: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Cross-covariance of the entropic optimal coupling of `N(0, sigma0^2)` and
/// `N(0, sigma1^2)` with regularization `eps`.
///
/// `sigma*^2 = ((4 sigma0^2 sigma1^2 + eps^2)^(1/2) - eps) / 2`, the unique
/// positive root of the stationarity condition for the coupled Gaussian; it
/// degenerates to the monotone transport value `sigma0 sigma1` as `eps -> 0`
/// and to independence as `eps -> inf`. Validated against
/// [`sinkhorn_1d_oracle`] in the test suite.
pub fn gaussian_eot_cross_cov<T: Real>(sigma0: T, sigma1: T, eps: T) -> T {
    assert!(
        sigma0 > T::zero() && sigma1 > T::zero() && eps > T::zero(),
        "gaussian_eot_cross_cov requires positive inputs"
    );
    let four = T::of(4.0);
    let s2 = sigma0 * sigma0 * sigma1 * sigma1;
    ((four * s2 + eps * eps).sqrt() - eps) / T::of(2.0)
}

/// Brute-force entropic coupling of two centered 1D Gaussians on a grid.
///
/// Both marginals are discretized on the same `m`-point uniform grid over
/// `[-grid_halfwidth, grid_halfwidth]`, the Gibbs kernel is
/// `exp(-(x-y)^2 / (2 eps))`, and Sinkhorn runs until the column-marginal L1
/// error drops below `1e-10`. Returns `E[X Y]` under the converged coupling.
///
/// Preconditions (asserted): `m >= 100` and the grid spans at least five
/// standard deviations of the wider marginal.
pub fn sinkhorn_1d_oracle<T: Real>(
    sigma0: T,
    sigma1: T,
    eps: T,
    grid_halfwidth: T,
    m: usize,
) -> Result<T, AnalyticError> {
    assert!(m >= 100, "oracle grid needs at least 100 points, got {m}");
    let widest = sigma0.max(sigma1);
    assert!(
        grid_halfwidth >= T::of(5.0) * widest,
        "oracle grid must span at least 5 standard deviations"
    );

    // All internal arithmetic in f64: this is a ground-truth oracle, not a
    // generic kernel.
    let (s0, s1, e, hw) = (
        sigma0.to_f64_lossy(),
        sigma1.to_f64_lossy(),
        eps.to_f64_lossy(),
        grid_halfwidth.to_f64_lossy(),
    );
    let step = 2.0 * hw / (m - 1) as f64;
    let grid: Vec<f64> = (0..m).map(|i| -hw + step * i as f64).collect();
    let weights = |sigma: f64| -> Vec<f64> {
        let raw: Vec<f64> = grid.iter().map(|x| (-x * x / (2.0 * sigma * sigma)).exp()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    };
    let a = weights(s0);
    let b = weights(s1);
    let kernel: Vec<f64> = grid
        .iter()
        .flat_map(|&x| grid.iter().map(move |&y| (-(x - y) * (x - y) / (2.0 * e)).exp()))
        .collect();

    let mut u = vec![1.0f64; m];
    let mut v = vec![1.0f64; m];
    const MAX_ITERS: usize = 200_000;
    const TOL: f64 = 1e-10;
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        // u <- a ./ K v
        for i in 0..m {
            let kv: f64 = kernel[i * m..(i + 1) * m]
                .iter()
                .zip(&v)
                .map(|(k, vj)| k * vj)
                .sum();
            u[i] = a[i] / kv;
        }
        // v <- b ./ K' u, tracking how far the column marginals were off.
        residual = 0.0;
        for j in 0..m {
            let ktu: f64 = (0..m).map(|i| kernel[i * m + j] * u[i]).sum();
            residual += (v[j] * ktu - b[j]).abs();
            v[j] = b[j] / ktu;
        }
        if residual < TOL {
            let mut cross = 0.0;
            for i in 0..m {
                for j in 0..m {
                    cross += grid[i] * grid[j] * u[i] * kernel[i * m + j] * v[j];
                }
            }
            return Ok(T::of(cross));
        }
    }
    Err(AnalyticError::SinkhornDiverged {
        max_iters: MAX_ITERS,
        residual,
    })
}

/// Marginal variance of the Brownian interpolation of a coupled Gaussian
/// pair: `Var(X_t) = (1-t)^2 c00 + t^2 c11 + 2 t (1-t) c01 + eps t (1-t)`.
pub fn gaussian_marginal_var<T: Real>(t: T, c00: T, c11: T, c01: T, eps: T) -> T {
    let one = T::one();
    let two = T::of(2.0);
    (one - t) * (one - t) * c00 + t * t * c11 + two * t * (one - t) * c01 + eps * t * (one - t)
}

/// Drift coefficient of the Markov projection at reference diffusivity 2.
///
/// For a coupled Gaussian pair with coefficients `(c00, c11, c01)` the
/// projected forward drift is linear, `a_t x`, with
///
/// `a_t = [-(1-t) c00 + t c11 + (1-2t) c01 - 2t] / Var(X_t)`
///
/// where the variance carries the diffusivity-2 bridge term. Panics if the
/// variance is not positive (inadmissible coefficients).
pub fn gaussian_drift_coeff<T: Real>(t: T, c00: T, c11: T, c01: T) -> T {
    drift_coeff_checked(t, c00, c11, c01).expect("covariance coefficients admissible")
}

fn drift_coeff_checked<T: Real>(t: T, c00: T, c11: T, c01: T) -> Option<T> {
    let one = T::one();
    let two = T::of(2.0);
    let denom = gaussian_marginal_var(t, c00, c11, c01, T::of(RECURSION_EPS));
    if denom <= T::zero() {
        return None;
    }
    let numer = -(one - t) * c00 + t * c11 + (one - two * t) * c01 - two * t;
    Some(numer / denom)
}

/// Scalar coupling coefficients `(c00, c11, c01)` of a centered Gaussian
/// pair with isotropic blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingCoeffs<T> {
    pub c00: T,
    pub c11: T,
    pub c01: T,
}

impl<T: Real> CouplingCoeffs<T> {
    /// Independent coupling of two standard normals.
    pub fn independent() -> Self {
        Self {
            c00: T::one(),
            c11: T::one(),
            c01: T::zero(),
        }
    }

    /// Cauchy-Schwarz admissibility.
    pub fn is_admissible(&self) -> bool {
        self.c00 > T::zero() && self.c11 > T::zero() && self.c01 * self.c01 <= self.c00 * self.c11
    }

    /// Largest absolute coefficient difference to `other`.
    pub fn delta(&self, other: &Self) -> T {
        (self.c00 - other.c00)
            .abs()
            .max((self.c11 - other.c11).abs())
            .max((self.c01 - other.c01).abs())
    }
}

/// Update scheduling of the exact projection iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterMode {
    /// Re-project the forward chain onto itself every step. Drift errors
    /// compound: the generated terminal variance drifts away from 1.
    ForwardForward,
    /// Alternate forward and backward chains, each consuming the other's
    /// coupling. Drift errors cancel across the alternation.
    ForwardBackward,
}

/// State of the projection iteration: the forward chain's coupling, plus the
/// backward chain's in forward-backward mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianIterState<T> {
    pub mode: IterMode,
    /// Coupling `(X0, X^1)` generated by the forward chain; `c00 = 1` (the
    /// chain starts at the true source marginal).
    pub fwd: CouplingCoeffs<T>,
    /// Coupling `(X^0, X1)` generated by the backward chain; `c11 = 1`.
    /// Present only in forward-backward mode.
    pub bwd: Option<CouplingCoeffs<T>>,
}

impl<T: Real> GaussianIterState<T> {
    /// Start both chains at the independent coupling.
    pub fn initial(mode: IterMode) -> Self {
        Self {
            mode,
            fwd: CouplingCoeffs::independent(),
            bwd: match mode {
                IterMode::ForwardForward => None,
                IterMode::ForwardBackward => Some(CouplingCoeffs::independent()),
            },
        }
    }

    /// Largest coefficient movement between two states; below
    /// [`FIXED_POINT_TOL`] the iteration is considered converged.
    pub fn delta(&self, other: &Self) -> T {
        let fwd = self.fwd.delta(&other.fwd);
        match (&self.bwd, &other.bwd) {
            (Some(a), Some(b)) => fwd.max(a.delta(b)),
            _ => fwd,
        }
    }
}

/// Exponent integral of the linear-drift SDE induced by coefficients `c`:
/// `F(t) = 2 * int_0^t a_s ds + 2 * eps_err * t`, with the drift read from
/// `c` and the systematic per-step drift error `eps_err` entering as a
/// constant shift `a_s + eps_err`.
fn exponent_integral<T: Real>(c: &CouplingCoeffs<T>, eps_err: T, t: T) -> Result<T, AnalyticError> {
    let panels = panels_for(t);
    let two = T::of(2.0);
    let raw = quadrature(
        |s| drift_coeff_checked(s, c.c00, c.c11, c.c01).unwrap_or_else(T::nan),
        T::zero(),
        t,
        panels,
    )
    .map_err(|e| match e {
        NumericsError::IntegrandNotFinite { .. } => AnalyticError::CovarianceInadmissible,
        other => AnalyticError::Numerics(other),
    })?;
    Ok(two * raw + two * eps_err * t)
}

/// Subinterval count for an exponent integral over `[0, t]`: two per panel,
/// proportionally fewer on short intervals, never below one full panel.
fn panels_for<T: Real>(t: T) -> usize {
    let frac = t.to_f64_lossy().abs();
    let panels = (IMF_PANELS_PER_UNIT as f64 * frac).ceil().max(1.0) as usize;
    2 * panels
}

/// One projection of the coupling `c` (endpoint variance slots already in
/// drift convention: `c.c11` is the variance of the endpoint the drift aims
/// at). Returns the projected chain's new `(terminal variance, cross
/// covariance)`; the chain's start is the true unit-variance marginal.
fn project_coupling<T: Real>(
    c: &CouplingCoeffs<T>,
    eps_err: T,
) -> Result<(T, T), AnalyticError> {
    let one = T::one();
    let two = T::of(2.0);
    let f1 = exponent_integral(c, eps_err, one)?;
    let cross = (f1 / two).exp();
    let tail = quadrature(
        |s| match exponent_integral(c, eps_err, s) {
            Ok(fs) => (-fs).exp(),
            Err(_) => T::nan(),
        },
        T::zero(),
        one,
        2 * IMF_PANELS_PER_UNIT,
    )
    .map_err(|e| match e {
        NumericsError::IntegrandNotFinite { .. } => AnalyticError::CovarianceInadmissible,
        other => AnalyticError::Numerics(other),
    })?;
    let var = f1.exp() * (one + two * tail);
    Ok((var, cross))
}

/// One full iteration of the exact projection recursion with multiplicative
/// drift error `eps_err`.
///
/// Forward-forward: the forward chain re-projects its own coupling
/// `(1, c11, c01)`, producing new `(c11, c01)`; `c00` stays 1.
///
/// Forward-backward: the chains cross. The forward chain projects the
/// backward chain's coupling (its `c00` in the drift's source slot, target
/// marginal pinned at 1), and the backward chain projects the forward
/// chain's coupling with the roles mirrored (the forward `c11` enters the
/// source slot). Both halves read the previous state.
pub fn imf_gaussian_step<T: Real>(
    state: &GaussianIterState<T>,
    eps_err: T,
) -> Result<GaussianIterState<T>, AnalyticError> {
    match state.mode {
        IterMode::ForwardForward => {
            let (var, cross) = project_coupling(&state.fwd, eps_err)?;
            Ok(GaussianIterState {
                mode: state.mode,
                fwd: CouplingCoeffs {
                    c00: T::one(),
                    c11: var,
                    c01: cross,
                },
                bwd: None,
            })
        }
        IterMode::ForwardBackward => {
            let bwd = state
                .bwd
                .as_ref()
                .expect("forward-backward state carries a backward chain");
            // Forward half consumes the backward coupling (X^0, X1):
            // source variance bwd.c00, target marginal exactly 1.
            let (fwd_var, fwd_cross) = project_coupling(
                &CouplingCoeffs {
                    c00: bwd.c00,
                    c11: T::one(),
                    c01: bwd.c01,
                },
                eps_err,
            )?;
            // Backward half consumes the forward coupling (X0, X^1) with
            // time reversed: the forward terminal variance fills the source
            // slot.
            let (bwd_var, bwd_cross) = project_coupling(
                &CouplingCoeffs {
                    c00: state.fwd.c11,
                    c11: T::one(),
                    c01: state.fwd.c01,
                },
                eps_err,
            )?;
            Ok(GaussianIterState {
                mode: state.mode,
                fwd: CouplingCoeffs {
                    c00: T::one(),
                    c11: fwd_var,
                    c01: fwd_cross,
                },
                bwd: Some(CouplingCoeffs {
                    c00: bwd_var,
                    c11: T::one(),
                    c01: bwd_cross,
                }),
            })
        }
    }
}

/// State of the projected toy system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyState<T> {
    pub x: T,
    pub y: T,
}

fn toy_check_start<T: Real>(x0: T, y0: T) -> Result<(), AnalyticError> {
    if y0 > T::zero() && y0 < x0 {
        Ok(())
    } else {
        Err(AnalyticError::ToyPrecondition {
            x0: x0.to_f64_lossy(),
            y0: y0.to_f64_lossy(),
        })
    }
}

/// Closed-form flow of the projected toy system:
/// `x_t = x0 e^{-t/2}`, `y_t = x_t + x_t^2 (y0 - x0) / x0^2`.
///
/// Requires a start strictly between the two constraint sets, `0 < y0 < x0`.
pub fn toy_flow<T: Real>(x0: T, y0: T, t: T) -> Result<ToyState<T>, AnalyticError> {
    toy_check_start(x0, y0)?;
    let x = x0 * (-t / T::of(2.0)).exp();
    let y = x + x * x * (y0 - x0) / (x0 * x0);
    Ok(ToyState { x, y })
}

/// The projection step the toy iteration relaxes toward: drop to the lower
/// half-plane `{y <= 0}`, then project onto `{y >= x}`.
pub fn toy_projection_target<T: Real>(state: ToyState<T>) -> ToyState<T> {
    let ToyState { x, y } = state;
    // Onto A2 = {y <= 0}.
    let (x, y) = if y > T::zero() { (x, T::zero()) } else { (x, y) };
    // Onto A1 = {y >= x}.
    if y < x {
        let m = (x + y) / T::of(2.0);
        ToyState { x: m, y: m }
    } else {
        ToyState { x, y }
    }
}

/// `n` steps of the relaxed projected iteration
/// `(x, y) <- (1 - alpha) (x, y) + alpha * proj(x, y)`.
///
/// Requires `0 < y0 < x0`. With step size 1 the x-coordinate halves exactly
/// each iteration.
pub fn toy_iterate<T: Real>(x0: T, y0: T, alpha: T, n: usize) -> Result<ToyState<T>, AnalyticError> {
    toy_check_start(x0, y0)?;
    let one = T::one();
    let mut state = ToyState { x: x0, y: y0 };
    for _ in 0..n {
        let target = toy_projection_target(state);
        state = ToyState {
            x: (one - alpha) * state.x + alpha * target.x,
            y: (one - alpha) * state.y + alpha * target.y,
        };
    }
    Ok(state)
}

/// Arithmetic core of the consistency check: mean over rows of
/// `|| v_fwd + v_bwd - eps * score ||^2` for already-evaluated fields.
pub fn consistency_residual_of<T: Real>(
    v_fwd: &Batch<T>,
    v_bwd: &Batch<T>,
    score: &Batch<T>,
    eps: T,
) -> T {
    assert!(
        v_fwd.n() == v_bwd.n()
            && v_fwd.n() == score.n()
            && v_fwd.dim() == v_bwd.dim()
            && v_fwd.dim() == score.dim(),
        "consistency fields must share shape"
    );
    let mut acc = T::zero();
    for i in 0..v_fwd.n() {
        for j in 0..v_fwd.dim() {
            let r = v_fwd.array()[[i, j]] + v_bwd.array()[[i, j]] - eps * score.array()[[i, j]];
            acc += r * r;
        }
    }
    acc / T::from_usize(v_fwd.n()).expect("batch size fits in scalar")
}

/// Mean squared violation of the forward/backward drift consistency
/// identity `v(1, t, x) + v(0, 1-t, x) = eps * score(t, x)` over a probe
/// batch. Requires a bidirectional model and `t` strictly inside `(0, 1)`.
pub fn consistency_residual<T, F>(
    params: &crate::net::VectorFieldParams<T>,
    t: T,
    x_probe: &Batch<T>,
    eps: T,
    score: F,
) -> Result<T, crate::net::NetError>
where
    T: Real,
    F: Fn(T, &Batch<T>) -> Batch<T>,
{
    let fwd = crate::net::forward(params, crate::net::Direction::Forward, t, x_probe)?;
    let bwd = crate::net::forward(params, crate::net::Direction::Backward, T::one() - t, x_probe)?;
    let target = score(t, x_probe);
    Ok(consistency_residual_of(&fwd, &bwd, &target, eps))
}

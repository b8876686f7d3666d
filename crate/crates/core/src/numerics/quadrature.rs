//! Composite Simpson integration on a uniform grid.

use super::NumericsError;
use crate::Real;

/// Integrate `f` over `[a, b]` with composite Simpson on `n_panels` uniform
/// subintervals.
///
/// `n_panels` must be even and at least 2 (Simpson consumes subintervals in
/// pairs). Every integrand evaluation is checked; a NaN or infinity anywhere
/// on the grid is an error rather than a silently poisoned sum. Exact for
/// polynomials up to cubics, fourth-order accurate beyond.
pub fn quadrature<T, F>(f: F, a: T, b: T, n_panels: usize) -> Result<T, NumericsError>
where
    T: Real,
    F: Fn(T) -> T,
{
    if n_panels < 2 || n_panels % 2 != 0 {
        return Err(NumericsError::BadPanelCount { n_panels });
    }
    let n = T::from_usize(n_panels).expect("panel count fits in scalar");
    let h = (b - a) / n;
    let eval = |i: usize| -> Result<T, NumericsError> {
        let x = if i == n_panels {
            b
        } else {
            a + h * T::from_usize(i).expect("index fits in scalar")
        };
        let y = f(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(NumericsError::IntegrandNotFinite {
                x: x.to_f64_lossy(),
            })
        }
    };

    let four = T::of(4.0);
    let two = T::of(2.0);
    let mut acc = eval(0)? + eval(n_panels)?;
    for i in 1..n_panels {
        let w = if i % 2 == 1 { four } else { two };
        acc = acc + w * eval(i)?;
    }
    Ok(acc * h / T::of(3.0))
}

//! Synthetic 2D/Gaussian dataset generators and the evaluation metrics used
//! to score transport quality: isotropic covariance coefficient, exact
//! empirical 2-Wasserstein distance, and mean squared distance.

use crate::numerics::{sample_std_normal, sample_uniform, solve_assignment, Batch, CouplingBatch, NumericsError, RngState};
use crate::Real;
use ndarray::Array2;
use thiserror::Error;

/// Largest point cloud the exact assignment solver accepts; beyond this the
/// cubic Hungarian cost dominates an evaluation run.
pub const W2_MAX_POINTS: usize = 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("unknown dataset name: {name}")]
    UnknownDataset { name: String },
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("metric shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("point cloud of {n} rows exceeds the exact-assignment cap of {cap}")]
    CloudTooLarge { n: usize, cap: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// A dataset family with its per-family scale parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec<T: Real> {
    /// Isotropic centered Gaussian with scale `sigma` per coordinate.
    Gaussian { dim: usize, sigma: T },
    /// Equal mixture of eight Gaussians with sd `component_sd`, centers
    /// equally spaced on a ring of radius `radius`. Always 2D.
    EightGaussians { radius: T, component_sd: T },
    /// Two interleaved half circles with additive noise, standardized to
    /// zero mean and unit variance per coordinate. Always 2D.
    Moons { noise: T },
    /// S-shaped curve (the planar projection of the usual 3D S-curve) with
    /// additive noise, standardized per coordinate. Always 2D.
    Scurve { noise: T },
    /// Standard Gaussian paired with its own negation, `X1 = -X0`.
    AntitheticGaussian { dim: usize },
}

impl<T: Real> DatasetSpec<T> {
    /// Resolve a CLI-facing name with conventional default parameters:
    /// sigma 1, noise 0.05, ring radius 4 with component sd 0.3.
    pub fn from_name(name: &str, dim: usize) -> Result<Self, DataError> {
        let spec = match name {
            "gaussian" => DatasetSpec::Gaussian { dim, sigma: T::one() },
            "eight_gaussians" => DatasetSpec::EightGaussians {
                radius: T::of(4.0),
                component_sd: T::of(0.3),
            },
            "moons" => DatasetSpec::Moons { noise: T::of(0.05) },
            "scurve" => DatasetSpec::Scurve { noise: T::of(0.05) },
            "antithetic_gaussian" => DatasetSpec::AntitheticGaussian { dim },
            other => {
                return Err(DataError::UnknownDataset {
                    name: other.to_string(),
                })
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        match self {
            DatasetSpec::Gaussian { dim, .. } | DatasetSpec::AntitheticGaussian { dim } => *dim,
            _ => 2,
        }
    }

    /// Whether `make_batch` emits endpoint pairs rather than one marginal.
    pub fn is_coupled(&self) -> bool {
        matches!(self, DatasetSpec::AntitheticGaussian { .. })
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let positive = |v: T, what: &str| {
            if v > T::zero() {
                Ok(())
            } else {
                Err(DataError::InvalidSpec(format!("{what} must be positive, got {v}")))
            }
        };
        match self {
            DatasetSpec::Gaussian { dim, sigma } => {
                if *dim == 0 {
                    return Err(DataError::InvalidSpec("gaussian dim must be >= 1".into()));
                }
                positive(*sigma, "gaussian sigma")
            }
            DatasetSpec::EightGaussians { radius, component_sd } => {
                positive(*radius, "ring radius")?;
                positive(*component_sd, "component sd")
            }
            DatasetSpec::Moons { noise } | DatasetSpec::Scurve { noise } => {
                if *noise < T::zero() {
                    return Err(DataError::InvalidSpec(format!(
                        "noise level must be nonnegative, got {noise}"
                    )));
                }
                Ok(())
            }
            DatasetSpec::AntitheticGaussian { dim } => {
                if *dim == 0 {
                    return Err(DataError::InvalidSpec(
                        "antithetic_gaussian dim must be >= 1".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Output of `make_batch`: most families yield a single marginal; the
/// antithetic family yields endpoint pairs.
#[derive(Debug, Clone)]
pub enum SampleBatch<T: Real> {
    Marginal(Batch<T>),
    Coupled(CouplingBatch<T>),
}

impl<T: Real> SampleBatch<T> {
    pub fn into_marginal(self) -> Result<Batch<T>, DataError> {
        match self {
            SampleBatch::Marginal(b) => Ok(b),
            SampleBatch::Coupled(_) => Err(DataError::InvalidSpec(
                "expected a marginal batch, got a coupled one".into(),
            )),
        }
    }

    pub fn into_coupled(self) -> Result<CouplingBatch<T>, DataError> {
        match self {
            SampleBatch::Coupled(c) => Ok(c),
            SampleBatch::Marginal(_) => Err(DataError::InvalidSpec(
                "expected a coupled batch, got a marginal one".into(),
            )),
        }
    }
}

/// Draw `n` fresh samples. Families are infinite streams: every call
/// consumes the rng and never repeats a fixed dataset.
pub fn make_batch<T: Real>(
    spec: &DatasetSpec<T>,
    n: usize,
    rng: &mut RngState,
) -> Result<SampleBatch<T>, DataError> {
    assert!(n >= 1, "batch size must be at least 1");
    spec.validate()?;
    let out = match spec {
        DatasetSpec::Gaussian { dim, sigma } => {
            let z = sample_std_normal::<T>(rng, n, *dim);
            let s = *sigma;
            SampleBatch::Marginal(checked(z.into_array().mapv(|v| s * v))?)
        }
        DatasetSpec::EightGaussians { radius, component_sd } => {
            let picks: Vec<T> = sample_uniform(rng, n);
            let z = sample_std_normal::<T>(rng, n, 2);
            let mut arr = z.into_array().mapv(|v| *component_sd * v);
            let oct = T::of(std::f64::consts::PI / 4.0);
            for (i, u) in picks.iter().enumerate() {
                let k = (u.to_f64_lossy() * 8.0).floor().min(7.0);
                let angle = oct * T::of(k);
                arr[[i, 0]] += *radius * angle.cos();
                arr[[i, 1]] += *radius * angle.sin();
            }
            SampleBatch::Marginal(checked(arr)?)
        }
        DatasetSpec::Moons { noise } => SampleBatch::Marginal(moons(n, *noise, rng)?),
        DatasetSpec::Scurve { noise } => SampleBatch::Marginal(scurve(n, *noise, rng)?),
        DatasetSpec::AntitheticGaussian { dim } => {
            let x0 = sample_std_normal::<T>(rng, n, *dim);
            let x1 = checked(x0.array().mapv(|v| -v))?;
            SampleBatch::Coupled(CouplingBatch::new(x0, x1)?)
        }
    };
    Ok(out)
}

fn checked<T: Real>(arr: Array2<T>) -> Result<Batch<T>, DataError> {
    Ok(Batch::new(arr)?)
}

/// Two half circles: the upper arc of the unit circle and a lower arc
/// shifted to interleave with it. Rows split evenly between the branches;
/// draws consume angle uniforms first, then the noise normals. Output is
/// standardized with the closed-form moments of the noisy mixture.
fn moons<T: Real>(n: usize, noise: T, rng: &mut RngState) -> Result<Batch<T>, DataError> {
    let angles: Vec<T> = sample_uniform(rng, n);
    let z = sample_std_normal::<T>(rng, n, 2);
    let n_outer = n.div_ceil(2);
    let pi = T::of(std::f64::consts::PI);
    let mut arr = Array2::zeros((n, 2));
    for (i, u) in angles.iter().enumerate() {
        let theta = pi * *u;
        if i < n_outer {
            arr[[i, 0]] = theta.cos();
            arr[[i, 1]] = theta.sin();
        } else {
            arr[[i, 0]] = T::one() - theta.cos();
            arr[[i, 1]] = T::of(0.5) - theta.sin();
        }
    }
    arr = arr + &z.into_array().mapv(|v| noise * v);
    // Mixture moments: E[x]=1/2, Var[x]=3/4; E[y]=1/4, Var[y]=9/16-1/pi.
    let var_y = T::of(9.0 / 16.0 - 1.0 / std::f64::consts::PI);
    standardize(&mut arr, [T::of(0.5), T::of(0.25)], [T::of(0.75), var_y], noise);
    checked(arr)
}

/// Planar S-curve: (sin t, sign(t)(cos t - 1)) with t uniform on
/// [-3pi/2, 3pi/2], plus noise, standardized with closed-form moments.
fn scurve<T: Real>(n: usize, noise: T, rng: &mut RngState) -> Result<Batch<T>, DataError> {
    let us: Vec<T> = sample_uniform(rng, n);
    let z = sample_std_normal::<T>(rng, n, 2);
    let three_pi = T::of(3.0 * std::f64::consts::PI);
    let mut arr = Array2::zeros((n, 2));
    for (i, u) in us.iter().enumerate() {
        let t = three_pi * (*u - T::of(0.5));
        arr[[i, 0]] = t.sin();
        arr[[i, 1]] = t.signum() * (t.cos() - T::one());
    }
    arr = arr + &z.into_array().mapv(|v| noise * v);
    // E[x]=E[z]=0; Var[x]=1/2, Var[z]=3/2+4/(3pi).
    let var_z = T::of(1.5 + 4.0 / (3.0 * std::f64::consts::PI));
    standardize(&mut arr, [T::zero(), T::zero()], [T::of(0.5), var_z], noise);
    checked(arr)
}

fn standardize<T: Real>(arr: &mut Array2<T>, mean: [T; 2], var: [T; 2], noise: T) {
    for c in 0..2 {
        let scale = T::one() / (var[c] + noise * noise).sqrt();
        for v in arr.column_mut(c) {
            *v = (*v - mean[c]) * scale;
        }
    }
}

/// Isotropic covariance coefficient: the mean over rows and coordinates of
/// the product `a*b`. For centered isotropic pairs this estimates the
/// per-coordinate cross-covariance.
pub fn empirical_cov<T: Real>(a: &Batch<T>, b: &Batch<T>) -> Result<T, DataError> {
    same_shape(a, b)?;
    let total = a
        .array()
        .iter()
        .zip(b.array().iter())
        .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
    Ok(total / T::from_usize(a.n() * a.dim()).expect("batch size fits in scalar"))
}

/// Exact empirical 2-Wasserstein distance between equal-size point clouds:
/// the square root of the optimal-assignment mean squared cost.
pub fn wasserstein2<T: Real>(a: &Batch<T>, b: &Batch<T>) -> Result<T, DataError> {
    same_shape(a, b)?;
    let n = a.n();
    if n > W2_MAX_POINTS {
        return Err(DataError::CloudTooLarge { n, cap: W2_MAX_POINTS });
    }
    let mut cost = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut d2 = T::zero();
            for c in 0..a.dim() {
                let diff = a.array()[[i, c]] - b.array()[[j, c]];
                d2 += diff * diff;
            }
            cost[[i, j]] = d2;
        }
    }
    let assignment = solve_assignment(&cost)?;
    let total = assignment
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (i, &j)| acc + cost[[i, j]]);
    Ok((total / T::from_usize(n).expect("batch size fits in scalar")).sqrt())
}

/// Mean squared distance between paired rows, normalized per coordinate so
/// values are comparable across dimensions.
pub fn msd<T: Real>(a: &Batch<T>, b: &Batch<T>) -> Result<T, DataError> {
    same_shape(a, b)?;
    let total = a
        .array()
        .iter()
        .zip(b.array().iter())
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
    Ok(total / T::from_usize(a.n() * a.dim()).expect("batch size fits in scalar"))
}

fn same_shape<T: Real>(a: &Batch<T>, b: &Batch<T>) -> Result<(), DataError> {
    if a.n() != b.n() || a.dim() != b.dim() {
        return Err(DataError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.n(),
            a.dim(),
            b.n(),
            b.dim()
        )));
    }
    Ok(())
}

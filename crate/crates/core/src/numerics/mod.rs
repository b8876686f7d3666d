//! Deterministic numeric substrate: sample batches, the counter-based RNG,
//! composite Simpson quadrature, and an exact linear-assignment solver.
//!
//! Everything downstream builds on these four pieces, so their contracts are
//! deliberately small: batches are finite by construction, random draws are a
//! pure function of `(seed, stream_id, counter)`, and the two numeric
//! routines are exact-or-error rather than best-effort.

mod assignment;
mod quadrature;
mod rng;

pub use assignment::solve_assignment;
pub use quadrature::quadrature;
pub use rng::{sample_std_normal, sample_uniform, RngState};

use ndarray::Array2;
use thiserror::Error;

use crate::Real;

/// Cap on assignment problem size; above this the cubic worst case stops
/// being desk-scale.
pub const ASSIGNMENT_CAP: usize = 4096;

/// Errors from the numeric substrate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("batch must be non-empty, got {n} x {d}")]
    EmptyBatch { n: usize, d: usize },
    #[error("batch contains a non-finite value at row {row}, column {col}")]
    NonFiniteBatch { row: usize, col: usize },
    #[error("paired batches differ in shape: {n0} x {d0} vs {n1} x {d1}")]
    CouplingShapeMismatch {
        n0: usize,
        d0: usize,
        n1: usize,
        d1: usize,
    },
    #[error("quadrature panel count must be even and at least 2, got {n_panels}")]
    BadPanelCount { n_panels: usize },
    #[error("integrand not finite at x = {x}")]
    IntegrandNotFinite { x: f64 },
    #[error("cost matrix must be square, got {nr} x {nc}")]
    NonSquareCost { nr: usize, nc: usize },
    #[error("cost matrix contains a non-finite entry at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },
    #[error("assignment size {n} exceeds cap {cap}")]
    AssignmentTooLarge { n: usize, cap: usize },
}

/// A batch of `n` samples in `R^d`, stored row-major as an `n x d` array.
///
/// Invariants: `n >= 1`, `d >= 1`, every entry finite. Enforced at
/// construction; producers inside the crate that can prove finiteness (or
/// that check it themselves with better diagnostics, like the SDE loop) use
/// the unchecked constructor.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    data: Array2<T>,
}

impl<T: Real> Batch<T> {
    /// Validating constructor.
    pub fn new(data: Array2<T>) -> Result<Self, NumericsError> {
        let (n, d) = data.dim();
        if n == 0 || d == 0 {
            return Err(NumericsError::EmptyBatch { n, d });
        }
        if let Some((row, col)) = first_non_finite(&data) {
            return Err(NumericsError::NonFiniteBatch { row, col });
        }
        Ok(Self { data })
    }

    /// Constructor for producers that guarantee the invariants themselves.
    pub(crate) fn from_array_unchecked(data: Array2<T>) -> Self {
        debug_assert!(data.nrows() >= 1 && data.ncols() >= 1);
        Self { data }
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Read access to the underlying `n x d` array.
    pub fn array(&self) -> &Array2<T> {
        &self.data
    }

    /// Consume into the underlying array.
    pub fn into_array(self) -> Array2<T> {
        self.data
    }

    /// Rows `[begin, end)` as a new batch.
    pub fn slice_rows(&self, begin: usize, end: usize) -> Batch<T> {
        assert!(begin < end && end <= self.n(), "row range out of bounds");
        Batch::from_array_unchecked(self.data.slice(ndarray::s![begin..end, ..]).to_owned())
    }

    /// Location of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        first_non_finite(&self.data)
    }
}

fn first_non_finite<T: Real>(data: &Array2<T>) -> Option<(usize, usize)> {
    for ((row, col), &x) in data.indexed_iter() {
        if !x.is_finite() {
            return Some((row, col));
        }
    }
    None
}

/// A batch of endpoint pairs: row `i` of `x0` is coupled with row `i` of `x1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBatch<T> {
    x0: Batch<T>,
    x1: Batch<T>,
}

impl<T: Real> CouplingBatch<T> {
    /// Pair two batches; they must agree in both sample count and dimension.
    pub fn new(x0: Batch<T>, x1: Batch<T>) -> Result<Self, NumericsError> {
        if x0.n() != x1.n() || x0.dim() != x1.dim() {
            return Err(NumericsError::CouplingShapeMismatch {
                n0: x0.n(),
                d0: x0.dim(),
                n1: x1.n(),
                d1: x1.dim(),
            });
        }
        Ok(Self { x0, x1 })
    }

    pub fn n(&self) -> usize {
        self.x0.n()
    }

    pub fn dim(&self) -> usize {
        self.x0.dim()
    }

    pub fn x0(&self) -> &Batch<T> {
        &self.x0
    }

    pub fn x1(&self) -> &Batch<T> {
        &self.x1
    }

    pub fn into_parts(self) -> (Batch<T>, Batch<T>) {
        (self.x0, self.x1)
    }
}

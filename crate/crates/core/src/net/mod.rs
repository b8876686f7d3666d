//! Bidirectional neural vector field with hand-rolled exact gradients.
//!
//! One network represents both transport directions: `v(s, t, x)` with a
//! direction signal `s in {0, 1}` (1 = forward). Sinusoidal features of `t`
//! and of `s` pass through their own small MLPs and the results are
//! concatenated with `x` at the trunk input. With `bidirectional = false`
//! the direction pathway is absent and a pair of independent single-direction
//! networks plays the same role (the training layer decides which of the two
//! receives gradients).
//!
//! Gradients are exact reverse-mode, computed layer by layer against the
//! forward trace; the finite-difference master test in the crate's test
//! suite holds every parameter coordinate to the analytic value. Optimizer
//! steps (Adam), EMA tracking, and global-norm clipping operate structurally
//! on the same parameter container, and checkpoints serialize the complete
//! training state plus the RNG counter so a resumed run continues the exact
//! stream.

mod checkpoint;
mod forward;

pub use checkpoint::{load_checkpoint, read_train_state, save_checkpoint, write_train_state, CHECKPOINT_VERSION};
pub use forward::{forward, loss_and_grad, LossBatch};

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::numerics::{sample_uniform, NumericsError, RngState};
use crate::Real;

/// Adam first-moment decay.
pub const ADAM_BETA1: f64 = 0.9;
/// Adam second-moment decay.
pub const ADAM_BETA2: f64 = 0.999;
/// Adam denominator floor.
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("time out of domain: t = {t} is not in [0, 1)")]
    TimeOutOfDomain { t: f64 },
    #[error("loss is not finite at batch row {row}")]
    NonFiniteLoss { row: usize },
    #[error("invalid net spec: {0}")]
    InvalidSpec(String),
    #[error("batch dimension {got} does not match net input dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("loss batch field lengths disagree: {0}")]
    LossBatchShape(String),
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),
    #[error("checkpoint io error: {0}")]
    CheckpointIo(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Architecture of a vector field network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetSpec {
    /// Ambient dimension of the transported samples.
    pub input_dim: usize,
    /// Width of the trunk's hidden layers.
    pub hidden_units: usize,
    /// Number of hidden trunk layers.
    pub depth: usize,
    /// Sinusoidal feature count for the time input; must be even (sin/cos
    /// pairs over a geometric frequency ladder).
    pub time_embed_dim: usize,
    /// Width (hidden and output) of the embedding MLPs.
    pub embed_hidden: usize,
    /// Whether a direction pathway exists. `false` builds a single-direction
    /// network; pair two of them for the two-network variant.
    pub bidirectional: bool,
}

impl NetSpec {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_dim == 0
            || self.hidden_units == 0
            || self.depth == 0
            || self.time_embed_dim == 0
            || self.embed_hidden == 0
        {
            return Err(NetError::InvalidSpec(format!(
                "all dimensions must be at least 1, got {self:?}"
            )));
        }
        if self.time_embed_dim % 2 != 0 {
            return Err(NetError::InvalidSpec(format!(
                "time_embed_dim must be even, got {}",
                self.time_embed_dim
            )));
        }
        Ok(())
    }

    /// Trunk input width: `x` plus the time embedding, plus the direction
    /// embedding when present.
    pub fn trunk_input_dim(&self) -> usize {
        self.input_dim + self.embed_hidden * if self.bidirectional { 2 } else { 1 }
    }
}

/// Transport direction; doubles as the network's direction signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    /// Signal value fed to the direction embedding: forward 1, backward 0.
    pub fn signal<T: Real>(self) -> T {
        match self {
            Direction::Forward => T::one(),
            Direction::Backward => T::zero(),
        }
    }
}

/// One affine layer, weights `in x out`, applied as `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Real> Dense<T> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    /// Fan-in variance-scaled uniform weights, zero biases.
    fn init(fan_in: usize, fan_out: usize, rng: &mut RngState) -> Self {
        let bound = T::one() / T::from_usize(fan_in).expect("fan-in fits in scalar").sqrt();
        let draws = sample_uniform::<T>(rng, fan_in * fan_out);
        let two = T::of(2.0);
        let w = Array2::from_shape_vec(
            (fan_in, fan_out),
            draws.into_iter().map(|u| (two * u - T::one()) * bound).collect(),
        )
        .expect("shape matches draw count");
        Self {
            w,
            b: Array1::zeros(fan_out),
        }
    }
}

/// All parameters of one vector field network.
///
/// Declaration order (also the checkpoint serialization order): the two
/// time-embedding layers, the two direction-embedding layers when
/// bidirectional, the trunk layers input-to-output, the output head.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldParams<T> {
    spec: NetSpec,
    pub(crate) time_embed: [Dense<T>; 2],
    pub(crate) dir_embed: Option<[Dense<T>; 2]>,
    pub(crate) trunk: Vec<Dense<T>>,
    pub(crate) head: Dense<T>,
}

/// Gradients share the parameter container's shape.
pub type Gradients<T> = VectorFieldParams<T>;

impl<T: Real> VectorFieldParams<T> {
    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    /// Zero-filled container with the spec's shapes.
    pub fn zeros(spec: NetSpec) -> Result<Self, NetError> {
        spec.validate()?;
        Ok(Self::build(spec, |fan_in, fan_out, _| Dense::zeros(fan_in, fan_out), &mut RngState::new(0, 0)))
    }

    fn build(
        spec: NetSpec,
        mut make: impl FnMut(usize, usize, &mut RngState) -> Dense<T>,
        rng: &mut RngState,
    ) -> Self {
        let ted = spec.time_embed_dim;
        let eh = spec.embed_hidden;
        let time_embed = [make(ted, eh, rng), make(eh, eh, rng)];
        let dir_embed = spec
            .bidirectional
            .then(|| [make(ted, eh, rng), make(eh, eh, rng)]);
        let mut trunk = Vec::with_capacity(spec.depth);
        let mut fan_in = spec.trunk_input_dim();
        for _ in 0..spec.depth {
            trunk.push(make(fan_in, spec.hidden_units, rng));
            fan_in = spec.hidden_units;
        }
        let head = make(spec.hidden_units, spec.input_dim, rng);
        Self {
            spec,
            time_embed,
            dir_embed,
            trunk,
            head,
        }
    }

    /// Layers in declaration order.
    pub(crate) fn layers(&self) -> impl Iterator<Item = &Dense<T>> {
        self.time_embed
            .iter()
            .chain(self.dir_embed.iter().flatten())
            .chain(self.trunk.iter())
            .chain(std::iter::once(&self.head))
    }

    pub(crate) fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense<T>> {
        self.time_embed
            .iter_mut()
            .chain(self.dir_embed.iter_mut().flatten())
            .chain(self.trunk.iter_mut())
            .chain(std::iter::once(&mut self.head))
    }

    /// Apply `f` to every matched coordinate pair `(self, other)`.
    pub(crate) fn zip_mut_with(&mut self, other: &Self, mut f: impl FnMut(&mut T, T)) {
        debug_assert_eq!(self.spec, other.spec);
        for (a, b) in self.layers_mut().zip(other.layers()) {
            a.w.zip_mut_with(&b.w, |x, &y| f(x, y));
            a.b.zip_mut_with(&b.b, |x, &y| f(x, y));
        }
    }

    /// All coordinates in declaration order (each layer: weights row-major,
    /// then biases). This order is the checkpoint serialization order.
    pub fn coords(&self) -> impl Iterator<Item = &T> {
        self.layers().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    /// Mutable coordinate walk in the same order as [`Self::coords`].
    pub fn coords_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers_mut()
            .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    /// Total parameter count.
    pub fn coord_count(&self) -> usize {
        self.layers().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Sum of squares over every coordinate.
    pub fn sq_norm(&self) -> T {
        let mut acc = T::zero();
        for layer in self.layers() {
            acc += layer.w.iter().fold(T::zero(), |s, &x| s + x * x);
            acc += layer.b.iter().fold(T::zero(), |s, &x| s + x * x);
        }
        acc
    }

    /// Multiply every coordinate in place.
    pub fn scale(&mut self, factor: T) {
        for layer in self.layers_mut() {
            layer.w.mapv_inplace(|x| x * factor);
            layer.b.mapv_inplace(|x| x * factor);
        }
    }
}

/// Initialize a vector field with fan-in variance-scaled uniform weights and
/// zero biases. Layer draws consume the RNG stream in declaration order.
pub fn init_vector_field<T: Real>(
    spec: NetSpec,
    rng: &mut RngState,
) -> Result<VectorFieldParams<T>, NetError> {
    spec.validate()?;
    Ok(VectorFieldParams::build(
        spec,
        |fan_in, fan_out, rng| Dense::init(fan_in, fan_out, rng),
        rng,
    ))
}

/// Adam moment estimates; decay rates are the module constants.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<T> {
    pub m: VectorFieldParams<T>,
    pub v: VectorFieldParams<T>,
    /// Completed Adam steps (drives bias correction).
    pub step: u64,
}

impl<T: Real> OptState<T> {
    pub fn new(spec: NetSpec) -> Result<Self, NetError> {
        Ok(Self {
            m: VectorFieldParams::zeros(spec)?,
            v: VectorFieldParams::zeros(spec)?,
            step: 0,
        })
    }
}

struct AdamConsts<T> {
    beta1: T,
    beta2: T,
    eps: T,
    lr: T,
    bc1: T,
    bc2: T,
}

fn adam_coord<T: Real>(p: &mut T, m: &mut T, v: &mut T, g: T, c: &AdamConsts<T>) {
    let one = T::one();
    *m = c.beta1 * *m + (one - c.beta1) * g;
    *v = c.beta2 * *v + (one - c.beta2) * g * g;
    let m_hat = *m / c.bc1;
    let v_hat = *v / c.bc2;
    *p -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
}

/// One Adam update with bias correction.
pub fn adam_step<T: Real>(
    params: &mut VectorFieldParams<T>,
    opt: &mut OptState<T>,
    grads: &Gradients<T>,
    lr: T,
) {
    let beta1 = T::of(ADAM_BETA1);
    let beta2 = T::of(ADAM_BETA2);
    opt.step += 1;
    let t = opt.step as i32;
    let c = AdamConsts {
        beta1,
        beta2,
        eps: T::of(ADAM_EPS),
        lr,
        bc1: T::one() - beta1.powi(t),
        bc2: T::one() - beta2.powi(t),
    };

    let OptState { m, v, .. } = opt;
    for (((p, m_l), v_l), g_l) in params
        .layers_mut()
        .zip(m.layers_mut())
        .zip(v.layers_mut())
        .zip(grads.layers())
    {
        ndarray::Zip::from(&mut p.w)
            .and(&mut m_l.w)
            .and(&mut v_l.w)
            .and(&g_l.w)
            .for_each(|p, m, v, &g| adam_coord(p, m, v, g, &c));
        ndarray::Zip::from(&mut p.b)
            .and(&mut m_l.b)
            .and(&mut v_l.b)
            .and(&g_l.b)
            .for_each(|p, m, v, &g| adam_coord(p, m, v, g, &c));
    }
}

/// Exponential moving average: `ema <- decay * ema + (1 - decay) * params`.
pub fn ema_update<T: Real>(ema: &mut VectorFieldParams<T>, params: &VectorFieldParams<T>, decay: T) {
    let one = T::one();
    ema.zip_mut_with(params, |e, p| *e = decay * *e + (one - decay) * p);
}

/// Scale gradients so their global L2 norm is at most `max_norm`; returns
/// the pre-clip norm. Gradients at or under the cap are left untouched.
pub fn clip_grad_global_norm<T: Real>(grads: &mut Gradients<T>, max_norm: T) -> T {
    let norm = grads.sq_norm().sqrt();
    if norm > max_norm && norm > T::zero() {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Training phase marker; the optimizer is re-initialized at the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainPhase {
    Pretrain,
    Finetune,
}

/// Complete mutable state of one trained network: parameters, their EMA
/// shadow, optimizer moments, step counter, phase.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub params: VectorFieldParams<T>,
    pub ema: VectorFieldParams<T>,
    pub opt: OptState<T>,
    /// Total gradient steps taken across phases.
    pub step: u64,
    pub phase: TrainPhase,
}

impl<T: Real> TrainState<T> {
    /// Fresh state: the EMA starts equal to the parameters, moments at zero.
    pub fn new(params: VectorFieldParams<T>) -> Result<Self, NetError> {
        let opt = OptState::new(*params.spec())?;
        Ok(Self {
            ema: params.clone(),
            params,
            opt,
            step: 0,
            phase: TrainPhase::Pretrain,
        })
    }

    /// Zero the optimizer moments and bias-correction clock (phase boundary).
    pub fn reset_optimizer(&mut self) -> Result<(), NetError> {
        self.opt = OptState::new(*self.params.spec())?;
        Ok(())
    }
}

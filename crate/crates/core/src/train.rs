//! The two training phases: bridge-matching pretraining on a fixed coupling
//! source, and online finetuning in which every gradient step regresses on
//! couplings the current model just generated with its own SDEs. The
//! iterative baseline (direction-alternating finetuning) and the replay
//! buffer generalization live here too.
//!
//! Two structural guarantees are load-bearing and tested rather than
//! documented only: the endpoint fed into each direction's regression target
//! is always a true marginal draw, never a generated sample (this is what
//! preserves the endpoint marginals during finetuning), and no gradient
//! flows through SDE generation (couplings are detached data by
//! construction).
//!
//! RNG discipline: every step consumes the stream in a fixed documented
//! order, so runs are bit-reproducible and resumable. Pretraining draws the
//! coupling batch, then loss times and noise. Finetuning draws the two
//! marginal half-batches (pi0 first), integrates the forward SDE, then the
//! backward SDE, then draws loss times and noise.

use std::collections::VecDeque;

use thiserror::Error;

use crate::bridge::{
    bidirectional_empirical_loss_windowed, direction_empirical_loss, BridgeError, LossParts,
};
use crate::data_metrics::{make_batch, DataError, DatasetSpec};
use crate::net::{
    adam_step, clip_grad_global_norm, ema_update, init_vector_field, Direction, Gradients,
    NetError, NetSpec, TrainPhase, TrainState, VectorFieldParams,
};
use crate::numerics::{sample_uniform, Batch, CouplingBatch, NumericsError, RngState};
use crate::sampler::{euler_maruyama_endpoint, NetField, SamplerError};
use crate::Real;

/// Gradient global-norm cap applied in both phases.
pub const GRAD_CLIP_MAX_NORM: f64 = 1.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    /// Wraps the failure of one training step with its global step index.
    #[error("training step {step} failed: {source}")]
    Step {
        step: u64,
        #[source]
        source: Box<TrainError>,
    },
    /// SDE generation blew up; the inner error carries the integrator step.
    #[error("{direction:?} SDE generation failed: {source}")]
    Sde {
        direction: Direction,
        #[source]
        source: SamplerError,
    },
    #[error("replay buffer holds {available} pairs, cannot sample {requested}")]
    BufferUnderflow { requested: usize, available: usize },
    #[error("replay buffer stores dimension {expected}, got pairs of dimension {got}")]
    BufferDimMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Hyper-parameters shared by both phases.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    /// Entropic regularisation; also the SDE diffusivity.
    pub eps: T,
    /// Total rows per step; split into two equal half-batches.
    pub batch_size: usize,
    pub n_pretrain: usize,
    pub n_finetune: usize,
    pub lr_pretrain: T,
    pub lr_finetune: T,
    pub ema_decay: T,
    /// Integrate generation SDEs with the EMA parameters instead of the raw
    /// ones (stabilizes finetuning).
    pub sample_with_ema: bool,
    /// Euler-Maruyama steps per generation SDE.
    pub n_em_steps: usize,
    /// Loss times are drawn from `[t_min, 1 - t_min]`.
    pub t_min: T,
    pub seed: u64,
}

impl<T: Real> TrainConfig<T> {
    pub fn half_batch(&self) -> usize {
        self.batch_size / 2
    }

    /// Check the invariants. `n_pretrain` / `n_finetune` may be zero (a
    /// zero-step phase is the identity).
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return fail(format!(
                "batch_size must be even and at least 2, got {}",
                self.batch_size
            ));
        }
        if !(self.eps > T::zero() && self.eps.is_finite()) {
            return fail(format!("eps must be positive and finite, got {}", self.eps));
        }
        for (lr, name) in [(self.lr_pretrain, "lr_pretrain"), (self.lr_finetune, "lr_finetune")] {
            if !(lr > T::zero() && lr.is_finite()) {
                return fail(format!("{name} must be positive and finite, got {lr}"));
            }
        }
        if !(self.ema_decay > T::zero() && self.ema_decay < T::one()) {
            return fail(format!(
                "ema_decay must lie strictly inside (0, 1), got {}",
                self.ema_decay
            ));
        }
        if self.n_em_steps == 0 {
            return fail("n_em_steps must be at least 1".into());
        }
        if !(self.t_min > T::zero() && self.t_min < T::of(0.5)) {
            return fail(format!(
                "t_min must lie strictly inside (0, 0.5), got {}",
                self.t_min
            ));
        }
        Ok(())
    }
}

// ------------------------------------------------------------------ sampling

/// An infinite stream of draws from one marginal.
pub trait MarginalSampler<T: Real> {
    fn sample(&mut self, n: usize, rng: &mut RngState) -> Result<Batch<T>, TrainError>;
}

/// Closures are marginal samplers.
impl<T: Real, F> MarginalSampler<T> for F
where
    F: FnMut(usize, &mut RngState) -> Batch<T>,
{
    fn sample(&mut self, n: usize, rng: &mut RngState) -> Result<Batch<T>, TrainError> {
        Ok(self(n, rng))
    }
}

/// An infinite stream of endpoint pairs; what pretraining regresses on.
pub trait CouplingSampler<T: Real> {
    fn sample(&mut self, n: usize, rng: &mut RngState) -> Result<CouplingBatch<T>, TrainError>;
}

/// Independent product coupling of two marginals; draws all `x0` rows, then
/// all `x1` rows.
pub struct ProductCoupling<P0, P1> {
    pub pi0: P0,
    pub pi1: P1,
}

impl<T: Real, P0: MarginalSampler<T>, P1: MarginalSampler<T>> CouplingSampler<T>
    for ProductCoupling<P0, P1>
{
    fn sample(&mut self, n: usize, rng: &mut RngState) -> Result<CouplingBatch<T>, TrainError> {
        let x0 = self.pi0.sample(n, rng)?;
        let x1 = self.pi1.sample(n, rng)?;
        Ok(CouplingBatch::new(x0, x1)?)
    }
}

/// A dataset family as a marginal stream.
pub struct DatasetMarginal<T: Real>(pub DatasetSpec<T>);

impl<T: Real> MarginalSampler<T> for DatasetMarginal<T> {
    fn sample(&mut self, n: usize, rng: &mut RngState) -> Result<Batch<T>, TrainError> {
        Ok(make_batch(&self.0, n, rng)?.into_marginal()?)
    }
}

/// A coupled dataset family (the antithetic Gaussian) as a coupling stream.
pub struct DatasetCoupling<T: Real>(pub DatasetSpec<T>);

impl<T: Real> CouplingSampler<T> for DatasetCoupling<T> {
    fn sample(&mut self, n: usize, rng: &mut RngState) -> Result<CouplingBatch<T>, TrainError> {
        Ok(make_batch(&self.0, n, rng)?.into_coupled()?)
    }
}

// ----------------------------------------------------------------- recording

/// Per-step metrics handed to observers.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord<T> {
    /// Global step counter after this update.
    pub step: u64,
    pub phase: TrainPhase,
    /// For direction-alternating steps the inactive side is NaN.
    pub loss: LossParts<T>,
    /// Pre-clip global gradient norm.
    pub grad_norm: T,
}

/// What one finetuning step produced, exposed for structural tests and
/// metric hooks.
#[derive(Debug, Clone)]
pub struct StepArtifacts<T: Real> {
    pub record: StepRecord<T>,
    /// Forward-loss pairs `(generated start, true terminal draw)`.
    pub coupling_fwd: CouplingBatch<T>,
    /// Backward-loss pairs `(true start draw, generated terminal)`.
    pub coupling_bwd: CouplingBatch<T>,
}

fn apply_update<T: Real>(
    state: &mut TrainState<T>,
    mut grads: Gradients<T>,
    lr: T,
    ema_decay: T,
) -> T {
    let norm = clip_grad_global_norm(&mut grads, T::of(GRAD_CLIP_MAX_NORM));
    adam_step(&mut state.params, &mut state.opt, &grads, lr);
    ema_update(&mut state.ema, &state.params, ema_decay);
    state.step += 1;
    norm
}

fn wrap_step(step: u64) -> impl FnOnce(TrainError) -> TrainError {
    move |e| TrainError::Step {
        step,
        source: Box::new(e),
    }
}

// ------------------------------------------------------------------ pretrain

fn pretrain_step<T: Real>(
    config: &TrainConfig<T>,
    state: &mut TrainState<T>,
    source: &mut impl CouplingSampler<T>,
    rng: &mut RngState,
) -> Result<StepRecord<T>, TrainError> {
    let b = config.half_batch();
    let pairs = source.sample(config.batch_size, rng)?;
    let (x0, x1) = pairs.into_parts();
    let fwd = CouplingBatch::new(x0.slice_rows(0, b), x1.slice_rows(0, b))?;
    let bwd = CouplingBatch::new(
        x0.slice_rows(b, config.batch_size),
        x1.slice_rows(b, config.batch_size),
    )?;
    let (loss, grads) = bidirectional_empirical_loss_windowed(
        &state.params,
        &fwd,
        &bwd,
        rng,
        config.eps,
        config.t_min,
    )?;
    let grad_norm = apply_update(state, grads, config.lr_pretrain, config.ema_decay);
    Ok(StepRecord {
        step: state.step,
        phase: state.phase,
        loss,
        grad_norm,
    })
}

/// Bridge-matching pretraining on an explicit coupling source: initialize a
/// fresh network (consuming the rng), then take `n_pretrain` gradient steps
/// on the bidirectional loss over the source's couplings, forward loss on
/// the first half-batch and backward on the second.
pub fn pretrain_with<T: Real>(
    config: &TrainConfig<T>,
    spec: NetSpec,
    source: &mut impl CouplingSampler<T>,
    rng: &mut RngState,
    mut on_step: impl FnMut(&StepRecord<T>),
) -> Result<TrainState<T>, TrainError> {
    config.validate()?;
    let params = init_vector_field(spec, rng)?;
    let mut state = TrainState::new(params)?;
    for _ in 0..config.n_pretrain {
        let record =
            pretrain_step(config, &mut state, source, rng).map_err(wrap_step(state.step))?;
        on_step(&record);
    }
    Ok(state)
}

/// Bridge-matching pretraining on the independent product of two marginals.
pub fn pretrain<T: Real>(
    config: &TrainConfig<T>,
    spec: NetSpec,
    pi0: impl MarginalSampler<T>,
    pi1: impl MarginalSampler<T>,
    rng: &mut RngState,
    on_step: impl FnMut(&StepRecord<T>),
) -> Result<TrainState<T>, TrainError> {
    let mut source = ProductCoupling { pi0, pi1 };
    pretrain_with(config, spec, &mut source, rng, on_step)
}

// ------------------------------------------------------------------ finetune

/// The couplings one finetuning step regresses on.
pub struct GeneratedCouplings<T: Real> {
    /// `(generated start, true terminal draw)`, bridges for the forward loss.
    pub fwd: CouplingBatch<T>,
    /// `(true start draw, generated terminal)`, bridges for the backward loss.
    pub bwd: CouplingBatch<T>,
}

/// How finetuning turns fresh marginal draws into training couplings. The
/// production implementation integrates the model's own SDEs; swapping in a
/// different generator is the seam used to show finetuning degenerates to
/// pretraining when generation is replaced by true draws.
pub trait CouplingGenerator<T: Real> {
    fn generate(
        &mut self,
        sampling_params: &VectorFieldParams<T>,
        x0: Batch<T>,
        x1: Batch<T>,
        config: &TrainConfig<T>,
        rng: &mut RngState,
    ) -> Result<GeneratedCouplings<T>, TrainError>;
}

/// Production generator: forward SDE from `x0`, then backward SDE from
/// `x1`, both with the sampling parameter set and `n_em_steps` steps.
pub struct SdeCouplings;

impl<T: Real> CouplingGenerator<T> for SdeCouplings {
    fn generate(
        &mut self,
        sampling_params: &VectorFieldParams<T>,
        x0: Batch<T>,
        x1: Batch<T>,
        config: &TrainConfig<T>,
        rng: &mut RngState,
    ) -> Result<GeneratedCouplings<T>, TrainError> {
        let x1_hat = generate_endpoint(sampling_params, Direction::Forward, &x0, config, rng)?;
        let x0_hat = generate_endpoint(sampling_params, Direction::Backward, &x1, config, rng)?;
        Ok(GeneratedCouplings {
            fwd: CouplingBatch::new(x0_hat, x1)?,
            bwd: CouplingBatch::new(x0, x1_hat)?,
        })
    }
}

/// One SDE generation pass in the given direction.
pub fn generate_endpoint<T: Real>(
    sampling_params: &VectorFieldParams<T>,
    direction: Direction,
    start: &Batch<T>,
    config: &TrainConfig<T>,
    rng: &mut RngState,
) -> Result<Batch<T>, TrainError> {
    let field = NetField::new(sampling_params, direction);
    euler_maruyama_endpoint(&field, start, config.n_em_steps, config.eps, rng)
        .map_err(|source| TrainError::Sde { direction, source })
}

/// Replaces SDE generation with fresh true-marginal draws (the forward
/// SDE's output slot first, then the backward's), which reduces finetuning
/// to pretraining on independent couplings.
pub struct IndependentCouplings<P0, P1> {
    pub pi0: P0,
    pub pi1: P1,
}

impl<T: Real, P0: MarginalSampler<T>, P1: MarginalSampler<T>> CouplingGenerator<T>
    for IndependentCouplings<P0, P1>
{
    fn generate(
        &mut self,
        _sampling_params: &VectorFieldParams<T>,
        x0: Batch<T>,
        x1: Batch<T>,
        _config: &TrainConfig<T>,
        rng: &mut RngState,
    ) -> Result<GeneratedCouplings<T>, TrainError> {
        let b = x0.n();
        let x1_hat = self.pi1.sample(b, rng)?;
        let x0_hat = self.pi0.sample(b, rng)?;
        Ok(GeneratedCouplings {
            fwd: CouplingBatch::new(x0_hat, x1)?,
            bwd: CouplingBatch::new(x0, x1_hat)?,
        })
    }
}

/// One online finetuning step on a bidirectional state: draw half-batches
/// `x0 ~ pi0` then `x1 ~ pi1`, generate couplings, one gradient step on the
/// averaged bidirectional loss, EMA update. The couplings never receive
/// gradients; only the regression does.
pub fn finetune_step<T: Real>(
    config: &TrainConfig<T>,
    state: &mut TrainState<T>,
    pi0: &mut impl MarginalSampler<T>,
    pi1: &mut impl MarginalSampler<T>,
    generator: &mut impl CouplingGenerator<T>,
    rng: &mut RngState,
) -> Result<StepArtifacts<T>, TrainError> {
    let b = config.half_batch();
    let x0 = pi0.sample(b, rng)?;
    let x1 = pi1.sample(b, rng)?;
    let sampling = if config.sample_with_ema {
        &state.ema
    } else {
        &state.params
    };
    let generated = generator.generate(sampling, x0, x1, config, rng)?;
    let (loss, grads) = bidirectional_empirical_loss_windowed(
        &state.params,
        &generated.fwd,
        &generated.bwd,
        rng,
        config.eps,
        config.t_min,
    )?;
    let grad_norm = apply_update(state, grads, config.lr_finetune, config.ema_decay);
    Ok(StepArtifacts {
        record: StepRecord {
            step: state.step,
            phase: state.phase,
            loss,
            grad_norm,
        },
        coupling_fwd: generated.fwd,
        coupling_bwd: generated.bwd,
    })
}

/// Flip a pretrained state into the finetuning phase, re-initializing the
/// optimizer exactly once (resuming an already-finetuning state is a no-op).
fn enter_finetune<T: Real>(state: &mut TrainState<T>) -> Result<(), TrainError> {
    if state.phase == TrainPhase::Pretrain {
        state.reset_optimizer()?;
        state.phase = TrainPhase::Finetune;
    }
    Ok(())
}

/// Online finetuning with an explicit coupling generator.
pub fn finetune_online_with<T: Real>(
    config: &TrainConfig<T>,
    mut state: TrainState<T>,
    pi0: &mut impl MarginalSampler<T>,
    pi1: &mut impl MarginalSampler<T>,
    generator: &mut impl CouplingGenerator<T>,
    rng: &mut RngState,
    mut on_step: impl FnMut(&StepArtifacts<T>),
) -> Result<TrainState<T>, TrainError> {
    config.validate()?;
    if config.n_finetune == 0 {
        return Ok(state);
    }
    enter_finetune(&mut state)?;
    for _ in 0..config.n_finetune {
        let artifacts = finetune_step(config, &mut state, pi0, pi1, generator, rng)
            .map_err(wrap_step(state.step))?;
        on_step(&artifacts);
    }
    Ok(state)
}

/// Online finetuning with the production SDE generator.
pub fn finetune_online<T: Real>(
    config: &TrainConfig<T>,
    state: TrainState<T>,
    pi0: &mut impl MarginalSampler<T>,
    pi1: &mut impl MarginalSampler<T>,
    rng: &mut RngState,
    on_step: impl FnMut(&StepArtifacts<T>),
) -> Result<TrainState<T>, TrainError> {
    finetune_online_with(config, state, pi0, pi1, &mut SdeCouplings, rng, on_step)
}

// -------------------------------------------------------- iterative baseline

/// A trainable model: one bidirectional network, or an independent network
/// per direction (each with its own optimizer and EMA).
#[derive(Debug, Clone, PartialEq)]
pub enum Model<T> {
    Bidirectional(TrainState<T>),
    TwoNetwork {
        fwd: TrainState<T>,
        bwd: TrainState<T>,
    },
}

impl<T: Real> Model<T> {
    pub fn into_bidirectional(self) -> Option<TrainState<T>> {
        match self {
            Model::Bidirectional(s) => Some(s),
            Model::TwoNetwork { .. } => None,
        }
    }
}

fn nan_parts<T: Real>(active: T, direction: Direction) -> LossParts<T> {
    match direction {
        Direction::Forward => LossParts {
            total: active,
            fwd: active,
            bwd: T::nan(),
        },
        Direction::Backward => LossParts {
            total: active,
            fwd: T::nan(),
            bwd: active,
        },
    }
}

/// One direction-alternating step: the inactive direction's model generates
/// a full-batch coupling, the active direction takes a gradient step on it.
fn iterative_step<T: Real>(
    config: &TrainConfig<T>,
    model: &mut Model<T>,
    pi0: &mut impl MarginalSampler<T>,
    pi1: &mut impl MarginalSampler<T>,
    active: Direction,
    rng: &mut RngState,
) -> Result<StepRecord<T>, TrainError> {
    let n = config.batch_size;
    // Split the generating parameter set from the trained state.
    let coupling = {
        let generating = match (&*model, active) {
            (Model::Bidirectional(s), _) => s,
            (Model::TwoNetwork { bwd, .. }, Direction::Forward) => bwd,
            (Model::TwoNetwork { fwd, .. }, Direction::Backward) => fwd,
        };
        let sampling = if config.sample_with_ema {
            &generating.ema
        } else {
            &generating.params
        };
        match active {
            Direction::Forward => {
                let x1 = pi1.sample(n, rng)?;
                let x0_hat =
                    generate_endpoint(sampling, Direction::Backward, &x1, config, rng)?;
                CouplingBatch::new(x0_hat, x1)?
            }
            Direction::Backward => {
                let x0 = pi0.sample(n, rng)?;
                let x1_hat =
                    generate_endpoint(sampling, Direction::Forward, &x0, config, rng)?;
                CouplingBatch::new(x0, x1_hat)?
            }
        }
    };
    let trained = match (&mut *model, active) {
        (Model::Bidirectional(s), _) => s,
        (Model::TwoNetwork { fwd, .. }, Direction::Forward) => fwd,
        (Model::TwoNetwork { bwd, .. }, Direction::Backward) => bwd,
    };
    let (loss, grads) = direction_empirical_loss(
        &trained.params,
        &coupling,
        rng,
        config.eps,
        config.t_min,
        active,
    )?;
    let grad_norm = apply_update(trained, grads, config.lr_finetune, config.ema_decay);
    Ok(StepRecord {
        step: trained.step,
        phase: trained.phase,
        loss: nan_parts(loss, active),
        grad_norm,
    })
}

/// Direction-alternating finetuning: train only the forward loss for
/// `swap_every` steps on backward-generated couplings, then only the
/// backward loss on forward-generated couplings, and so on. With a large
/// `swap_every` this is the classic two-phase iterative scheme; online
/// finetuning replaces the alternation with simultaneous half-batches.
///
/// `steps_done` offsets the alternation clock so a run split into chunks
/// keeps the same schedule as one uninterrupted call: pass 0 for a fresh
/// run, or the total number of iterative steps taken so far when resuming.
pub fn finetune_iterative<T: Real>(
    config: &TrainConfig<T>,
    mut model: Model<T>,
    swap_every: usize,
    steps_done: usize,
    pi0: &mut impl MarginalSampler<T>,
    pi1: &mut impl MarginalSampler<T>,
    rng: &mut RngState,
    mut on_step: impl FnMut(&StepRecord<T>),
) -> Result<Model<T>, TrainError> {
    config.validate()?;
    assert!(swap_every >= 1, "swap_every must be at least 1");
    if config.n_finetune == 0 {
        return Ok(model);
    }
    match &mut model {
        Model::Bidirectional(s) => enter_finetune(s)?,
        Model::TwoNetwork { fwd, bwd } => {
            enter_finetune(fwd)?;
            enter_finetune(bwd)?;
        }
    }
    let mut completed = 0u64;
    for i in 0..config.n_finetune {
        let active = if ((steps_done + i) / swap_every) % 2 == 0 {
            Direction::Forward
        } else {
            Direction::Backward
        };
        let record = iterative_step(config, &mut model, pi0, pi1, active, rng)
            .map_err(wrap_step(completed))?;
        completed += 1;
        on_step(&record);
    }
    Ok(model)
}

// ------------------------------------------------------- two-network online

/// Online finetuning of a two-network model: both directions advance every
/// step, each network generating for the other's loss and receiving only
/// its own gradient.
pub fn finetune_online_two_net<T: Real>(
    config: &TrainConfig<T>,
    mut fwd: TrainState<T>,
    mut bwd: TrainState<T>,
    pi0: &mut impl MarginalSampler<T>,
    pi1: &mut impl MarginalSampler<T>,
    rng: &mut RngState,
    mut on_step: impl FnMut(&StepRecord<T>),
) -> Result<(TrainState<T>, TrainState<T>), TrainError> {
    config.validate()?;
    if config.n_finetune == 0 {
        return Ok((fwd, bwd));
    }
    enter_finetune(&mut fwd)?;
    enter_finetune(&mut bwd)?;
    let b = config.half_batch();
    let mut completed = 0u64;
    for _ in 0..config.n_finetune {
        let record = (|| -> Result<StepRecord<T>, TrainError> {
            let x0 = pi0.sample(b, rng)?;
            let x1 = pi1.sample(b, rng)?;
            let fwd_sampling = if config.sample_with_ema { &fwd.ema } else { &fwd.params };
            let bwd_sampling = if config.sample_with_ema { &bwd.ema } else { &bwd.params };
            let x1_hat = generate_endpoint(fwd_sampling, Direction::Forward, &x0, config, rng)?;
            let x0_hat = generate_endpoint(bwd_sampling, Direction::Backward, &x1, config, rng)?;
            let cf = CouplingBatch::new(x0_hat, x1)?;
            let cb = CouplingBatch::new(x0, x1_hat)?;
            let (loss_fwd, grads_fwd) = direction_empirical_loss(
                &fwd.params,
                &cf,
                rng,
                config.eps,
                config.t_min,
                Direction::Forward,
            )?;
            let (loss_bwd, grads_bwd) = direction_empirical_loss(
                &bwd.params,
                &cb,
                rng,
                config.eps,
                config.t_min,
                Direction::Backward,
            )?;
            let norm_fwd = apply_update(&mut fwd, grads_fwd, config.lr_finetune, config.ema_decay);
            let norm_bwd = apply_update(&mut bwd, grads_bwd, config.lr_finetune, config.ema_decay);
            Ok(StepRecord {
                step: fwd.step,
                phase: TrainPhase::Finetune,
                loss: LossParts {
                    total: T::of(0.5) * (loss_fwd + loss_bwd),
                    fwd: loss_fwd,
                    bwd: loss_bwd,
                },
                grad_norm: norm_fwd.max(norm_bwd),
            })
        })()
        .map_err(wrap_step(completed))?;
        completed += 1;
        on_step(&record);
    }
    Ok((fwd, bwd))
}

// -------------------------------------------------------------- replay buffer

/// Endpoint-pair store with FIFO eviction and uniform without-replacement
/// sampling. Generalizes per-step regeneration: a capacity equal to the
/// batch size refreshed every step reproduces the online algorithm's data
/// flow.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    dim: Option<usize>,
    pairs: VecDeque<(Vec<T>, Vec<T>)>,
}

impl<T: Real> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "replay buffer capacity must be at least 1");
        ReplayBuffer {
            capacity,
            dim: None,
            pairs: VecDeque::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stored pairs, oldest first.
    pub fn contents(&self) -> Option<CouplingBatch<T>> {
        if self.is_empty() {
            return None;
        }
        let d = self.dim.expect("non-empty buffer has a dimension");
        let rows = |side: fn(&(Vec<T>, Vec<T>)) -> &Vec<T>| {
            let mut arr = ndarray::Array2::zeros((self.pairs.len(), d));
            for (i, pair) in self.pairs.iter().enumerate() {
                for (j, &v) in side(pair).iter().enumerate() {
                    arr[[i, j]] = v;
                }
            }
            Batch::new(arr).expect("stored rows were validated on entry")
        };
        let x0 = rows(|p| &p.0);
        let x1 = rows(|p| &p.1);
        Some(CouplingBatch::new(x0, x1).expect("stored sides share shapes"))
    }
}

/// Insert every pair, evicting the oldest entries once the buffer is full.
/// The FIFO policy consumes no randomness; the rng parameter is the policy
/// hook's seam and is left untouched.
pub fn buffer_add<T: Real>(
    mut buf: ReplayBuffer<T>,
    pairs: &CouplingBatch<T>,
    _rng: &mut RngState,
) -> Result<ReplayBuffer<T>, TrainError> {
    let d = pairs.dim();
    if let Some(expected) = buf.dim {
        if expected != d {
            return Err(TrainError::BufferDimMismatch { expected, got: d });
        }
    } else {
        buf.dim = Some(d);
    }
    for i in 0..pairs.n() {
        if buf.pairs.len() == buf.capacity {
            buf.pairs.pop_front();
        }
        let x0 = pairs.x0().array().row(i).to_vec();
        let x1 = pairs.x1().array().row(i).to_vec();
        buf.pairs.push_back((x0, x1));
    }
    Ok(buf)
}

/// Draw `k` stored pairs uniformly without replacement.
pub fn buffer_sample<T: Real>(
    buf: &ReplayBuffer<T>,
    k: usize,
    rng: &mut RngState,
) -> Result<CouplingBatch<T>, TrainError> {
    if k == 0 || k > buf.len() {
        return Err(TrainError::BufferUnderflow {
            requested: k,
            available: buf.len(),
        });
    }
    let n = buf.len();
    let d = buf.dim.expect("non-empty buffer has a dimension");
    let mut indices: Vec<usize> = (0..n).collect();
    let draws: Vec<T> = sample_uniform(rng, k);
    let mut x0 = ndarray::Array2::zeros((k, d));
    let mut x1 = ndarray::Array2::zeros((k, d));
    for (i, u) in draws.into_iter().enumerate() {
        let remaining = n - i;
        let offset = (u.to_f64_lossy() * remaining as f64).floor() as usize;
        let offset = offset.min(remaining - 1);
        indices.swap(i, i + offset);
        let pair = &buf.pairs[indices[i]];
        for j in 0..d {
            x0[[i, j]] = pair.0[j];
            x1[[i, j]] = pair.1[j];
        }
    }
    Ok(CouplingBatch::new(Batch::new(x0)?, Batch::new(x1)?)?)
}

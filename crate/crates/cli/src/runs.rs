//! The training and evaluation subcommands. Every output file is a pure
//! function of (config, seed): training consumes rng stream 0 only, each
//! evaluation draws from its own stream derived from the step it runs at,
//! and wall-clock timing goes to stdout rather than into the CSVs.

use std::path::PathBuf;
use std::time::Instant;

use entbridge::analytic::{consistency_residual, gaussian_eot_cross_cov};
use entbridge::data_metrics::{empirical_cov, make_batch, msd, wasserstein2, DatasetSpec};
use entbridge::net::{load_checkpoint, save_checkpoint, Direction};
use entbridge::numerics::RngState;
use entbridge::sampler::{bidirectional_pf_drift, euler_maruyama_endpoint, path_energy, pf_ode, NetField};
use entbridge::train::{
    finetune_iterative, finetune_online, pretrain_with, CouplingSampler, DatasetCoupling,
    DatasetMarginal, Model, ProductCoupling, StepRecord, TrainError,
};
use entbridge::{Batch64, CouplingBatch64, TrainState64, VectorFieldParams64};

use crate::config::{load_config, marginal_of, serialize_config, ExperimentConfig, FinetuneMode};
use crate::errors::{error_chain, numeric, usage, CliError};
use crate::metrics::{MetricsRow, MetricsWriter};
use crate::RunArgs;

/// Deterministic transport map: probability-flow ODE step count used by
/// every evaluation.
pub const PF_ODE_EVAL_STEPS: usize = 20;
/// SDE step count behind the evaluation covariance estimate.
pub const SDE_EVAL_STEPS: usize = 100;
/// Evaluation rng streams live far above the training stream (0), offset
/// by the step being evaluated. The evaluation schedule therefore never
/// perturbs the training path, and re-evaluating a checkpoint reproduces
/// the training-time evaluation at the same step exactly.
pub const EVAL_STREAM_BASE: u64 = 1 << 32;
/// Stream for the eval command's transport-metric self check.
const SELFCHECK_STREAM: u64 = (1 << 32) - 1;

/// Load the config, fold in command-line overrides, and create the output
/// directory. Everything that fails here is a usage error.
fn prepared(args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(ema) = args.ema_override() {
        cfg.train.sample_with_ema = ema;
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| {
        usage(format!(
            "cannot create output directory {}: {e}",
            cfg.out_dir.display()
        ))
    })?;
    Ok(cfg)
}

fn out_path(cfg: &ExperimentConfig, ext: &str) -> PathBuf {
    cfg.out_dir.join(format!("{}.{ext}", cfg.label))
}

/// Record the effective config (overrides folded in) beside the outputs,
/// so a run can be replayed without remembering its flags.
fn record_config(cfg: &ExperimentConfig, phase: &str) -> Result<(), CliError> {
    let path = out_path(cfg, &format!("{phase}.cfg"));
    std::fs::write(&path, serialize_config(cfg))
        .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn load_resume(args: &RunArgs, what: &str) -> Result<(TrainState64, RngState), CliError> {
    let path = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| usage(format!("{what} requires --checkpoint")))?;
    load_checkpoint::<f64>(path).map_err(|e| {
        usage(format!(
            "cannot load checkpoint {}: {}",
            path.display(),
            error_chain(&e)
        ))
    })
}

/// Parameter set evaluation and generation run with, per config and flags.
fn eval_params<'a>(cfg: &ExperimentConfig, state: &'a TrainState64) -> &'a VectorFieldParams64 {
    if cfg.train.sample_with_ema {
        &state.ema
    } else {
        &state.params
    }
}

fn loss_row(r: &StepRecord<f64>, phase: &'static str) -> MetricsRow {
    let keep = |v: f64| v.is_finite().then_some(v);
    MetricsRow {
        step: r.step,
        phase,
        loss_fwd: keep(r.loss.fwd),
        loss_bwd: keep(r.loss.bwd),
        ..MetricsRow::default()
    }
}

/// Coupling source for pretraining: jointly coupled families stream pairs
/// directly, everything else pairs independent draws of the two marginals.
enum Source {
    Coupled(DatasetCoupling<f64>),
    Product(ProductCoupling<DatasetMarginal<f64>, DatasetMarginal<f64>>),
}

impl CouplingSampler<f64> for Source {
    fn sample(&mut self, n: usize, rng: &mut RngState) -> Result<CouplingBatch64, TrainError> {
        match self {
            Source::Coupled(c) => c.sample(n, rng),
            Source::Product(p) => p.sample(n, rng),
        }
    }
}

fn coupling_source(cfg: &ExperimentConfig) -> Source {
    if cfg.source.is_coupled() {
        Source::Coupled(DatasetCoupling(cfg.source.clone()))
    } else {
        Source::Product(ProductCoupling {
            pi0: DatasetMarginal(cfg.source.clone()),
            pi1: DatasetMarginal(cfg.target.clone()),
        })
    }
}

pub fn cmd_pretrain(args: &RunArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = prepared(args)?;
    record_config(&cfg, "pretrain")?;
    let mut rng = RngState::new(cfg.train.seed, 0);
    let mut writer = MetricsWriter::create(&out_path(&cfg, "pretrain.csv"))?;
    let mut source = coupling_source(&cfg);
    let mut row_err: Option<CliError> = None;
    let state = pretrain_with(&cfg.train, cfg.net, &mut source, &mut rng, |r| {
        if row_err.is_none() {
            if let Err(e) = writer.write_row(&loss_row(r, "pretrain")) {
                row_err = Some(e);
            }
        }
    })
    .map_err(numeric)?;
    if let Some(e) = row_err {
        return Err(e);
    }
    let row = evaluate(&cfg, eval_params(&cfg, &state), state.step)?;
    writer.write_row(&row)?;
    writer.finish()?;
    save_checkpoint(&out_path(&cfg, "pretrain.ckpt"), &state, &rng).map_err(numeric)?;
    println!(
        "pretrain {}: {} steps, wallclock {:.1}s, outputs in {}",
        cfg.label,
        state.step,
        started.elapsed().as_secs_f64(),
        cfg.out_dir.display()
    );
    Ok(())
}

pub fn cmd_finetune(args: &RunArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut cfg = prepared(args)?;
    let (state, ckpt_rng) = load_resume(args, "finetune")?;
    // Without an explicit --seed the run resumes the checkpoint rng where
    // training left it, and evaluation streams derive from that seed.
    let mut rng = match args.seed {
        Some(seed) => RngState::new(seed, 0),
        None => {
            cfg.train.seed = ckpt_rng.seed;
            ckpt_rng
        }
    };
    record_config(&cfg, "finetune")?;
    let mut writer = MetricsWriter::create(&out_path(&cfg, "finetune.csv"))?;
    let mut pi0 = DatasetMarginal(marginal_of(&cfg.source));
    let mut pi1 = DatasetMarginal(cfg.target.clone());
    let total = cfg.train.n_finetune;
    let chunk = if cfg.eval.eval_every == 0 {
        total.max(1)
    } else {
        cfg.eval.eval_every
    };
    let mut model = Model::Bidirectional(state);
    let mut done = 0usize;
    loop {
        let n = chunk.min(total - done);
        if n > 0 {
            let mut c = cfg.train.clone();
            c.n_finetune = n;
            let mut row_err: Option<CliError> = None;
            let mut sink = |r: &StepRecord<f64>| {
                if row_err.is_none() {
                    if let Err(e) = writer.write_row(&loss_row(r, "finetune")) {
                        row_err = Some(e);
                    }
                }
            };
            model = match cfg.finetune_mode {
                FinetuneMode::Online => {
                    let s = match model {
                        Model::Bidirectional(s) => s,
                        Model::TwoNetwork { .. } => unreachable!("runs hold one network"),
                    };
                    let s = finetune_online(&c, s, &mut pi0, &mut pi1, &mut rng, |a| {
                        sink(&a.record)
                    })
                    .map_err(numeric)?;
                    Model::Bidirectional(s)
                }
                FinetuneMode::Iterative { swap_every } => finetune_iterative(
                    &c, model, swap_every, done, &mut pi0, &mut pi1, &mut rng, sink,
                )
                .map_err(numeric)?,
            };
            if let Some(e) = row_err {
                return Err(e);
            }
            done += n;
        }
        let s = match &model {
            Model::Bidirectional(s) => s,
            Model::TwoNetwork { .. } => unreachable!("runs hold one network"),
        };
        let row = evaluate(&cfg, eval_params(&cfg, s), s.step)?;
        writer.write_row(&row)?;
        if done >= total {
            break;
        }
    }
    writer.finish()?;
    let state = match model {
        Model::Bidirectional(s) => s,
        Model::TwoNetwork { .. } => unreachable!("runs hold one network"),
    };
    save_checkpoint(&out_path(&cfg, "finetune.ckpt"), &state, &rng).map_err(numeric)?;
    println!(
        "finetune {}: {} steps total, wallclock {:.1}s, outputs in {}",
        cfg.label,
        state.step,
        started.elapsed().as_secs_f64(),
        cfg.out_dir.display()
    );
    Ok(())
}

pub fn cmd_eval(args: &RunArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut cfg = prepared(args)?;
    let (state, ckpt_rng) = load_resume(args, "eval")?;
    if args.seed.is_none() {
        cfg.train.seed = ckpt_rng.seed;
    }
    let mut writer = MetricsWriter::create(&out_path(&cfg, "eval.csv"))?;
    // Transport-metric self check: the distance of a cloud to itself must
    // come out exactly zero before the real numbers mean anything.
    let mut sc_rng = RngState::new(cfg.train.seed, SELFCHECK_STREAM);
    let probe = draw_marginal(&cfg.target, cfg.eval.n_eval, &mut sc_rng)?;
    let self_dist = wasserstein2(&probe, &probe).map_err(numeric)?;
    writer.write_row(&MetricsRow {
        step: state.step,
        phase: "selfcheck",
        w2_mean: Some(self_dist),
        w2_sd: Some(0.0),
        ..MetricsRow::default()
    })?;
    let row = evaluate(&cfg, eval_params(&cfg, &state), state.step)?;
    writer.write_row(&row)?;
    writer.finish()?;
    println!(
        "eval {}: step {}, wallclock {:.1}s, metrics in {}",
        cfg.label,
        state.step,
        started.elapsed().as_secs_f64(),
        out_path(&cfg, "eval.csv").display()
    );
    Ok(())
}

fn draw_marginal(
    spec: &DatasetSpec<f64>,
    n: usize,
    rng: &mut RngState,
) -> Result<Batch64, CliError> {
    make_batch(spec, n, rng)
        .and_then(|b| b.into_marginal())
        .map_err(numeric)
}

fn gaussian_sigmas(cfg: &ExperimentConfig) -> Option<(f64, f64)> {
    let s0 = match marginal_of(&cfg.source) {
        DatasetSpec::Gaussian { sigma, .. } => sigma,
        _ => return None,
    };
    let s1 = match cfg.target {
        DatasetSpec::Gaussian { sigma, .. } => sigma,
        _ => return None,
    };
    Some((s0, s1))
}

fn sample_sd(xs: &[f64], mean: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

/// Full metric sweep at one parameter set. Draws every cloud from the
/// stream `EVAL_STREAM_BASE + step`, so the same checkpoint and seed give
/// the same row no matter when or where the evaluation runs.
pub fn evaluate(
    cfg: &ExperimentConfig,
    params: &VectorFieldParams64,
    step: u64,
) -> Result<MetricsRow, CliError> {
    let mut rng = RngState::new(cfg.train.seed, EVAL_STREAM_BASE + step);
    let eps = cfg.train.eps;
    let n = cfg.eval.n_eval;
    let source_m = marginal_of(&cfg.source);
    let drift = bidirectional_pf_drift(params).map_err(numeric)?;

    let mut costs = Vec::with_capacity(cfg.eval.w2_repeats);
    let mut energy = None;
    let mut displacement = None;
    for rep in 0..cfg.eval.w2_repeats {
        let x0 = draw_marginal(&source_m, n, &mut rng)?;
        let x1_true = draw_marginal(&cfg.target, n, &mut rng)?;
        let transported = pf_ode(&drift, &x0, PF_ODE_EVAL_STEPS).map_err(numeric)?;
        let x1_hat = transported.final_state();
        costs.push(wasserstein2(x1_hat, &x1_true).map_err(numeric)?);
        if rep == 0 {
            energy = Some(path_energy(&drift, &x0, PF_ODE_EVAL_STEPS).map_err(numeric)?);
            displacement = Some(msd(&x0, x1_hat).map_err(numeric)?);
        }
    }
    let w2_mean = costs.iter().sum::<f64>() / costs.len() as f64;
    let w2_sd = sample_sd(&costs, w2_mean);

    let x0c = draw_marginal(&source_m, n, &mut rng)?;
    let field = NetField::new(params, Direction::Forward);
    let x1_sde =
        euler_maruyama_endpoint(&field, &x0c, SDE_EVAL_STEPS, eps, &mut rng).map_err(numeric)?;
    let cov_hat = empirical_cov(&x0c, &x1_sde).map_err(numeric)?;

    let consistency = consistency_metric(cfg, params, &mut rng)?;

    Ok(MetricsRow {
        step,
        phase: "eval",
        loss_fwd: None,
        loss_bwd: None,
        cov_hat: Some(cov_hat),
        w2_mean: Some(w2_mean),
        w2_sd: Some(w2_sd),
        path_energy: energy,
        msd: displacement,
        consistency_residual: consistency,
    })
}

/// Midpoint consistency of the two directions against the closed-form
/// bridge score. Only defined when both endpoint laws are isotropic
/// Gaussians; other settings leave the column empty.
fn consistency_metric(
    cfg: &ExperimentConfig,
    params: &VectorFieldParams64,
    rng: &mut RngState,
) -> Result<Option<f64>, CliError> {
    let (s0, s1) = match gaussian_sigmas(cfg) {
        Some(pair) => pair,
        None => return Ok(None),
    };
    let eps = cfg.train.eps;
    let c01 = gaussian_eot_cross_cov(s0, s1, eps);
    let bridge_var = move |t: f64| {
        (1.0 - t).powi(2) * s0 * s0
            + t * t * s1 * s1
            + 2.0 * t * (1.0 - t) * c01
            + eps * t * (1.0 - t)
    };
    let t = 0.5;
    let z = draw_marginal(
        &DatasetSpec::Gaussian {
            dim: cfg.source.dim(),
            sigma: 1.0,
        },
        cfg.eval.n_eval,
        rng,
    )?;
    let probe = Batch64::new(z.into_array() * bridge_var(t).sqrt()).map_err(numeric)?;
    let score = move |tt: f64, x: &Batch64| {
        Batch64::new(x.array() * (-1.0 / bridge_var(tt))).expect("finite rescale of a finite batch")
    };
    let residual = consistency_residual(params, t, &probe, eps, score).map_err(numeric)?;
    Ok(Some(residual))
}

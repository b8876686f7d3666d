//! Forward evaluation and exact reverse-mode gradients.
//!
//! The batched forward pass keeps every intermediate (embedding
//! pre-activations, trunk pre-activations and activations) in a trace; the
//! backward pass walks the trace in reverse accumulating parameter
//! gradients with one GEMM pair per layer. Time and direction enter through
//! sinusoidal features of a geometric frequency ladder on `[1, 1e4]`; the
//! features themselves carry no parameters, so backpropagation stops at the
//! embedding MLP inputs.

use ndarray::{concatenate, Array2, Axis};

use super::{Dense, Direction, Gradients, NetError, VectorFieldParams};
use crate::numerics::Batch;
use crate::Real;

fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn silu<T: Real>(z: T) -> T {
    z * sigmoid(z)
}

fn silu_prime<T: Real>(z: T) -> T {
    let s = sigmoid(z);
    s * (T::one() + z * (T::one() - s))
}

/// Sin/cos feature pairs of `vals` over `dim/2` frequencies spaced
/// geometrically from 1 to 10^4 (a single frequency degenerates to 1).
fn sinusoidal_features<T: Real>(vals: &[T], dim: usize) -> Array2<T> {
    let k = dim / 2;
    let freqs: Vec<T> = (0..k)
        .map(|i| {
            if k == 1 {
                T::one()
            } else {
                T::of(10f64.powf(4.0 * i as f64 / (k as f64 - 1.0)))
            }
        })
        .collect();
    let mut out = Array2::zeros((vals.len(), dim));
    for (row, &t) in vals.iter().enumerate() {
        for (i, &w) in freqs.iter().enumerate() {
            let arg = w * t;
            out[[row, 2 * i]] = arg.sin();
            out[[row, 2 * i + 1]] = arg.cos();
        }
    }
    out
}

struct EmbedTrace<T> {
    sin: Array2<T>,
    z1: Array2<T>,
    h1: Array2<T>,
    out: Array2<T>,
}

fn embed_forward<T: Real>(layers: &[Dense<T>; 2], sin: Array2<T>) -> EmbedTrace<T> {
    let z1 = sin.dot(&layers[0].w) + &layers[0].b;
    let h1 = z1.mapv(silu);
    let out = h1.dot(&layers[1].w) + &layers[1].b;
    EmbedTrace { sin, z1, h1, out }
}

fn embed_backward<T: Real>(
    layers: &[Dense<T>; 2],
    trace: &EmbedTrace<T>,
    d_out: &Array2<T>,
    grads: &mut [Dense<T>; 2],
) {
    grads[1].w = trace.h1.t().dot(d_out);
    grads[1].b = d_out.sum_axis(Axis(0));
    let d_h1 = d_out.dot(&layers[1].w.t());
    let d_z1 = &d_h1 * &trace.z1.mapv(silu_prime);
    grads[0].w = trace.sin.t().dot(&d_z1);
    grads[0].b = d_z1.sum_axis(Axis(0));
}

struct Trace<T> {
    te: EmbedTrace<T>,
    se: Option<EmbedTrace<T>>,
    /// `a[0]` is the trunk input; `a[l]` the activation after hidden layer
    /// `l-1`; `z[l]` the pre-activation of hidden layer `l`.
    a: Vec<Array2<T>>,
    z: Vec<Array2<T>>,
    v: Array2<T>,
}

fn forward_trace<T: Real>(
    params: &VectorFieldParams<T>,
    times: &[T],
    dir_signals: Option<&[T]>,
    x: &Array2<T>,
) -> Trace<T> {
    let spec = params.spec();
    let te = embed_forward(&params.time_embed, sinusoidal_features(times, spec.time_embed_dim));
    let se = params.dir_embed.as_ref().map(|layers| {
        let signals = dir_signals.expect("bidirectional net needs direction signals");
        embed_forward(layers, sinusoidal_features(signals, spec.time_embed_dim))
    });

    let a0 = match &se {
        Some(se) => concatenate(Axis(1), &[x.view(), te.out.view(), se.out.view()])
            .expect("row counts agree"),
        None => concatenate(Axis(1), &[x.view(), te.out.view()]).expect("row counts agree"),
    };

    let mut a = Vec::with_capacity(spec.depth + 1);
    let mut z = Vec::with_capacity(spec.depth);
    a.push(a0);
    for layer in &params.trunk {
        let zl = a.last().expect("trace non-empty").dot(&layer.w) + &layer.b;
        a.push(zl.mapv(silu));
        z.push(zl);
    }
    let v = a.last().expect("trace non-empty").dot(&params.head.w) + &params.head.b;
    Trace { te, se, a, z, v }
}

fn backward_trace<T: Real>(
    params: &VectorFieldParams<T>,
    trace: &Trace<T>,
    d_v: &Array2<T>,
) -> Gradients<T> {
    let spec = *params.spec();
    let mut grads = VectorFieldParams::zeros(spec).expect("params spec already validated");

    grads.head.w = trace.a[spec.depth].t().dot(d_v);
    grads.head.b = d_v.sum_axis(Axis(0));
    let mut d_a = d_v.dot(&params.head.w.t());

    for l in (0..spec.depth).rev() {
        let d_z = &d_a * &trace.z[l].mapv(silu_prime);
        grads.trunk[l].w = trace.a[l].t().dot(&d_z);
        grads.trunk[l].b = d_z.sum_axis(Axis(0));
        d_a = d_z.dot(&params.trunk[l].w.t());
    }

    let d = spec.input_dim;
    let eh = spec.embed_hidden;
    let d_te_out = d_a.slice(ndarray::s![.., d..d + eh]).to_owned();
    embed_backward(&params.time_embed, &trace.te, &d_te_out, &mut grads.time_embed);
    if let (Some(se_layers), Some(se_trace), Some(se_grads)) = (
        params.dir_embed.as_ref(),
        trace.se.as_ref(),
        grads.dir_embed.as_mut(),
    ) {
        let d_se_out = d_a.slice(ndarray::s![.., d + eh..d + 2 * eh]).to_owned();
        embed_backward(se_layers, se_trace, &d_se_out, se_grads);
    }
    grads
}

fn check_time<T: Real>(t: T) -> Result<(), NetError> {
    if t >= T::zero() && t < T::one() {
        Ok(())
    } else {
        Err(NetError::TimeOutOfDomain {
            t: t.to_f64_lossy(),
        })
    }
}

/// Evaluate the vector field at one time for a whole batch.
///
/// Pure: no state anywhere, identical inputs give identical outputs. `t`
/// must lie in `[0, 1)`. A single-direction network (no direction pathway)
/// ignores `dir`; the caller is responsible for handing the batch to the
/// network trained for that direction.
pub fn forward<T: Real>(
    params: &VectorFieldParams<T>,
    dir: Direction,
    t: T,
    x: &Batch<T>,
) -> Result<Batch<T>, NetError> {
    check_time(t)?;
    let spec = params.spec();
    if x.dim() != spec.input_dim {
        return Err(NetError::DimMismatch {
            expected: spec.input_dim,
            got: x.dim(),
        });
    }
    let n = x.n();
    let times = vec![t; n];
    let signals = spec.bidirectional.then(|| vec![dir.signal::<T>(); n]);
    let trace = forward_trace(params, &times, signals.as_deref(), x.array());
    Ok(Batch::new(trace.v)?)
}

/// A regression batch: per-row direction, time, position, and target drift.
#[derive(Debug, Clone, Copy)]
pub struct LossBatch<'a, T> {
    pub dirs: &'a [Direction],
    pub times: &'a [T],
    pub x: &'a Batch<T>,
    pub target: &'a Batch<T>,
}

/// Mean rowwise squared error and its exact parameter gradient.
///
/// `loss = (1/n) sum_i ||v(s_i, t_i, x_i) - target_i||^2`. Every `t_i` must
/// lie in `[0, 1)`. A row whose contribution is not finite fails with that
/// row's index.
pub fn loss_and_grad<T: Real>(
    params: &VectorFieldParams<T>,
    batch: &LossBatch<'_, T>,
) -> Result<(T, Gradients<T>), NetError> {
    let spec = params.spec();
    let n = batch.x.n();
    if batch.dirs.len() != n || batch.times.len() != n || batch.target.n() != n {
        return Err(NetError::LossBatchShape(format!(
            "x has {} rows, dirs {}, times {}, target {}",
            n,
            batch.dirs.len(),
            batch.times.len(),
            batch.target.n()
        )));
    }
    if batch.x.dim() != spec.input_dim || batch.target.dim() != spec.input_dim {
        return Err(NetError::DimMismatch {
            expected: spec.input_dim,
            got: batch.x.dim().max(batch.target.dim()),
        });
    }
    for &t in batch.times {
        check_time(t)?;
    }

    let signals: Option<Vec<T>> = spec
        .bidirectional
        .then(|| batch.dirs.iter().map(|d| d.signal()).collect());
    let trace = forward_trace(params, batch.times, signals.as_deref(), batch.x.array());

    let residual = &trace.v - batch.target.array();
    let n_scalar = T::from_usize(n).expect("batch size fits in scalar");
    let mut total = T::zero();
    for (row, r) in residual.rows().into_iter().enumerate() {
        let row_sq = r.iter().fold(T::zero(), |s, &x| s + x * x);
        if !row_sq.is_finite() {
            return Err(NetError::NonFiniteLoss { row });
        }
        total += row_sq;
    }
    let loss = total / n_scalar;

    let d_v = residual * (T::of(2.0) / n_scalar);
    let grads = backward_trace(params, &trace, &d_v);
    Ok((loss, grads))
}

//! Flat binary checkpoints.
//!
//! Layout: a format-version byte, the training phase, the architecture
//! (five u64 dimensions and the bidirectional flag), the step counters, the
//! RNG position, then four coordinate blocks (parameters, EMA, Adam first
//! and second moments) as little-endian f64 in declaration order. Shapes are
//! reconstructed from the architecture on load and the byte count must match
//! exactly; anything else is a format error, not a best-effort read.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{NetError, NetSpec, OptState, TrainPhase, TrainState, VectorFieldParams};
use crate::numerics::RngState;
use crate::Real;

/// Bumped whenever the byte layout changes.
pub const CHECKPOINT_VERSION: u8 = 1;

fn io_err(e: std::io::Error) -> NetError {
    NetError::CheckpointIo(e.to_string())
}

fn write_u64(w: &mut impl Write, x: u64) -> Result<(), NetError> {
    w.write_all(&x.to_le_bytes()).map_err(io_err)
}

fn write_f64(w: &mut impl Write, x: f64) -> Result<(), NetError> {
    w.write_all(&x.to_le_bytes()).map_err(io_err)
}

fn read_u8(r: &mut impl Read) -> Result<u8, NetError> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(b[0])
}

fn read_u64(r: &mut impl Read) -> Result<u64, NetError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64, NetError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(f64::from_le_bytes(b))
}

fn write_coords<T: Real>(w: &mut impl Write, p: &VectorFieldParams<T>) -> Result<(), NetError> {
    for &c in p.coords() {
        write_f64(w, c.to_f64_lossy())?;
    }
    Ok(())
}

fn read_coords<T: Real>(
    r: &mut impl Read,
    spec: NetSpec,
    what: &str,
    check_finite: bool,
) -> Result<VectorFieldParams<T>, NetError> {
    let mut p = VectorFieldParams::zeros(spec)?;
    for slot in p.coords_mut() {
        let x = read_f64(r)?;
        if check_finite && !x.is_finite() {
            return Err(NetError::CheckpointFormat(format!(
                "non-finite value in {what} block"
            )));
        }
        *slot = T::of(x);
    }
    Ok(p)
}

/// Serialize one training state (without a leading version byte; container
/// formats add their own header).
pub fn write_train_state<T: Real>(
    w: &mut impl Write,
    state: &TrainState<T>,
) -> Result<(), NetError> {
    let spec = state.params.spec();
    w.write_all(&[match state.phase {
        TrainPhase::Pretrain => 0u8,
        TrainPhase::Finetune => 1u8,
    }])
    .map_err(io_err)?;
    for dim in [
        spec.input_dim,
        spec.hidden_units,
        spec.depth,
        spec.time_embed_dim,
        spec.embed_hidden,
    ] {
        write_u64(w, dim as u64)?;
    }
    w.write_all(&[spec.bidirectional as u8]).map_err(io_err)?;
    write_u64(w, state.step)?;
    write_u64(w, state.opt.step)?;
    write_coords(w, &state.params)?;
    write_coords(w, &state.ema)?;
    write_coords(w, &state.opt.m)?;
    write_coords(w, &state.opt.v)?;
    Ok(())
}

/// Inverse of [`write_train_state`]; validates the architecture and shapes.
pub fn read_train_state<T: Real>(r: &mut impl Read) -> Result<TrainState<T>, NetError> {
    let phase = match read_u8(r)? {
        0 => TrainPhase::Pretrain,
        1 => TrainPhase::Finetune,
        other => {
            return Err(NetError::CheckpointFormat(format!(
                "unknown training phase tag {other}"
            )))
        }
    };
    let dims: Vec<u64> = (0..5).map(|_| read_u64(r)).collect::<Result<_, _>>()?;
    let bidirectional = match read_u8(r)? {
        0 => false,
        1 => true,
        other => {
            return Err(NetError::CheckpointFormat(format!(
                "bidirectional flag must be 0 or 1, got {other}"
            )))
        }
    };
    let spec = NetSpec {
        input_dim: dims[0] as usize,
        hidden_units: dims[1] as usize,
        depth: dims[2] as usize,
        time_embed_dim: dims[3] as usize,
        embed_hidden: dims[4] as usize,
        bidirectional,
    };
    spec.validate()?;
    let step = read_u64(r)?;
    let opt_step = read_u64(r)?;
    let params = read_coords(r, spec, "parameter", true)?;
    let ema = read_coords(r, spec, "ema", true)?;
    let m = read_coords(r, spec, "first-moment", false)?;
    let v = read_coords(r, spec, "second-moment", false)?;
    Ok(TrainState {
        params,
        ema,
        opt: OptState {
            m,
            v,
            step: opt_step,
        },
        step,
        phase,
    })
}

/// Write a standalone checkpoint file: version byte, RNG position, state.
pub fn save_checkpoint<T: Real>(
    path: &Path,
    state: &TrainState<T>,
    rng: &RngState,
) -> Result<(), NetError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(&[CHECKPOINT_VERSION]).map_err(io_err)?;
    write_u64(&mut w, rng.seed)?;
    write_u64(&mut w, rng.stream_id)?;
    write_u64(&mut w, rng.counter)?;
    write_train_state(&mut w, state)?;
    w.flush().map_err(io_err)
}

/// Read back a [`save_checkpoint`] file. Trailing bytes are a format error.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(TrainState<T>, RngState), NetError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err)?);
    let version = read_u8(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(NetError::CheckpointFormat(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let rng = RngState {
        seed: read_u64(&mut r)?,
        stream_id: read_u64(&mut r)?,
        counter: read_u64(&mut r)?,
    };
    let state = read_train_state(&mut r)?;
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok((state, rng)),
        Ok(_) => Err(NetError::CheckpointFormat(
            "trailing bytes after state block".to_string(),
        )),
        Err(e) => Err(io_err(e)),
    }
}

//! Closed-form diagnostic subcommands: the Gaussian projection recursions
//! and the two-point toy system, each written as a CSV table. No rng, no
//! network; these tables are exact and byte-stable across runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use entbridge::analytic::{imf_gaussian_step, toy_flow, toy_iterate, GaussianIterState, IterMode};

use crate::errors::{error_chain, numeric, usage, CliError};
use crate::{GaussianAnalyticArgs, ModeArg, ToyFlowArgs};

/// Cross-covariance both recursions converge to at unit marginals and
/// unit diffusivity.
const TARGET_C01: f64 = std::f64::consts::SQRT_2 - 1.0;

fn create_csv(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| usage(format!("cannot create output directory {}: {e}", dir.display())))?;
    let path = dir.join(name);
    let file = File::create(&path)
        .map_err(|e| usage(format!("cannot create {}: {e}", path.display())))?;
    Ok((path, BufWriter::new(file)))
}

pub fn cmd_gaussian_analytic(args: &GaussianAnalyticArgs) -> Result<(), CliError> {
    if args.n_iters == 0 {
        return Err(usage("--n-iters must be at least 1"));
    }
    for &e in &args.eps_err_list {
        if !e.is_finite() || e < 0.0 {
            return Err(usage(format!(
                "--eps-err-list entries must be finite and nonnegative, got {e}"
            )));
        }
    }
    let modes: &[IterMode] = match args.mode {
        ModeArg::ForwardForward => &[IterMode::ForwardForward],
        ModeArg::ForwardBackward => &[IterMode::ForwardBackward],
        ModeArg::Both => &[IterMode::ForwardForward, IterMode::ForwardBackward],
    };
    let (path, mut w) = create_csv(&args.out, "gaussian_analytic.csv")?;
    writeln!(w, "mode,eps_err,n,c00,c11,c01,abs_c11_err,abs_c01_err").map_err(numeric)?;
    for &mode in modes {
        let mode_name = match mode {
            IterMode::ForwardForward => "forward_forward",
            IterMode::ForwardBackward => "forward_backward",
        };
        for &eps_err in &args.eps_err_list {
            let mut state = GaussianIterState::initial(mode);
            for n in 1..=args.n_iters {
                state = match imf_gaussian_step(&state, eps_err) {
                    Ok(next) => next,
                    Err(e) => {
                        // A diverging series ends early; the rows written so
                        // far stand, and the remaining series still run.
                        println!(
                            "{mode_name} at eps_err {eps_err}: stopped after iteration {}: {}",
                            n - 1,
                            error_chain(&e)
                        );
                        break;
                    }
                };
                let c = state.fwd;
                writeln!(
                    w,
                    "{mode_name},{eps_err},{n},{},{},{},{},{}",
                    c.c00,
                    c.c11,
                    c.c01,
                    (c.c11 - 1.0).abs(),
                    (c.c01 - TARGET_C01).abs()
                )
                .map_err(numeric)?;
            }
        }
    }
    w.flush().map_err(numeric)?;
    println!("recursion table in {}", path.display());
    Ok(())
}

pub fn cmd_toy_flow(args: &ToyFlowArgs) -> Result<(), CliError> {
    if !(args.y0 > 0.0 && args.y0 < args.x0 && args.x0.is_finite()) {
        return Err(usage(format!(
            "start must satisfy 0 < y0 < x0, got x0 = {}, y0 = {}",
            args.x0, args.y0
        )));
    }
    if !(args.dt > 0.0 && args.dt.is_finite()) {
        return Err(usage(format!("--dt must be positive, got {}", args.dt)));
    }
    if !(args.t_max >= 0.0 && args.t_max.is_finite()) {
        return Err(usage(format!(
            "--t-max must be nonnegative, got {}",
            args.t_max
        )));
    }
    for &alpha in &args.alpha_list {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(usage(format!(
                "--alpha-list entries must lie in (0, 1], got {alpha}"
            )));
        }
    }

    let (flow_path, mut fw) = create_csv(&args.out, "toy_flow.csv")?;
    writeln!(fw, "t,x,y").map_err(numeric)?;
    let n_rows = (args.t_max / args.dt + 1e-9).floor() as usize;
    for k in 0..=n_rows {
        let t = k as f64 * args.dt;
        let s = toy_flow(args.x0, args.y0, t).map_err(numeric)?;
        writeln!(fw, "{t},{},{}", s.x, s.y).map_err(numeric)?;
    }
    fw.flush().map_err(numeric)?;

    let (iter_path, mut iw) = create_csv(&args.out, "toy_iterates.csv")?;
    writeln!(iw, "alpha,iter,x,y").map_err(numeric)?;
    for &alpha in &args.alpha_list {
        for it in 0..=args.n {
            let s = toy_iterate(args.x0, args.y0, alpha, it).map_err(numeric)?;
            writeln!(iw, "{alpha},{it},{},{}", s.x, s.y).map_err(numeric)?;
        }
    }
    iw.flush().map_err(numeric)?;

    println!(
        "toy tables in {} and {}",
        flow_path.display(),
        iter_path.display()
    );
    Ok(())
}

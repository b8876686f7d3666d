//! End-to-end tests run against the compiled binary: exit codes, file
//! layout, the frozen CSV schema, and byte-level replayability.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const HEADER: &str = "step,phase,loss_fwd,loss_bwd,cov_hat,w2_mean,w2_sd,path_energy,msd,consistency_residual,wallclock_s";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_entbridge"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary spawns")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Small but complete experiment config; pi0 and pi1 are Gaussians with
/// different widths so every metric column is populated.
fn config_text(out_dir: &Path, n_pretrain: usize, n_finetune: usize, eval_every: usize) -> String {
    format!(
        "[run]\n\
         label = t\n\
         out_dir = {}\n\n\
         [train]\n\
         eps = 0.25\n\
         batch_size = 8\n\
         n_pretrain = {n_pretrain}\n\
         n_finetune = {n_finetune}\n\
         lr_pretrain = 0.01\n\
         lr_finetune = 0.001\n\
         ema_decay = 0.95\n\
         sample_with_ema = true\n\
         n_em_steps = 4\n\
         t_min = 0.0001\n\
         seed = 11\n\
         finetune_mode = online\n\n\
         [net]\n\
         hidden_units = 16\n\
         depth = 1\n\
         time_embed_dim = 8\n\
         embed_hidden = 8\n\
         bidirectional = true\n\n\
         [source]\n\
         name = gaussian\n\
         dim = 2\n\
         sigma = 1\n\n\
         [target]\n\
         name = gaussian\n\
         dim = 2\n\
         sigma = 1.5\n\n\
         [eval]\n\
         eval_every = {eval_every}\n\
         n_eval = 32\n\
         w2_repeats = 2\n",
        out_dir.display()
    )
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

fn csv_rows(path: &Path) -> Vec<String> {
    let text = read(path);
    let mut lines = text.lines().map(str::to_string);
    assert_eq!(lines.next().as_deref(), Some(HEADER), "{}", path.display());
    lines.collect()
}

fn field(row: &str, idx: usize) -> String {
    row.split(',').nth(idx).unwrap().to_string()
}

#[test]
fn missing_config_exits_one_and_names_the_path() {
    let out = run(&["pretrain", "--config", "/nonexistent/exp.cfg"]);
    assert_eq!(code(&out), 1);
    assert!(stderr_of(&out).contains("/nonexistent/exp.cfg"));
}

#[test]
fn malformed_config_exits_one_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let text = config_text(dir.path(), 1, 0, 0).replace("batch_size = 8", "batch_size = eight");
    let cfg = write_config(dir.path(), &text);
    let out = run(&["pretrain", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let err = stderr_of(&out);
    assert!(err.contains("exp.cfg:"), "{err}");
    assert!(err.contains("batch_size"), "{err}");
}

#[test]
fn unknown_flags_and_missing_checkpoints_exit_one() {
    let out = run(&["pretrain", "--frobnicate"]);
    assert_eq!(code(&out), 1);

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config_text(dir.path(), 1, 0, 0));
    for sub in ["finetune", "eval"] {
        let out = run(&[sub, "--config", cfg.to_str().unwrap()]);
        assert_eq!(code(&out), 1, "{sub}");
        assert!(stderr_of(&out).contains("--checkpoint"), "{sub}");
    }
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["pretrain", "--help"])), 0);
}

#[test]
fn pretraining_writes_config_checkpoint_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config_text(dir.path(), 3, 0, 0));
    let out = run(&["pretrain", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr_of(&out));

    assert!(dir.path().join("t.pretrain.ckpt").exists());
    assert!(dir.path().join("t.pretrain.cfg").exists());
    let rows = csv_rows(&dir.path().join("t.pretrain.csv"));
    assert_eq!(rows.len(), 4);
    for (i, row) in rows[..3].iter().enumerate() {
        assert_eq!(field(row, 0), (i + 1).to_string());
        assert_eq!(field(row, 1), "pretrain");
        assert!(field(row, 2).parse::<f64>().unwrap().is_finite());
        assert!(field(row, 3).parse::<f64>().unwrap().is_finite());
        assert_eq!(field(row, 10), "");
    }
    let eval = &rows[3];
    assert_eq!(field(eval, 0), "3");
    assert_eq!(field(eval, 1), "eval");
    for idx in 4..10 {
        assert!(
            field(eval, idx).parse::<f64>().unwrap().is_finite(),
            "column {idx} of {eval}"
        );
    }
    assert_eq!(field(eval, 10), "", "wallclock column stays empty");
}

#[test]
fn equal_seeds_replay_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for sub in ["a", "b"] {
        let sub_dir = dir.path().join(sub);
        std::fs::create_dir_all(&sub_dir).unwrap();
        let cfg = write_config(&sub_dir, &config_text(&sub_dir, 4, 3, 2));
        let out = run(&["pretrain", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", stderr_of(&out));
        let ckpt = sub_dir.join("t.pretrain.ckpt");
        let out = run(&[
            "finetune",
            "--config",
            cfg.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr_of(&out));
        outputs.push((
            read(&sub_dir.join("t.pretrain.csv")),
            std::fs::read(&sub_dir.join("t.pretrain.ckpt")).unwrap(),
            read(&sub_dir.join("t.finetune.csv")),
            std::fs::read(&sub_dir.join("t.finetune.ckpt")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config_text(dir.path(), 2, 0, 0));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out_dir, seed) in [(&a, "11"), (&b, "12")] {
        let out = run(&[
            "pretrain",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert_eq!(code(&out), 0, "{}", stderr_of(&out));
    }
    assert_ne!(
        read(&a.join("t.pretrain.csv")),
        read(&b.join("t.pretrain.csv"))
    );
}

#[test]
fn repeated_evaluation_is_byte_identical_and_self_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config_text(dir.path(), 2, 2, 0));
    let cfg_s = cfg.to_str().unwrap().to_string();
    assert_eq!(code(&run(&["pretrain", "--config", &cfg_s])), 0);
    let pre_ckpt = dir.path().join("t.pretrain.ckpt");
    assert_eq!(
        code(&run(&[
            "finetune",
            "--config",
            &cfg_s,
            "--checkpoint",
            pre_ckpt.to_str().unwrap()
        ])),
        0
    );
    let fin_ckpt = dir.path().join("t.finetune.ckpt");

    let mut eval_texts = Vec::new();
    for _ in 0..2 {
        let out = run(&[
            "eval",
            "--config",
            &cfg_s,
            "--checkpoint",
            fin_ckpt.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr_of(&out));
        eval_texts.push(read(&dir.path().join("t.eval.csv")));
    }
    assert_eq!(eval_texts[0], eval_texts[1]);

    let rows = csv_rows(&dir.path().join("t.eval.csv"));
    assert_eq!(rows.len(), 2);
    // Transport metric self check: distance of a cloud to itself is zero.
    assert_eq!(field(&rows[0], 1), "selfcheck");
    assert_eq!(field(&rows[0], 5), "0");
    assert_eq!(field(&rows[0], 6), "0");

    // The eval command reproduces the final training-time evaluation row.
    let fin_rows = csv_rows(&dir.path().join("t.finetune.csv"));
    let last_eval = fin_rows
        .iter()
        .rev()
        .find(|r| field(r, 1) == "eval")
        .unwrap();
    assert_eq!(&rows[1], last_eval);
}

#[test]
fn finetune_chunks_evaluate_on_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config_text(dir.path(), 1, 5, 2));
    let cfg_s = cfg.to_str().unwrap().to_string();
    assert_eq!(code(&run(&["pretrain", "--config", &cfg_s])), 0);
    let ckpt = dir.path().join("t.pretrain.ckpt");
    assert_eq!(
        code(&run(&[
            "finetune",
            "--config",
            &cfg_s,
            "--checkpoint",
            ckpt.to_str().unwrap()
        ])),
        0
    );
    let rows = csv_rows(&dir.path().join("t.finetune.csv"));
    let eval_steps: Vec<String> = rows
        .iter()
        .filter(|r| field(r, 1) == "eval")
        .map(|r| field(r, 0))
        .collect();
    // Pretraining ended at step 1; evals land every 2 finetune steps and
    // at the end of the run.
    assert_eq!(eval_steps, ["3", "5", "6"]);
}

#[test]
fn toy_flow_tables_are_exact() {
    let dir = tempfile::tempdir().unwrap();
    let out_s = dir.path().to_str().unwrap().to_string();
    let args = [
        "toy-flow",
        "--x0",
        "1.0",
        "--y0",
        "0.5",
        "--alpha-list",
        "1",
        "--n",
        "20",
        "--dt",
        "0.5",
        "--t-max",
        "5",
        "--out",
        &out_s,
    ];
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", stderr_of(&out));
    let first = (read(&dir.path().join("toy_flow.csv")), read(&dir.path().join("toy_iterates.csv")));

    let flow: Vec<String> = first.0.lines().map(str::to_string).collect();
    assert_eq!(flow[0], "t,x,y");
    assert_eq!(flow.len(), 12);
    for row in &flow[1..] {
        let t: f64 = field(row, 0).parse().unwrap();
        let x: f64 = field(row, 1).parse().unwrap();
        assert!((x - (-t / 2.0).exp()).abs() < 1e-12, "{row}");
    }

    let iters: Vec<String> = first.1.lines().map(str::to_string).collect();
    assert_eq!(iters[0], "alpha,iter,x,y");
    assert_eq!(iters.len(), 22);
    // Unit step size halves x exactly each iteration; x0 = 1 is dyadic.
    for row in &iters[1..] {
        let it: u32 = field(row, 1).parse().unwrap();
        let x: f64 = field(row, 2).parse().unwrap();
        assert_eq!(x, 0.5f64.powi(it as i32), "{row}");
    }

    let out = run(&args);
    assert_eq!(code(&out), 0);
    let second = (read(&dir.path().join("toy_flow.csv")), read(&dir.path().join("toy_iterates.csv")));
    assert_eq!(first, second);
}

#[test]
fn gaussian_analytic_tables_converge() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "gaussian-analytic",
        "--n-iters",
        "100",
        "--eps-err-list",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_of(&out));
    let text = read(&dir.path().join("gaussian_analytic.csv"));
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "mode,eps_err,n,c00,c11,c01,abs_c11_err,abs_c01_err");
    // Both modes complete all 100 iterations at zero projection error.
    assert_eq!(rows.len(), 201);
    for mode in ["forward_forward", "forward_backward"] {
        let last = rows
            .iter()
            .filter(|r| r.starts_with(mode) && field(r, 2) == "100")
            .next_back()
            .unwrap();
        let c01_err: f64 = field(last, 7).parse().unwrap();
        assert!(c01_err < 1e-3, "{last}");
    }
}

#[test]
fn diverging_series_stop_without_failing_the_command() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "gaussian-analytic",
        "--mode",
        "forward_forward",
        "--n-iters",
        "200",
        "--eps-err-list",
        "0.2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_of(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("stopped after iteration"));
    let text = read(&dir.path().join("gaussian_analytic.csv"));
    let n_rows = text.lines().count() - 1;
    assert!(n_rows > 10 && n_rows < 200, "wrote {n_rows} rows");
}

#[test]
fn bad_toy_start_exits_one() {
    let out = run(&["toy-flow", "--x0", "0.5", "--y0", "0.7", "--out", "/tmp"]);
    assert_eq!(code(&out), 1);
    assert!(stderr_of(&out).contains("0 < y0 < x0"));
}

//! Experiment configuration files: flat `key = value` lines under
//! `[section]` headers, `#` comments, nothing nested. The serializer is
//! the parser's inverse, so a config written by `serialize_config` loads
//! back to an equal value and re-serializes to identical bytes.

use std::fmt::Display;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use entbridge::data_metrics::{DatasetSpec, W2_MAX_POINTS};
use entbridge::net::NetSpec;
use entbridge::TrainConfig64;

use crate::errors::{error_chain, usage, CliError};

/// Everything a training or evaluation run needs, as loaded from one file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Run name; output files are `{label}.{phase}.{csv,ckpt}`.
    pub label: String,
    /// Directory all outputs land in, unless overridden by `--out`.
    pub out_dir: PathBuf,
    pub train: TrainConfig64,
    pub finetune_mode: FinetuneMode,
    pub net: NetSpec,
    pub source: DatasetSpec<f64>,
    pub target: DatasetSpec<f64>,
    pub eval: EvalSettings,
}

/// Which finetuning scheme the `finetune` subcommand runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinetuneMode {
    /// Simultaneous half-batch updates of both directions every step.
    Online,
    /// Direction alternation: train one direction for `swap_every` steps
    /// on couplings generated by the other, then swap.
    Iterative { swap_every: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalSettings {
    /// Steps between metric evaluations during finetuning; 0 evaluates
    /// only once at the end.
    pub eval_every: usize,
    /// Points per evaluation cloud.
    pub n_eval: usize,
    /// Resampled repetitions behind the transport-cost mean and sd.
    pub w2_repeats: usize,
}

/// The start-side marginal of a dataset: coupled families report the law
/// of their first endpoint alone, so evaluation and generation can draw
/// fresh uncoupled starts.
pub fn marginal_of(spec: &DatasetSpec<f64>) -> DatasetSpec<f64> {
    match spec {
        DatasetSpec::AntitheticGaussian { dim } => DatasetSpec::Gaussian {
            dim: *dim,
            sigma: 1.0,
        },
        other => other.clone(),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.label.is_empty()
            || !self
                .label
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
        {
            return Err(usage(format!(
                "label `{}` must be nonempty and use only letters, digits, `.`, `_`, `-`",
                self.label
            )));
        }
        self.train
            .validate()
            .map_err(|e| usage(format!("[train]: {}", error_chain(&e))))?;
        self.net
            .validate()
            .map_err(|e| usage(format!("[net]: {}", error_chain(&e))))?;
        self.source
            .validate()
            .map_err(|e| usage(format!("[source]: {}", error_chain(&e))))?;
        self.target
            .validate()
            .map_err(|e| usage(format!("[target]: {}", error_chain(&e))))?;
        if self.target.is_coupled() {
            return Err(usage("[target] must be a marginal dataset".to_string()));
        }
        if self.source.dim() != self.target.dim() {
            return Err(usage(format!(
                "source dimension {} does not match target dimension {}",
                self.source.dim(),
                self.target.dim()
            )));
        }
        if self.net.input_dim != self.source.dim() {
            return Err(usage(format!(
                "net input dimension {} does not match data dimension {}",
                self.net.input_dim,
                self.source.dim()
            )));
        }
        if self.source.is_coupled() {
            let expected = marginal_of(&self.source);
            if self.target != expected {
                return Err(usage(
                    "antithetic_gaussian source fixes the target law to gaussian sigma 1 \
                     of the same dimension; set [target] accordingly"
                        .to_string(),
                ));
            }
        }
        if let FinetuneMode::Iterative { swap_every } = self.finetune_mode {
            if swap_every == 0 {
                return Err(usage("swap_every must be at least 1".to_string()));
            }
        }
        if self.eval.n_eval < 2 || self.eval.n_eval > W2_MAX_POINTS {
            return Err(usage(format!(
                "n_eval must be in 2..={W2_MAX_POINTS}, got {}",
                self.eval.n_eval
            )));
        }
        if self.eval.w2_repeats == 0 {
            return Err(usage("w2_repeats must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// Read, parse, and validate a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let cfg = parse_config(&text, &path.display().to_string())?;
    cfg.validate()?;
    Ok(cfg)
}

// ------------------------------------------------------------------ parsing

/// One section's surviving `key = value` lines; keys are removed as the
/// typed accessors consume them so leftovers can be reported as unknown.
struct Section<'a> {
    origin: &'a str,
    name: &'static str,
    entries: Vec<(String, String, usize)>,
}

impl Section<'_> {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        let idx = self.entries.iter().position(|(k, _, _)| k == key)?;
        let (_, value, line) = self.entries.remove(idx);
        Some((value, line))
    }

    fn require(&mut self, key: &str) -> Result<String, CliError> {
        match self.take(key) {
            Some((value, _)) => Ok(value),
            None => Err(usage(format!(
                "{}: [{}] is missing required key `{key}`",
                self.origin, self.name
            ))),
        }
    }

    fn parse_value<T: FromStr>(&self, key: &str, value: &str, line: usize) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        value.parse().map_err(|e| {
            usage(format!(
                "{}:{line}: bad value `{value}` for `{key}` in [{}]: {e}",
                self.origin, self.name
            ))
        })
    }

    fn require_parsed<T: FromStr>(&mut self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        match self.take(key) {
            Some((value, line)) => self.parse_value(key, &value, line),
            None => Err(usage(format!(
                "{}: [{}] is missing required key `{key}`",
                self.origin, self.name
            ))),
        }
    }

    fn parsed_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        match self.take(key) {
            Some((value, line)) => self.parse_value(key, &value, line),
            None => Ok(default),
        }
    }

    fn finish(self) -> Result<(), CliError> {
        match self.entries.first() {
            None => Ok(()),
            Some((key, _, line)) => Err(usage(format!(
                "{}:{line}: unknown key `{key}` in [{}]",
                self.origin, self.name
            ))),
        }
    }
}

const SECTION_NAMES: [&str; 6] = ["run", "train", "net", "source", "target", "eval"];

/// Parse config text. `origin` names the file in error messages.
/// Validation of the parsed values is separate; see `load_config`.
pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig, CliError> {
    let mut sections: Vec<(&str, Vec<(String, String, usize)>)> =
        SECTION_NAMES.iter().map(|&n| (n, Vec::new())).collect();
    let mut seen = [false; SECTION_NAMES.len()];
    let mut current: Option<usize> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let pos = SECTION_NAMES
                .iter()
                .position(|&n| n == name)
                .ok_or_else(|| usage(format!("{origin}:{line_no}: unknown section [{name}]")))?;
            if seen[pos] {
                return Err(usage(format!(
                    "{origin}:{line_no}: duplicate section [{name}]"
                )));
            }
            seen[pos] = true;
            current = Some(pos);
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            usage(format!(
                "{origin}:{line_no}: expected `key = value` or `[section]`, got `{line}`"
            ))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let section = current
            .ok_or_else(|| usage(format!("{origin}:{line_no}: `{key}` appears before any [section]")))?;
        if sections[section].1.iter().any(|(k, _, _)| *k == key) {
            return Err(usage(format!(
                "{origin}:{line_no}: duplicate key `{key}` in [{}]",
                sections[section].0
            )));
        }
        sections[section].1.push((key, value, line_no));
    }

    for (pos, &name) in SECTION_NAMES.iter().enumerate() {
        if !seen[pos] {
            return Err(usage(format!("{origin}: missing section [{name}]")));
        }
    }

    let mut take_section = |want: &'static str| Section {
        origin,
        name: want,
        entries: std::mem::take(
            &mut sections
                .iter_mut()
                .find(|(n, _)| *n == want)
                .expect("section names are fixed")
                .1,
        ),
    };

    let mut run = take_section("run");
    let label = run.require("label")?;
    let out_dir = PathBuf::from(run.require("out_dir")?);
    run.finish()?;

    let mut train = take_section("train");
    let train_cfg = TrainConfig64 {
        eps: train.require_parsed("eps")?,
        batch_size: train.require_parsed("batch_size")?,
        n_pretrain: train.require_parsed("n_pretrain")?,
        n_finetune: train.require_parsed("n_finetune")?,
        lr_pretrain: train.require_parsed("lr_pretrain")?,
        lr_finetune: train.require_parsed("lr_finetune")?,
        ema_decay: train.require_parsed("ema_decay")?,
        sample_with_ema: train.require_parsed("sample_with_ema")?,
        n_em_steps: train.require_parsed("n_em_steps")?,
        t_min: train.require_parsed("t_min")?,
        seed: train.require_parsed("seed")?,
    };
    let mode_name: String = train.parsed_or("finetune_mode", "online".to_string())?;
    let finetune_mode = match mode_name.as_str() {
        "online" => {
            if let Some((_, line)) = train.take("swap_every") {
                return Err(usage(format!(
                    "{origin}:{line}: swap_every is only valid with finetune_mode = iterative"
                )));
            }
            FinetuneMode::Online
        }
        "iterative" => FinetuneMode::Iterative {
            swap_every: train.parsed_or("swap_every", 2500)?,
        },
        other => {
            return Err(usage(format!(
                "{origin}: finetune_mode must be `online` or `iterative`, got `{other}`"
            )))
        }
    };
    train.finish()?;

    let mut source_sec = take_section("source");
    let source = parse_dataset(&mut source_sec)?;
    source_sec.finish()?;

    let mut target_sec = take_section("target");
    let target = parse_dataset(&mut target_sec)?;
    target_sec.finish()?;

    let mut net_sec = take_section("net");
    let net = NetSpec {
        input_dim: source.dim(),
        hidden_units: net_sec.require_parsed("hidden_units")?,
        depth: net_sec.require_parsed("depth")?,
        time_embed_dim: net_sec.require_parsed("time_embed_dim")?,
        embed_hidden: net_sec.require_parsed("embed_hidden")?,
        bidirectional: net_sec.require_parsed("bidirectional")?,
    };
    net_sec.finish()?;

    let mut eval_sec = take_section("eval");
    let eval = EvalSettings {
        eval_every: eval_sec.require_parsed("eval_every")?,
        n_eval: eval_sec.require_parsed("n_eval")?,
        w2_repeats: eval_sec.require_parsed("w2_repeats")?,
    };
    eval_sec.finish()?;

    Ok(ExperimentConfig {
        label,
        out_dir,
        train: train_cfg,
        finetune_mode,
        net,
        source,
        target,
        eval,
    })
}

fn parse_dataset(sec: &mut Section<'_>) -> Result<DatasetSpec<f64>, CliError> {
    let name = sec.require("name")?;
    let spec = match name.as_str() {
        "gaussian" => DatasetSpec::Gaussian {
            dim: sec.require_parsed("dim")?,
            sigma: sec.parsed_or("sigma", 1.0)?,
        },
        "eight_gaussians" => DatasetSpec::EightGaussians {
            radius: sec.parsed_or("radius", 4.0)?,
            component_sd: sec.parsed_or("component_sd", 0.3)?,
        },
        "moons" => DatasetSpec::Moons {
            noise: sec.parsed_or("noise", 0.05)?,
        },
        "scurve" => DatasetSpec::Scurve {
            noise: sec.parsed_or("noise", 0.05)?,
        },
        "antithetic_gaussian" => DatasetSpec::AntitheticGaussian {
            dim: sec.require_parsed("dim")?,
        },
        other => {
            return Err(usage(format!(
                "{}: unknown dataset name `{other}` in [{}]",
                sec.origin, sec.name
            )))
        }
    };
    Ok(spec)
}

// -------------------------------------------------------------- serializing

fn write_dataset(out: &mut String, header: &str, spec: &DatasetSpec<f64>) {
    let _ = writeln!(out, "[{header}]");
    match spec {
        DatasetSpec::Gaussian { dim, sigma } => {
            let _ = writeln!(out, "name = gaussian\ndim = {dim}\nsigma = {sigma}");
        }
        DatasetSpec::EightGaussians { radius, component_sd } => {
            let _ = writeln!(
                out,
                "name = eight_gaussians\nradius = {radius}\ncomponent_sd = {component_sd}"
            );
        }
        DatasetSpec::Moons { noise } => {
            let _ = writeln!(out, "name = moons\nnoise = {noise}");
        }
        DatasetSpec::Scurve { noise } => {
            let _ = writeln!(out, "name = scurve\nnoise = {noise}");
        }
        DatasetSpec::AntitheticGaussian { dim } => {
            let _ = writeln!(out, "name = antithetic_gaussian\ndim = {dim}");
        }
    }
}

/// Render a config to the exact text `parse_config` reads back.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[run]");
    let _ = writeln!(out, "label = {}", cfg.label);
    let _ = writeln!(out, "out_dir = {}", cfg.out_dir.display());
    let _ = writeln!(out);

    let t = &cfg.train;
    let _ = writeln!(out, "[train]");
    let _ = writeln!(out, "eps = {}", t.eps);
    let _ = writeln!(out, "batch_size = {}", t.batch_size);
    let _ = writeln!(out, "n_pretrain = {}", t.n_pretrain);
    let _ = writeln!(out, "n_finetune = {}", t.n_finetune);
    let _ = writeln!(out, "lr_pretrain = {}", t.lr_pretrain);
    let _ = writeln!(out, "lr_finetune = {}", t.lr_finetune);
    let _ = writeln!(out, "ema_decay = {}", t.ema_decay);
    let _ = writeln!(out, "sample_with_ema = {}", t.sample_with_ema);
    let _ = writeln!(out, "n_em_steps = {}", t.n_em_steps);
    let _ = writeln!(out, "t_min = {}", t.t_min);
    let _ = writeln!(out, "seed = {}", t.seed);
    match cfg.finetune_mode {
        FinetuneMode::Online => {
            let _ = writeln!(out, "finetune_mode = online");
        }
        FinetuneMode::Iterative { swap_every } => {
            let _ = writeln!(out, "finetune_mode = iterative");
            let _ = writeln!(out, "swap_every = {swap_every}");
        }
    }
    let _ = writeln!(out);

    let n = &cfg.net;
    let _ = writeln!(out, "[net]");
    let _ = writeln!(out, "hidden_units = {}", n.hidden_units);
    let _ = writeln!(out, "depth = {}", n.depth);
    let _ = writeln!(out, "time_embed_dim = {}", n.time_embed_dim);
    let _ = writeln!(out, "embed_hidden = {}", n.embed_hidden);
    let _ = writeln!(out, "bidirectional = {}", n.bidirectional);
    let _ = writeln!(out);

    write_dataset(&mut out, "source", &cfg.source);
    let _ = writeln!(out);
    write_dataset(&mut out, "target", &cfg.target);
    let _ = writeln!(out);

    let _ = writeln!(out, "[eval]");
    let _ = writeln!(out, "eval_every = {}", cfg.eval.eval_every);
    let _ = writeln!(out, "n_eval = {}", cfg.eval.n_eval);
    let _ = writeln!(out, "w2_repeats = {}", cfg.eval.w2_repeats);
    out
}

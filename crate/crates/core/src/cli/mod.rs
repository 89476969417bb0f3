//! The `clab` command line: train, evaluate, compare and sanity-check runs.
//!
//! One experiment lives in one directory holding the resolved config, the
//! checkpoint and the metrics stream. Exit codes: 0 success, 1 config or
//! usage error, 2 training aborted, 3 checkpoint version mismatch.

mod compare;
mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::autodiff::checkpoint::{self, CheckpointError};
use crate::autodiff::ParamStore;
use crate::evalkit::{self, AttentionStats};
use crate::models::{Autoencoder, CuriosityModule, FeatureEncoder};
use crate::trainer::{self, ActorCriticPolicy, Policy, RandomPolicy, RunOutputs, UlMode};
use crate::worlds::{Dumping, Environment, FrameDumper, ObjectCatalog, World3D};

pub use compare::{compare_runs, downsample, CompareOutput, MAX_CURVE_POINTS};
pub use config::{load_config, ConfigError, EnvKind, EnvSection, EvalSection, ExperimentConfig, IoSection, RESOLVED_CONFIG};

/// Environment variable that overrides `io.run_dir`.
pub const RUN_DIR_ENV: &str = "CLAB_RUN_DIR";

#[derive(Debug, Parser)]
#[command(name = "clab", version, about = "Intrinsically motivated actor-critic experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent; extra `--section.key value` flags override the config.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write every frame worker 0 sees as PPM into this directory.
        #[arg(long)]
        dump_frames: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
        overrides: Vec<String>,
    },
    /// Evaluate a run directory.
    Eval {
        #[arg(long, value_enum)]
        which: EvalWhich,
        /// Run directory holding the resolved config and checkpoint.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Attention only: act with the trained policy or uniformly at random.
        #[arg(long, value_enum, default_value = "trained")]
        policy: PolicyKind,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
        overrides: Vec<String>,
    },
    /// Align the metrics of several runs and tabulate their attention reports.
    Compare {
        #[arg(required = true, num_args = 2..)]
        run_dirs: Vec<PathBuf>,
        /// Aligned CSV destination (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load an exported feature CSV and report its shape.
    FeaturesCheck { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalWhich {
    Attention,
    Fewshot,
    Export,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    Trained,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Trained => "trained",
        }
    }
}

/// What `eval --which attention` writes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub policy: String,
    pub env_seed: u64,
    pub total_frames: usize,
    pub window: usize,
    #[serde(flatten)]
    pub stats: AttentionStats,
}

pub fn attention_report_name(policy: PolicyKind) -> String {
    format!("attention_{}.json", policy.name())
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Self { code: 1, message: e.to_string() }
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        let code = if matches!(e, CheckpointError::VersionMismatch { .. }) { 3 } else { 1 };
        Self { code, message: e.to_string() }
    }
}

/// `--a.b value` and `--a.b=value` pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let key = a.strip_prefix("--").ok_or_else(|| format!("expected --section.key, found {a:?}"))?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else {
            let v = it.next().ok_or_else(|| format!("override --{key} has no value"))?;
            out.push((key.to_string(), v.clone()));
        }
    }
    Ok(out)
}

fn resolve(config: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, Failure> {
    let pairs = parse_overrides(overrides).map_err(Failure::config)?;
    let mut cfg = load_config(config, &pairs).map_err(Failure::config)?;
    if let Some(dir) = std::env::var_os(RUN_DIR_ENV) {
        cfg.io.run_dir = PathBuf::from(dir);
    }
    Ok(cfg)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::config(format!("{}: {e}", path.display()))
}

pub fn cmd_train(config: Option<&Path>, overrides: &[String], dump_frames: Option<&Path>) -> Result<String, Failure> {
    let cfg = resolve(config, overrides)?;
    let dir = &cfg.io.run_dir;
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let resolved = dir.join(RESOLVED_CONFIG);
    std::fs::write(&resolved, cfg.to_toml()).map_err(|e| io_err(&resolved, e))?;

    let outputs = RunOutputs { metrics_csv: Some(cfg.io.metrics_path()), checkpoint: Some(cfg.io.checkpoint_path()), resume: None };
    let env_cfg = cfg.env.clone();
    let dump = dump_frames.map(Path::to_path_buf);
    let make_env = move |id: usize| -> Result<Box<dyn Environment>, crate::worlds::WorldError> {
        let env = env_cfg.build()?;
        match (&dump, id) {
            (Some(d), 0) => Ok(Box::new(Dumping { inner: env, dumper: FrameDumper::new(d.clone())? })),
            _ => Ok(env),
        }
    };
    let out = trainer::run_async_training(&cfg.train, make_env, &outputs).map_err(|e| match e {
        trainer::TrainError::Config(_) => Failure::config(e),
        e => Failure { code: 2, message: format!("training aborted: {e}") },
    })?;
    Ok(format!(
        "trained {} steps in {} rollouts ({} optimizer steps); recent return {}; run dir {}",
        out.env_steps,
        out.rollouts,
        out.optimizer_steps,
        out.recent_return(100).map_or("n/a".to_string(), |r| format!("{r:.4}")),
        dir.display()
    ))
}

fn load_checkpoint(path: &Path) -> Result<ParamStore, Failure> {
    Ok(checkpoint::load(path)?)
}

/// Features from whichever UL module the run trained.
pub fn run_features(cfg: &ExperimentConfig, store: &ParamStore) -> Result<evalkit::FeatureSet, Failure> {
    let images = evalkit::build_recognition_dataset(&ObjectCatalog::new(cfg.env.world3d.texture_seed), cfg.eval.views_per_class, cfg.eval.seed)
        .map_err(Failure::config)?;
    let feats = match cfg.train.ul_mode {
        UlMode::Autoencoder => {
            let m = Autoencoder::new();
            evalkit::extract_features(&m, &store.params_with_prefix(m.prefix()), &images)
        }
        UlMode::Prediction => {
            let m = CuriosityModule::new();
            evalkit::extract_features(&m, &store.params_with_prefix(m.prefix()), &images)
        }
        UlMode::None => return Err(Failure::config("run has no UL module (train.ul_mode = none); nothing to extract features from")),
    };
    feats.map_err(|e| Failure { code: 1, message: e.to_string() })
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    which: EvalWhich,
    run_dir: Option<&Path>,
    config: Option<&Path>,
    checkpoint_path: Option<&Path>,
    policy: PolicyKind,
    out: Option<&Path>,
    overrides: &[String],
) -> Result<String, Failure> {
    let resolved = run_dir.map(|d| d.join(RESOLVED_CONFIG));
    let config = config.or(resolved.as_deref());
    let mut cfg = resolve(config, overrides)?;
    if let Some(d) = run_dir {
        cfg.io.run_dir = d.to_path_buf();
    }
    let ckpt = checkpoint_path.map(Path::to_path_buf).unwrap_or_else(|| cfg.io.checkpoint_path());
    let eval_err = |e: evalkit::EvalError| Failure { code: 1, message: e.to_string() };

    match which {
        EvalWhich::Attention => {
            let mut pol: Box<dyn Policy> = match policy {
                PolicyKind::Random => Box::new(RandomPolicy::new(cfg.eval.seed)),
                PolicyKind::Trained => Box::new(ActorCriticPolicy::new(load_checkpoint(&ckpt)?.params(), cfg.eval.seed)),
            };
            let mut env = World3D::new(cfg.env.world3d.clone()).map_err(Failure::config)?;
            let stats =
                evalkit::evaluate_attention(pol.as_mut(), &mut env, cfg.env.seed, cfg.eval.total_frames, cfg.eval.window).map_err(eval_err)?;
            let report = AttentionReport {
                policy: policy.name().to_string(),
                env_seed: cfg.env.seed,
                total_frames: cfg.eval.total_frames,
                window: cfg.eval.window,
                stats,
            };
            let path = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.io.run_dir.join(attention_report_name(policy)));
            write_file(&path, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
            Ok(format!(
                "attention ({}): frequency {:.4} ± {:.4}, duration {:.2} ± {:.2} over {} runs -> {}",
                report.policy,
                stats.frequency_mean,
                stats.frequency_std,
                stats.duration_mean,
                stats.duration_std,
                stats.n_runs,
                path.display()
            ))
        }
        EvalWhich::Fewshot => {
            let store = load_checkpoint(&ckpt)?;
            let feats = run_features(&cfg, &store)?;
            let curve = evalkit::few_shot_curve(&feats, &cfg.eval.n_shot, cfg.eval.splits, cfg.eval.seed).map_err(eval_err)?;
            let mut csv = String::from("n_shot,error_rate\n");
            for (n, e) in &curve {
                csv.push_str(&format!("{n},{e:.6}\n"));
            }
            let path = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.io.run_dir.join("fewshot.csv"));
            write_file(&path, &csv)?;
            let cols: Vec<String> = curve.iter().map(|(n, e)| format!("{n}-shot {:.1}%", e * 100.0)).collect();
            Ok(format!("5-way error: {} -> {}", cols.join(", "), path.display()))
        }
        EvalWhich::Export => {
            let store = load_checkpoint(&ckpt)?;
            let feats = run_features(&cfg, &store)?;
            let path = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.io.features_path());
            evalkit::export_features(&feats, &path).map_err(eval_err)?;
            Ok(format!("exported {} feature rows -> {}", feats.len(), path.display()))
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn cmd_compare(run_dirs: &[PathBuf], out: Option<&Path>) -> Result<String, Failure> {
    let cmp = compare_runs(run_dirs).map_err(Failure::config)?;
    match out {
        Some(p) => write_file(p, &cmp.csv)?,
        None => print!("{}", cmp.csv),
    }
    Ok(cmp.table)
}

pub fn cmd_features_check(path: &Path) -> Result<String, Failure> {
    let fs = evalkit::import_features(path).map_err(Failure::config)?;
    if fs.is_empty() {
        return Err(Failure::config(format!("{}: no feature rows", path.display())));
    }
    let labels: std::collections::BTreeSet<_> = fs.rows.iter().map(|r| r.label).collect();
    Ok(format!("{}: {} rows, {} labels, {} features each", path.display(), fs.len(), labels.len(), evalkit::FEATURE_LEN))
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Train { config, dump_frames, overrides } => cmd_train(config.as_deref(), overrides, dump_frames.as_deref()),
        Command::Eval { which, run_dir, config, checkpoint, policy, out, overrides } => {
            cmd_eval(*which, run_dir.as_deref(), config.as_deref(), checkpoint.as_deref(), *policy, out.as_deref(), overrides)
        }
        Command::Compare { run_dirs, out } => cmd_compare(run_dirs, out.as_deref()),
        Command::FeaturesCheck { path } => cmd_features_check(path),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

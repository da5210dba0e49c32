//! Command-line front end: `snip <subcommand> [flags]`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Experiment, ExperimentConfig};
use crate::error::Result;
use crate::experiments::run_experiment;

#[derive(Debug, Parser)]
#[command(name = "snip", version, about = "Single-shot pruning by connection sensitivity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score a fresh model and save the pruned checkpoint and saliency report.
    Prune(Flags),
    /// Prune (unless kappa_bar is 0) and train; or resume a checkpoint.
    Train(Flags),
    /// Error rates of a checkpoint.
    Eval(Flags),
    /// Train at every level of the kappa_bar list.
    SweepSparsity(Flags),
    /// First-layer mask images from per-class saliency batches (lenet300).
    VizMasks(Flags),
    /// Vary the saliency batch size.
    AblateBatchSize(Flags),
    /// Vary the initializer used for saliency.
    AblateInit(Flags),
    /// Fit true and shuffled labels, dense and pruned.
    RandomLabels(Flags),
    /// Compare masks from original and inverted images.
    InvertCompare(Flags),
    /// Compare snip, magnitude, grad_magnitude and random masks.
    CriteriaCompare(Flags),
}

/// Every flag maps to the config key of the same name (dashes become
/// underscores) and overrides the config file.
#[derive(Debug, Args)]
struct Flags {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    dataset_dir: Option<String>,
    #[arg(long)]
    images: Option<String>,
    #[arg(long)]
    labels: Option<String>,
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Comma-separated sparsity levels in percent.
    #[arg(long)]
    kappa_bar: Option<String>,
    #[arg(long)]
    saliency_batch: Option<String>,
    #[arg(long)]
    criterion: Option<String>,
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    iterations: Option<String>,
    #[arg(long)]
    eval_every: Option<String>,
    /// Any other config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Command {
    fn split(self) -> (Experiment, Flags) {
        match self {
            Command::Prune(f) => (Experiment::Prune, f),
            Command::Train(f) => (Experiment::Train, f),
            Command::Eval(f) => (Experiment::Eval, f),
            Command::SweepSparsity(f) => (Experiment::SweepSparsity, f),
            Command::VizMasks(f) => (Experiment::VizMasks, f),
            Command::AblateBatchSize(f) => (Experiment::AblateBatchSize, f),
            Command::AblateInit(f) => (Experiment::AblateInit, f),
            Command::RandomLabels(f) => (Experiment::RandomLabels, f),
            Command::InvertCompare(f) => (Experiment::InvertCompare, f),
            Command::CriteriaCompare(f) => (Experiment::CriteriaCompare, f),
        }
    }
}

fn resolve(experiment: Experiment, f: Flags) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::defaults(experiment);
    if let Some(path) = &f.config {
        cfg.apply_file(path)?;
    }
    for kv in &f.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| crate::Error::Config(format!("--set expects key=value, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    let named = [
        ("out", f.out),
        ("model", f.model),
        ("dataset_dir", f.dataset_dir),
        ("images", f.images),
        ("labels", f.labels),
        ("checkpoint", f.checkpoint),
        ("seed", f.seed),
        ("kappa_bar", f.kappa_bar),
        ("saliency_batch", f.saliency_batch),
        ("criterion", f.criterion),
        ("init", f.init),
        ("iterations", f.iterations),
        ("eval_every", f.eval_every),
    ];
    for (k, v) in named {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `argv` (program name first), runs the experiment and returns the
/// process exit code: 0 ok, 2 usage or config, 3 data, 4 numerics.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (experiment, flags) = cli.command.split();
    let outcome = resolve(experiment, flags).and_then(|cfg| run_experiment(&cfg));
    match outcome {
        Ok(summary) => {
            if !summary.is_empty() {
                println!("{summary}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Makes freed memory stay in the process heap. Large activation buffers are
/// reallocated every step; with glibc's default mmap threshold each one costs
/// fresh page faults.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_set() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "seed = 3\niterations = 10\n").unwrap();
        let f = Flags {
            config: Some(path),
            out: None,
            model: None,
            dataset_dir: None,
            images: None,
            labels: None,
            checkpoint: None,
            seed: Some("5".into()),
            kappa_bar: Some("10,20".into()),
            saliency_batch: None,
            criterion: None,
            init: None,
            iterations: None,
            eval_every: None,
            set: vec!["iterations=20".into(), "batch_size=50".into()],
        };
        let cfg = resolve(Experiment::Train, f).unwrap();
        assert_eq!((cfg.seed, cfg.iterations, cfg.batch_size), (5, 20, 50));
        assert_eq!(cfg.kappa_bar, vec![10.0, 20.0]);
    }

    #[test]
    fn usage_and_config_errors_exit_2() {
        assert_eq!(run(["snip", "frobnicate"]), 2);
        assert_eq!(run(["snip"]), 2);
        assert_eq!(run(["snip", "prune", "--model", "alexnet"]), 2);
        assert_eq!(run(["snip", "prune", "--kappa-bar", "120"]), 2);
        assert_eq!(run(["snip", "prune", "--set", "colour=red"]), 2);
        assert_eq!(run(["snip", "eval"]), 2);
    }

    #[test]
    fn missing_data_exits_3() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let code = run(["snip", "prune", "--dataset-dir", dir.path().to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, 3);
        assert!(out.join(crate::config::ECHO_FILE).exists());
    }
}

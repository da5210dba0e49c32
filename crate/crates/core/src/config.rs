//! Experiment recipes: flat `key = value` files, overridable per key, echoed
//! next to every result so a run can be repeated from its echo.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::init::InitMethod;
use crate::model::ModelKind;
use crate::snip::Criterion;
use crate::trainer::{OptimizerConfig, OptimizerKind, Schedule, TrainConfig};

pub const ECHO_FILE: &str = "config-echo.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    Prune,
    Train,
    Eval,
    SweepSparsity,
    VizMasks,
    AblateBatchSize,
    AblateInit,
    RandomLabels,
    InvertCompare,
    CriteriaCompare,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::Prune,
        Experiment::Train,
        Experiment::Eval,
        Experiment::SweepSparsity,
        Experiment::VizMasks,
        Experiment::AblateBatchSize,
        Experiment::AblateInit,
        Experiment::RandomLabels,
        Experiment::InvertCompare,
        Experiment::CriteriaCompare,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Prune => "prune",
            Experiment::Train => "train",
            Experiment::Eval => "eval",
            Experiment::SweepSparsity => "sweep-sparsity",
            Experiment::VizMasks => "viz-masks",
            Experiment::AblateBatchSize => "ablate-batch-size",
            Experiment::AblateInit => "ablate-init",
            Experiment::RandomLabels => "random-labels",
            Experiment::InvertCompare => "invert-compare",
            Experiment::CriteriaCompare => "criteria-compare",
        }
    }
}

/// SGD learning rate for lenet5caffe runs.
pub const LENET5_SGD_LR: f64 = 0.05;

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

/// One experiment's full recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub model: ModelKind,
    pub dataset_dir: PathBuf,
    /// Replace the training IDX files (for `eval`: the files to score).
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Start from a saved model instead of a fresh one (`train`, `eval`).
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub split_seed: u64,
    pub kappa_bar: Vec<f64>,
    pub saliency_batch: usize,
    pub criterion: Criterion,
    pub init: InitMethod,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Step-decay factor; 1 means a constant rate.
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    pub iterations: u64,
    pub eval_every: u64,
    pub batch_size: usize,
    pub wall_clock: bool,
    /// Seeds per initializer in `ablate-init`.
    pub seeds: usize,
    /// Saliency batch sizes in `ablate-batch-size`.
    pub batch_sizes: Vec<usize>,
    /// Digit classes in `viz-masks`.
    pub classes: Vec<u8>,
    /// Sparsity levels of the random-label sweep; empty disables it.
    pub sweep_kappa_bar: Vec<f64>,
}

fn join<X: ToString>(xs: &[X]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<X: FromStr>(key: &str, v: &str) -> Result<Vec<X>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_one(key, s.trim())).collect()
}

fn parse_one<X: FromStr>(key: &str, v: &str) -> Result<X> {
    v.trim().parse().map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{v}` for `{key}`"))),
    }
}

impl ExperimentConfig {
    /// Defaults for each experiment.
    pub fn defaults(experiment: Experiment) -> Self {
        let sgd = OptimizerConfig::sgd();
        let mut c = ExperimentConfig {
            experiment,
            model: ModelKind::Lenet300,
            dataset_dir: PathBuf::from("data/mnist"),
            images: None,
            labels: None,
            checkpoint: None,
            out: PathBuf::from("runs").join(experiment.as_str()),
            seed: 0,
            split_seed: 0,
            kappa_bar: vec![90.0],
            saliency_batch: 100,
            criterion: Criterion::Snip,
            init: InitMethod::VarianceScalingXavier,
            optimizer: OptimizerKind::SgdMomentum,
            lr: sgd.lr0,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            lr_decay: 0.1,
            lr_decay_every: 25_000,
            iterations: 30_000,
            eval_every: 1_000,
            batch_size: 100,
            wall_clock: false,
            seeds: 5,
            batch_sizes: vec![1, 10, 100, 1_000, 10_000],
            classes: (0..10).collect(),
            sweep_kappa_bar: Vec::new(),
        };
        match experiment {
            Experiment::SweepSparsity => c.kappa_bar = vec![10.0, 25.0, 50.0, 75.0, 90.0, 95.0, 98.0],
            Experiment::VizMasks => c.kappa_bar = (1..=9).map(|k| 10.0 * k as f64).collect(),
            Experiment::AblateInit => c.set_optimizer(OptimizerKind::Adam),
            Experiment::RandomLabels => {
                c.model = ModelKind::Lenet5Caffe;
                c.kappa_bar = vec![99.0];
                c.iterations = 15_000;
                // lenet5caffe diverges within a few dozen steps at 0.1
                c.lr = LENET5_SGD_LR;
                c.sweep_kappa_bar = vec![99.0, 95.0, 90.0, 80.0];
            }
            Experiment::CriteriaCompare => c.kappa_bar = vec![98.0],
            _ => {}
        }
        c
    }

    fn set_optimizer(&mut self, kind: OptimizerKind) {
        let o = OptimizerConfig::for_kind(kind);
        self.optimizer = kind;
        self.lr = o.lr0;
        self.momentum = o.momentum;
        self.weight_decay = o.weight_decay;
        match o.schedule {
            Schedule::Constant => self.lr_decay = 1.0,
            Schedule::StepDecay { factor, every } => {
                self.lr_decay = factor;
                self.lr_decay_every = every;
            }
        }
    }

    /// Applies one `key = value` assignment. Setting `optimizer` resets the
    /// rate, momentum, decay and schedule to that optimizer's defaults, so it
    /// must precede any of those keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "experiment" => {
                let e: Experiment = v.parse()?;
                if e != self.experiment {
                    return Err(Error::Config(format!("config is for `{v}`, running `{}`", self.experiment.as_str())));
                }
            }
            "model" => self.model = v.parse()?,
            "dataset_dir" => self.dataset_dir = PathBuf::from(v),
            "images" => self.images = (!v.is_empty()).then(|| PathBuf::from(v)),
            "labels" => self.labels = (!v.is_empty()).then(|| PathBuf::from(v)),
            "checkpoint" => self.checkpoint = (!v.is_empty()).then(|| PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            "seed" => self.seed = parse_one("seed", v)?,
            "split_seed" => self.split_seed = parse_one("split_seed", v)?,
            "kappa_bar" => self.kappa_bar = parse_list("kappa_bar", v)?,
            "saliency_batch" => self.saliency_batch = parse_one("saliency_batch", v)?,
            "criterion" => self.criterion = v.parse()?,
            "init" => self.init = v.parse()?,
            "optimizer" => self.set_optimizer(v.parse()?),
            "lr" => self.lr = parse_one("lr", v)?,
            "momentum" => self.momentum = parse_one("momentum", v)?,
            "weight_decay" => self.weight_decay = parse_one("weight_decay", v)?,
            "lr_decay" => self.lr_decay = parse_one("lr_decay", v)?,
            "lr_decay_every" => self.lr_decay_every = parse_one("lr_decay_every", v)?,
            "iterations" => self.iterations = parse_one("iterations", v)?,
            "eval_every" => self.eval_every = parse_one("eval_every", v)?,
            "batch_size" => self.batch_size = parse_one("batch_size", v)?,
            "wall_clock" => self.wall_clock = parse_bool("wall_clock", v)?,
            "seeds" => self.seeds = parse_one("seeds", v)?,
            "batch_sizes" => self.batch_sizes = parse_list("batch_sizes", v)?,
            "classes" => self.classes = parse_list("classes", v)?,
            "sweep_kappa_bar" => self.sweep_kappa_bar = parse_list("sweep_kappa_bar", v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a config file body: `key = value` lines, `#` comments.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Every key, in an order [`apply_text`](Self::apply_text) accepts.
    pub fn to_text(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("experiment", self.experiment.as_str().into());
        kv("model", self.model.as_str().into());
        kv("dataset_dir", self.dataset_dir.display().to_string());
        kv("images", opt(&self.images));
        kv("labels", opt(&self.labels));
        kv("checkpoint", opt(&self.checkpoint));
        kv("out", self.out.display().to_string());
        kv("seed", self.seed.to_string());
        kv("split_seed", self.split_seed.to_string());
        kv("kappa_bar", join(&self.kappa_bar));
        kv("saliency_batch", self.saliency_batch.to_string());
        kv("criterion", self.criterion.to_string());
        kv("init", self.init.to_string());
        kv("optimizer", self.optimizer.as_str().into());
        kv("lr", self.lr.to_string());
        kv("momentum", self.momentum.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("lr_decay", self.lr_decay.to_string());
        kv("lr_decay_every", self.lr_decay_every.to_string());
        kv("iterations", self.iterations.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("wall_clock", self.wall_clock.to_string());
        kv("seeds", self.seeds.to_string());
        kv("batch_sizes", join(&self.batch_sizes));
        kv("classes", join(&self.classes));
        kv("sweep_kappa_bar", join(&self.sweep_kappa_bar));
        s
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        let base = OptimizerConfig::for_kind(self.optimizer);
        OptimizerConfig {
            lr0: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            schedule: if self.lr_decay == 1.0 {
                Schedule::Constant
            } else {
                Schedule::StepDecay { factor: self.lr_decay, every: self.lr_decay_every }
            },
            ..base
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            eval_every: self.eval_every,
            batch_size: self.batch_size,
            optimizer: self.optimizer_config(),
            wall_clock: self.wall_clock,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.kappa_bar.iter().any(|k| !(0.0..=100.0).contains(k)) || self.sweep_kappa_bar.iter().any(|k| !(0.0..=100.0).contains(k)) {
            return bad("kappa_bar values must lie in [0, 100]".into());
        }
        if self.kappa_bar.is_empty() {
            return bad("kappa_bar needs at least one value".into());
        }
        if self.saliency_batch == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return bad("saliency_batch, batch_size and eval_every must be positive".into());
        }
        if self.lr_decay_every == 0 {
            return bad("lr_decay_every must be positive".into());
        }
        if self.classes.iter().any(|&c| c > 9) {
            return bad("classes must lie in 0..=9".into());
        }
        if self.experiment == Experiment::AblateInit && self.seeds == 0 {
            return bad("ablate-init needs at least one seed".into());
        }
        Ok(())
    }

    pub fn write_echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(ECHO_FILE), self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        for e in Experiment::ALL {
            let mut c = ExperimentConfig::defaults(e);
            c.images = Some("x/y".into());
            c.kappa_bar = vec![12.5, 90.0];
            let mut back = ExperimentConfig::defaults(e);
            back.apply_text(&c.to_text()).unwrap();
            assert_eq!(back, c, "{}", e.as_str());
        }
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        let mut c = ExperimentConfig::defaults(Experiment::Train);
        assert!(matches!(c.apply_text("colour = red"), Err(Error::Config(_))));
        assert!(matches!(c.apply_text("seed = -3"), Err(Error::Config(_))));
        assert!(matches!(c.apply_text("just words"), Err(Error::Config(_))));
        assert!(matches!(c.apply_text("experiment = prune"), Err(Error::Config(_))));
        c.apply_text("# comment\n\nseed = 7  # trailing\n").unwrap();
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn optimizer_switch_resets_defaults() {
        let mut c = ExperimentConfig::defaults(Experiment::Train);
        c.apply_text("optimizer = adam").unwrap();
        let o = c.optimizer_config();
        assert_eq!((o.lr0, o.weight_decay, o.schedule), (0.001, 0.0, Schedule::Constant));
        assert_eq!(ExperimentConfig::defaults(Experiment::AblateInit).optimizer, OptimizerKind::Adam);
        let d = ExperimentConfig::defaults(Experiment::Train).optimizer_config();
        assert_eq!(d, OptimizerConfig::sgd());
    }
}

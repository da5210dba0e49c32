//! Experiment runners behind the command-line subcommands. Each runner writes
//! its files under `cfg.out` and returns the numbers it reported.
//!
//! Streams derived from `Rng::new(seed)`: `init` draws the weights,
//! `saliency` draws the saliency batch (and drives the random criterion),
//! `train` drives minibatch order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::checkpoint::{model_from_checkpoint, model_to_checkpoint, prune_summary_csv, report_to_checkpoint, Checkpoint};
use crate::config::{Experiment, ExperimentConfig};
use crate::data::{curate_class_batch, invert_images, load_idx, sample_batch, shuffle_labels, DataSplits, Dataset, MnistFiles};
use crate::error::{Error, Result};
use crate::init::InitMethod;
use crate::model::{build_model, Model, ModelKind, ModelSpec};
use crate::rng::Rng;
use crate::snip::{apply_masks, kappa_from_bar, saliency, top_kappa_mask, Criterion, PruneResult, SaliencyReport};
use crate::trainer::{evaluate, train, TrainData, TrainMetrics};
use crate::viz::{atlas, image_from_mask, mask_iou, pearson, pgm_bytes, write_pgm, MaskImage, SIDE};

/// Test error (%) per saliency batch size at κ̄ = 90 on LeNet-300-100.
pub const BATCH_SIZE_REFERENCE: [(usize, f64); 5] = [(1, 1.94), (10, 1.72), (100, 1.64), (1000, 1.56), (10000, 1.40)];

type MeanStd = (f64, f64);

/// Test error (%) mean and std per saliency initializer, LeNet-300-100 and
/// LeNet-5-Caffe, κ̄ = 90, 20 seeds.
pub const INIT_REFERENCE: [(InitMethod, MeanStd, MeanStd); 4] = [
    (InitMethod::RandomNormal, (1.90, 0.09), (0.89, 0.04)),
    (InitMethod::TruncatedNormal, (1.96, 0.11), (0.87, 0.05)),
    (InitMethod::VarianceScalingXavier, (1.91, 0.10), (0.88, 0.07)),
    (InitMethod::VarianceScalingHe, (1.88, 0.10), (0.85, 0.05)),
];

pub const FOREGROUND_HI: f64 = 0.1;
pub const FOREGROUND_LO: f64 = 0.01;

fn write(out: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(name), contents)?;
    Ok(())
}

/// Train/val/test splits. `images`/`labels` replace the training file pair.
/// Also creates the output directory.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<DataSplits> {
    fs::create_dir_all(&cfg.out)?;
    let mut files = MnistFiles::in_dir(&cfg.dataset_dir);
    match (&cfg.images, &cfg.labels) {
        (Some(i), Some(l)) => {
            files.train_images = i.clone();
            files.train_labels = l.clone();
        }
        (None, None) => {}
        _ => return Err(Error::Config("images and labels must be given together".into())),
    }
    DataSplits::load(&files, cfg.split_seed)
}

fn spec_for(cfg: &ExperimentConfig) -> Result<ModelSpec> {
    if cfg.model == ModelKind::Custom {
        return Err(Error::Config("custom models are library-only".into()));
    }
    Ok(ModelSpec::of_kind(cfg.model))
}

fn fresh(cfg: &ExperimentConfig, init: InitMethod, root: &Rng) -> Result<Model<f32>> {
    build_model(&spec_for(cfg)?, init, &root.derive("init"))
}

/// Saliency for `criterion` on a batch of `n` examples from `train`.
fn score(model: &Model<f32>, criterion: Criterion, train: &Dataset, n: usize, root: &Rng) -> Result<SaliencyReport> {
    let mut rng = root.derive("saliency");
    let batch = sample_batch::<f32>(train, n, &mut rng)?;
    saliency(model, criterion, Some(&batch), &mut rng)
}

fn select(report: &SaliencyReport, kappa_bar: f64) -> Result<(SaliencyReport, PruneResult)> {
    let mut r = report.clone();
    let kappa = kappa_from_bar(kappa_bar, r.len())?;
    let result = top_kappa_mask(&mut r, kappa)?;
    if let Some(sel) = r.selection.as_mut() {
        sel.kappa_bar = kappa_bar;
    }
    Ok((r, result))
}

fn masked(model: &Model<f32>, result: &PruneResult) -> Result<Model<f32>> {
    let mut m = model.clone();
    apply_masks(&mut m, result)?;
    Ok(m)
}

fn fit(model: &mut Model<f32>, train_set: &Dataset, splits: &DataSplits, cfg: &ExperimentConfig, root: &Rng) -> Result<TrainMetrics> {
    let data = TrainData { train: train_set, val: &splits.val, test: &splits.test };
    train(model, &data, &cfg.train_config(), &root.derive("train"))
}

fn fc1_image(result: &PruneResult) -> Result<MaskImage> {
    let mask = result.layer("fc1.weight").ok_or_else(|| Error::Config("mask images need lenet300".into()))?;
    image_from_mask(mask, mask.len() / crate::viz::PIXELS)
}

fn kb_tag(kb: f64) -> String {
    format!("{kb}").replace('.', "p")
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub model: Model<f32>,
    pub report: SaliencyReport,
    pub result: PruneResult,
}

/// `model.stf`, `saliency.stf`, `prune-summary.csv`.
pub fn run_prune(cfg: &ExperimentConfig) -> Result<PruneOutcome> {
    let splits = load_splits(cfg)?;
    let root = Rng::new(cfg.seed);
    let model = fresh(cfg, cfg.init, &root)?;
    let mut s = score(&model, cfg.criterion, &splits.train, cfg.saliency_batch, &root)?;
    s.seed = cfg.seed;
    let (report, result) = select(&s, cfg.kappa_bar[0])?;
    let model = masked(&model, &result)?;
    model_to_checkpoint(&model).write(&cfg.out.join("model.stf"))?;
    report_to_checkpoint(&report).write(&cfg.out.join("saliency.stf"))?;
    write(&cfg.out, "prune-summary.csv", prune_summary_csv(&result))?;
    Ok(PruneOutcome { model, report, result })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub metrics: TrainMetrics,
    pub test_err: f64,
}

/// Prunes a fresh model (skipped at κ̄ = 0) or resumes `checkpoint`, trains,
/// and writes `metrics.csv`, `final.stf` and `prune-summary.csv`.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let splits = load_splits(cfg)?;
    let root = Rng::new(cfg.seed);
    let mut model = match &cfg.checkpoint {
        Some(path) => model_from_checkpoint(&Checkpoint::read(path)?)?,
        None => {
            let m = fresh(cfg, cfg.init, &root)?;
            if cfg.kappa_bar[0] > 0.0 {
                let s = score(&m, cfg.criterion, &splits.train, cfg.saliency_batch, &root)?;
                let (report, result) = select(&s, cfg.kappa_bar[0])?;
                report_to_checkpoint(&report).write(&cfg.out.join("saliency.stf"))?;
                masked(&m, &result)?
            } else {
                m
            }
        }
    };
    write(&cfg.out, "prune-summary.csv", prune_summary_csv(&PruneResult::from_model(&model)))?;
    let metrics = fit(&mut model, &splits.train, &splits, cfg, &root)?;
    write(&cfg.out, "metrics.csv", metrics.to_csv())?;
    model_to_checkpoint(&model).write(&cfg.out.join("final.stf"))?;
    let test_err = metrics.last().map_or(f64::NAN, |r| r.test_err);
    Ok(TrainOutcome { model, metrics, test_err })
}

/// `(split, examples, error %)` for the checkpoint in `cfg.checkpoint`; with
/// `images`/`labels` set, that file pair is scored instead of the test set.
pub fn run_eval(cfg: &ExperimentConfig) -> Result<Vec<(String, usize, f64)>> {
    let path = cfg.checkpoint.as_ref().ok_or_else(|| Error::Config("eval needs a checkpoint".into()))?;
    fs::create_dir_all(&cfg.out)?;
    let model: Model<f32> = model_from_checkpoint(&Checkpoint::read(path)?)?;
    let sets: Vec<(String, Dataset)> = match (&cfg.images, &cfg.labels) {
        (Some(i), Some(l)) => vec![("custom".into(), load_idx(i, l)?)],
        (None, None) => {
            let s = DataSplits::load(&MnistFiles::in_dir(&cfg.dataset_dir), cfg.split_seed)?;
            vec![("val".into(), s.val), ("test".into(), s.test)]
        }
        _ => return Err(Error::Config("images and labels must be given together".into())),
    };
    let mut rows = Vec::new();
    let mut csv = String::from("split,examples,error\n");
    for (name, d) in sets {
        let err = evaluate(&model, &d)?;
        let _ = writeln!(csv, "{name},{},{err:.2}", d.len());
        rows.push((name, d.len(), err));
    }
    write(&cfg.out, "eval.csv", csv)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub kappa_bar: f64,
    pub retained: usize,
    pub val_err: f64,
    pub test_err: f64,
}

/// One saliency pass, one training run per κ̄. `sweep.csv` plus
/// `metrics-k<κ̄>.csv` per level.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let splits = load_splits(cfg)?;
    let root = Rng::new(cfg.seed);
    let model = fresh(cfg, cfg.init, &root)?;
    let s = score(&model, cfg.criterion, &splits.train, cfg.saliency_batch, &root)?;
    let mut rows = Vec::new();
    let mut csv = String::from("kappa_bar,retained,total,val_err,test_err\n");
    for &kb in &cfg.kappa_bar {
        let (_, result) = select(&s, kb)?;
        let mut m = masked(&model, &result)?;
        let metrics = fit(&mut m, &splits.train, &splits, cfg, &root)?;
        write(&cfg.out, &format!("metrics-k{}.csv", kb_tag(kb)), metrics.to_csv())?;
        let last = metrics.last().copied().ok_or_else(|| Error::State("no metrics".into()))?;
        let _ = writeln!(csv, "{kb},{},{},{:.2},{:.2}", result.retained(), result.len(), last.val_err, last.test_err);
        rows.push(SweepRow { kappa_bar: kb, retained: result.retained(), val_err: last.val_err, test_err: last.test_err });
        write(&cfg.out, "sweep.csv", &csv)?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VizRow {
    pub class: u8,
    pub kappa_bar: f64,
    pub fc1_density: f64,
    pub retention: f64,
}

/// Per-class saliency batches on LeNet-300-100; mask images per class and
/// κ̄, an atlas (rows κ̄, columns class) and `foreground.csv`.
pub fn run_viz(cfg: &ExperimentConfig) -> Result<Vec<VizRow>> {
    if cfg.model != ModelKind::Lenet300 {
        return Err(Error::Config(format!("viz-masks needs lenet300, got {}", cfg.model)));
    }
    let splits = load_splits(cfg)?;
    let root = Rng::new(cfg.seed);
    let model = fresh(cfg, cfg.init, &root)?;
    let mut rows = Vec::new();
    let mut tiles = vec![MaskImage { pixels: vec![0.0; SIDE * SIDE] }; cfg.kappa_bar.len() * cfg.classes.len()];
    let mut csv = String::from("class,kappa_bar,fc1_density,foreground_retention\n");
    for (ci, &class) in cfg.classes.iter().enumerate() {
        let mut rng = root.derive(&format!("class-{class}"));
        let batch = curate_class_batch::<f32>(&splits.train, class as usize, cfg.saliency_batch, &mut rng)?;
        let s = saliency(&model, cfg.criterion, Some(&batch), &mut rng)?;
        let class_mean = splits.train.mean_image(Some(class));
        for (ki, &kb) in cfg.kappa_bar.iter().enumerate() {
            let (_, result) = select(&s, kb)?;
            let img = fc1_image(&result)?;
            let retention = crate::viz::foreground_retention(&img, &class_mean, FOREGROUND_HI, FOREGROUND_LO)?;
            write_pgm(&img, &cfg.out.join(format!("mask-c{class}-k{}.pgm", kb_tag(kb))))?;
            let _ = writeln!(csv, "{class},{kb},{:.6},{retention:.4}", img.mean());
            rows.push(VizRow { class, kappa_bar: kb, fc1_density: img.mean(), retention });
            tiles[ki * cfg.classes.len() + ci] = img;
        }
    }
    let (gr, gc) = (cfg.kappa_bar.len(), cfg.classes.len());
    write(&cfg.out, "atlas.pgm", pgm_bytes(&atlas(&tiles, gr, gc), gr * SIDE, gc * SIDE)?)?;
    write(&cfg.out, "foreground.csv", csv)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSizeRow {
    pub batch_size: usize,
    pub retained: usize,
    pub mean_image_corr: f64,
    pub test_err: f64,
}

/// One prune-and-train run per saliency batch size at `kappa_bar[0]`.
pub fn run_ablate_batch_size(cfg: &ExperimentConfig) -> Result<Vec<BatchSizeRow>> {
    let splits = load_splits(cfg)?;
    let root = Rng::new(cfg.seed);
    let model = fresh(cfg, cfg.init, &root)?;
    let train_mean = splits.train.mean_image(None);
    let kb = cfg.kappa_bar[0];
    let mut csv = String::from("# reference test error (%), lenet300, kappa_bar 90:");
    for (n, e) in BATCH_SIZE_REFERENCE {
        let _ = write!(csv, " {n}={e:.2}");
    }
    csv.push_str("\nbatch_size,kappa_bar,retained,mean_image_corr,test_err\n");
    let mut rows = Vec::new();
    for &n in &cfg.batch_sizes {
        let s = score(&model, cfg.criterion, &splits.train, n, &root.derive(&format!("batch-{n}")))?;
        let (_, result) = select(&s, kb)?;
        let corr = match fc1_image(&result) {
            Ok(img) => {
                write_pgm(&img, &cfg.out.join(format!("mask-b{n}.pgm")))?;
                pearson(&img.pixels, &train_mean)
            }
            Err(_) => f64::NAN,
        };
        let mut m = masked(&model, &result)?;
        let metrics = fit(&mut m, &splits.train, &splits, cfg, &root)?;
        let test_err = metrics.last().map_or(f64::NAN, |r| r.test_err);
        let _ = writeln!(csv, "{n},{kb},{},{corr:.4},{test_err:.2}", result.retained());
        rows.push(BatchSizeRow { batch_size: n, retained: result.retained(), mean_image_corr: corr, test_err });
    }
    write(&cfg.out, "ablate-batch-size.csv", csv)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitRow {
    pub init: InitMethod,
    pub seeds: Vec<u64>,
    pub errors: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Saliency at each initializer, then training from fresh VS-X weights under
/// the same mask. Seeds are `seed, seed+1, ...`.
pub fn run_ablate_init(cfg: &ExperimentConfig) -> Result<Vec<InitRow>> {
    let splits = load_splits(cfg)?;
    let kb = cfg.kappa_bar[0];
    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|i| cfg.seed + i).collect();
    let mut csv = format!("# reference test error (%), kappa_bar 90, 20 seeds ({}):", cfg.model);
    for (init, l300, l5) in INIT_REFERENCE {
        let (m, s) = if cfg.model == ModelKind::Lenet5Caffe { l5 } else { l300 };
        let _ = write!(csv, " {init}={m:.2}±{s:.2}");
    }
    let _ = write!(csv, "\n# seeds: {}\ninit,kappa_bar,seeds,mean_test_err,std_test_err,summary,per_seed\n", seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";"));
    let mut rows = Vec::new();
    for init in InitMethod::ALL {
        let mut errors = Vec::new();
        for &seed in &seeds {
            let root = Rng::new(seed);
            let model = build_model(&spec_for(cfg)?, init, &root.derive(&format!("init-{init}")))?;
            let s = score(&model, cfg.criterion, &splits.train, cfg.saliency_batch, &root)?;
            let (_, result) = select(&s, kb)?;
            let mut m = masked(&model, &result)?.reinitialized(InitMethod::VarianceScalingXavier, &root.derive("init"))?;
            let metrics = fit(&mut m, &splits.train, &splits, cfg, &root)?;
            errors.push(metrics.last().map_or(f64::NAN, |r| r.test_err));
        }
        let (mean, std) = mean_std(&errors);
        let per_seed = errors.iter().map(|e| format!("{e:.2}")).collect::<Vec<_>>().join(";");
        let _ = writeln!(csv, "{init},{kb},{},{mean:.2},{std:.2},{mean:.2}±{std:.2},{per_seed}", seeds.len());
        rows.push(InitRow { init, seeds: seeds.clone(), errors, mean, std });
    }
    write(&cfg.out, "ablate-init.csv", csv)?;
    Ok(rows)
}

pub const CURVES: [&str; 5] = ["reference-true", "pruned-true", "reference-random", "reference-random-l2", "pruned-random"];

#[derive(Debug, Clone)]
pub struct RandomLabelsOutcome {
    /// `(curve, metrics)` in [`CURVES`] order.
    pub curves: Vec<(String, TrainMetrics)>,
    /// `(κ̄, final random-label train loss)` in `sweep_kappa_bar` order.
    pub sweep: Vec<(f64, f64)>,
}

impl RandomLabelsOutcome {
    pub fn final_loss(&self, curve: &str) -> Option<f64> {
        self.curves.iter().find(|(c, _)| c == curve).and_then(|(_, m)| m.last()).map(|r| r.train_loss)
    }
}

/// Five loss curves (true or shuffled labels, dense or pruned at
/// `kappa_bar[0]`), plus final random-label losses over `sweep_kappa_bar`.
/// Saliency always uses true labels. Only `reference-random-l2` keeps
/// `weight_decay`; the others train without it.
pub fn run_random_labels(cfg: &ExperimentConfig) -> Result<RandomLabelsOutcome> {
    let splits = load_splits(cfg)?;
    let root = Rng::new(cfg.seed);
    let random = shuffle_labels(&splits.train, &mut root.derive("labels"));
    let dense = fresh(cfg, cfg.init, &root)?;
    let s = score(&dense, Criterion::Snip, &splits.train, cfg.saliency_batch, &root)?;
    let mut plain = cfg.clone();
    plain.weight_decay = 0.0;
    let kb = cfg.kappa_bar[0];
    let pruned = masked(&dense, &select(&s, kb)?.1)?;

    let mut curves_csv = String::from("curve,iter,train_loss\n");
    let mut summary = String::from("curve,kappa_bar,weight_decay,final_train_loss,final_test_err\n");
    let mut curves = Vec::new();
    for name in CURVES {
        let (start, data, c) = match name {
            "reference-true" => (&dense, &splits.train, &plain),
            "pruned-true" => (&pruned, &splits.train, &plain),
            "reference-random" => (&dense, &random, &plain),
            "reference-random-l2" => (&dense, &random, cfg),
            _ => (&pruned, &random, &plain),
        };
        let mut m = start.clone();
        let metrics = fit(&mut m, data, &splits, c, &root)?;
        for r in &metrics.rows {
            let _ = writeln!(curves_csv, "{name},{},{:.6}", r.iter, r.train_loss);
        }
        let last = metrics.last().copied().ok_or_else(|| Error::State("no metrics".into()))?;
        let ckb = if name.starts_with("pruned") { kb } else { 0.0 };
        let _ = writeln!(summary, "{name},{ckb},{},{:.6},{:.2}", c.weight_decay, last.train_loss, last.test_err);
        curves.push((name.to_string(), metrics));
        write(&cfg.out, "curves.csv", &curves_csv)?;
        write(&cfg.out, "random-labels.csv", &summary)?;
    }

    let mut sweep = Vec::new();
    let mut sweep_csv = String::from("kappa_bar,final_train_loss\n");
    let pruned_random = curves[4].1.last().map(|r| r.train_loss);
    for &skb in &cfg.sweep_kappa_bar {
        let loss = match pruned_random {
            Some(l) if skb == kb => l,
            _ => {
                let mut m = masked(&dense, &select(&s, skb)?.1)?;
                let metrics = fit(&mut m, &random, &splits, &plain, &root)?;
                write(&cfg.out, &format!("metrics-random-k{}.csv", kb_tag(skb)), metrics.to_csv())?;
                metrics.last().map_or(f64::NAN, |r| r.train_loss)
            }
        };
        let _ = writeln!(sweep_csv, "{skb},{loss:.6}");
        sweep.push((skb, loss));
        write(&cfg.out, "random-labels-sweep.csv", &sweep_csv)?;
    }
    Ok(RandomLabelsOutcome { curves, sweep })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertOutcome {
    pub iou_inverted: f64,
    pub iou_grad_magnitude: f64,
    /// `d / (2 − d)` for two independent masks of the same density.
    pub random_baseline: f64,
}

/// Masks from the same weights and examples, with pixels kept or inverted,
/// and the `∂L/∂w` mask on the original batch.
pub fn run_invert_compare(cfg: &ExperimentConfig) -> Result<InvertOutcome> {
    let splits = load_splits(cfg)?;
    let root = Rng::new(cfg.seed);
    let model = fresh(cfg, cfg.init, &root)?;
    let kb = cfg.kappa_bar[0];
    let inverted = invert_images(&splits.train);
    let original = score(&model, Criterion::Snip, &splits.train, cfg.saliency_batch, &root)?;
    let flipped = score(&model, Criterion::Snip, &inverted, cfg.saliency_batch, &root)?;
    let grad = score(&model, Criterion::GradMagnitude, &splits.train, cfg.saliency_batch, &root)?;
    let (_, a) = select(&original, kb)?;
    let (_, b) = select(&flipped, kb)?;
    let (_, c) = select(&grad, kb)?;
    let d = a.retained() as f64 / a.len().max(1) as f64;
    let out = InvertOutcome { iou_inverted: mask_iou(&a, &b)?, iou_grad_magnitude: mask_iou(&a, &c)?, random_baseline: d / (2.0 - d) };
    for (tag, r) in [("original", &a), ("inverted", &b), ("grad-magnitude", &c)] {
        if let Ok(img) = fc1_image(r) {
            write_pgm(&img, &cfg.out.join(format!("mask-{tag}.pgm")))?;
        }
    }
    write(
        &cfg.out,
        "invert-compare.csv",
        format!(
            "comparison,kappa_bar,iou\noriginal-vs-inverted,{kb},{:.4}\nsnip-vs-grad_magnitude,{kb},{:.4}\nindependent-random,{kb},{:.4}\n",
            out.iou_inverted, out.iou_grad_magnitude, out.random_baseline
        ),
    )?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriteriaOutcome {
    /// `(criterion, κ̄, test error %)`.
    pub errors: Vec<(Criterion, f64, f64)>,
    /// `(a, b, κ̄, IoU)` for every unordered pair, self-pairs included.
    pub ious: Vec<(Criterion, Criterion, f64, f64)>,
}

impl CriteriaOutcome {
    pub fn error(&self, c: Criterion, kb: f64) -> Option<f64> {
        self.errors.iter().find(|e| e.0 == c && e.1 == kb).map(|e| e.2)
    }

    pub fn iou(&self, a: Criterion, b: Criterion, kb: f64) -> Option<f64> {
        self.ious.iter().find(|e| ((e.0, e.1) == (a, b) || (e.0, e.1) == (b, a)) && e.2 == kb).map(|e| e.3)
    }
}

/// All four criteria from the same weights and saliency batch; one training
/// run per criterion and κ̄.
pub fn run_criteria_compare(cfg: &ExperimentConfig) -> Result<CriteriaOutcome> {
    let splits = load_splits(cfg)?;
    let root = Rng::new(cfg.seed);
    let model = fresh(cfg, cfg.init, &root)?;
    let mut errors = Vec::new();
    let mut ious = Vec::new();
    let mut csv = String::from("criterion,kappa_bar,retained,test_err\n");
    let mut iou_csv = String::from("a,b,kappa_bar,iou\n");
    let reports: Vec<SaliencyReport> =
        Criterion::ALL.iter().map(|&c| score(&model, c, &splits.train, cfg.saliency_batch, &root)).collect::<Result<_>>()?;
    for &kb in &cfg.kappa_bar {
        let masks: Vec<PruneResult> = reports.iter().map(|r| select(r, kb).map(|x| x.1)).collect::<Result<_>>()?;
        for (i, a) in Criterion::ALL.iter().enumerate() {
            for (j, b) in Criterion::ALL.iter().enumerate().skip(i) {
                let v = mask_iou(&masks[i], &masks[j])?;
                let _ = writeln!(iou_csv, "{a},{b},{kb},{v:.4}");
                ious.push((*a, *b, kb, v));
            }
        }
        for (c, result) in Criterion::ALL.iter().zip(&masks) {
            let mut m = masked(&model, result)?;
            let metrics = fit(&mut m, &splits.train, &splits, cfg, &root)?;
            write(&cfg.out, &format!("metrics-{c}-k{}.csv", kb_tag(kb)), metrics.to_csv())?;
            let err = metrics.last().map_or(f64::NAN, |r| r.test_err);
            let _ = writeln!(csv, "{c},{kb},{},{err:.2}", result.retained());
            errors.push((*c, kb, err));
            write(&cfg.out, "criteria.csv", &csv)?;
        }
    }
    write(&cfg.out, "criteria-iou.csv", iou_csv)?;
    Ok(CriteriaOutcome { errors, ious })
}

/// Validates, writes `config-echo.txt`, runs the experiment and returns a
/// short human-readable summary.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    cfg.write_echo(&cfg.out)?;
    let mut s = String::new();
    match cfg.experiment {
        Experiment::Prune => {
            let o = run_prune(cfg)?;
            let _ = write!(s, "retained {} of {} ({:.2}% pruned)", o.result.retained(), o.result.len(), 100.0 * (1.0 - o.result.retained() as f64 / o.result.len() as f64));
        }
        Experiment::Train => {
            let o = run_train(cfg)?;
            let _ = write!(s, "test error {:.2}% after {} steps", o.test_err, o.model.steps);
        }
        Experiment::Eval => {
            for (name, n, err) in run_eval(cfg)? {
                let _ = writeln!(s, "{name}: {err:.2}% error over {n} examples");
            }
        }
        Experiment::SweepSparsity => {
            for r in run_sweep(cfg)? {
                let _ = writeln!(s, "kappa_bar {}: test error {:.2}%", r.kappa_bar, r.test_err);
            }
        }
        Experiment::VizMasks => {
            let rows = run_viz(cfg)?;
            let min = rows.iter().map(|r| r.retention).fold(f64::INFINITY, f64::min);
            let _ = write!(s, "{} mask images, minimum foreground retention {min:.2}", rows.len());
        }
        Experiment::AblateBatchSize => {
            for r in run_ablate_batch_size(cfg)? {
                let _ = writeln!(s, "batch {}: test error {:.2}%, mean-image correlation {:.4}", r.batch_size, r.test_err, r.mean_image_corr);
            }
        }
        Experiment::AblateInit => {
            for r in run_ablate_init(cfg)? {
                let _ = writeln!(s, "{}: {:.2}±{:.2}%", r.init, r.mean, r.std);
            }
        }
        Experiment::RandomLabels => {
            let o = run_random_labels(cfg)?;
            for c in CURVES {
                let _ = writeln!(s, "{c}: final train loss {:.4}", o.final_loss(c).unwrap_or(f64::NAN));
            }
            for (kb, l) in &o.sweep {
                let _ = writeln!(s, "random labels at kappa_bar {kb}: {l:.4}");
            }
        }
        Experiment::InvertCompare => {
            let o = run_invert_compare(cfg)?;
            let _ = write!(s, "IoU inverted {:.4}, grad_magnitude {:.4}, random baseline {:.4}", o.iou_inverted, o.iou_grad_magnitude, o.random_baseline);
        }
        Experiment::CriteriaCompare => {
            for (c, kb, e) in run_criteria_compare(cfg)?.errors {
                let _ = writeln!(s, "{c} at kappa_bar {kb}: test error {e:.2}%");
            }
        }
    }
    Ok(s.trim_end().to_string())
}

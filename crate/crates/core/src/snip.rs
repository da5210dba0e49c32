//! Connection sensitivity, global top-κ selection and single-shot pruning.

use std::fmt;
use std::str::FromStr;

use crate::data::{sample_batch, Batch, Dataset};
use crate::error::{Error, Result};
use crate::model::{GradMode, Model};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Criterion {
    /// `|w ⊙ ∂L/∂w|`, the derivative with respect to the mask at `c = 1`.
    Snip,
    /// `|w|` at initialization.
    Magnitude,
    /// `|∂L/∂w|`.
    GradMagnitude,
    /// A seeded random permutation; a control.
    Random,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [Criterion::Snip, Criterion::Magnitude, Criterion::GradMagnitude, Criterion::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Snip => "snip",
            Criterion::Magnitude => "magnitude",
            Criterion::GradMagnitude => "grad_magnitude",
            Criterion::Random => "random",
        }
    }

    pub fn needs_batch(self) -> bool {
        matches!(self, Criterion::Snip | Criterion::GradMagnitude)
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "snip" => Ok(Criterion::Snip),
            "magnitude" => Ok(Criterion::Magnitude),
            "grad_magnitude" => Ok(Criterion::GradMagnitude),
            "random" => Ok(Criterion::Random),
            _ => Err(Error::Config(format!("unknown criterion `{s}` (snip|magnitude|grad_magnitude|random)"))),
        }
    }
}

/// Normalized scores of one prunable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamScores {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Threshold and budget fixed by a top-κ selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub kappa: usize,
    pub kappa_bar: f64,
    /// Score of the κ-th retained entry; `+inf` when nothing is kept.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyReport {
    pub criterion: Criterion,
    /// One entry per prunable parameter, in declaration order. Scores sum to 1.
    pub scores: Vec<ParamScores>,
    /// Size of the batch the scores were computed on; 0 for data-free criteria.
    pub batch_size: usize,
    pub seed: u64,
    pub selection: Option<Selection>,
}

impl SaliencyReport {
    pub fn len(&self) -> usize {
        self.scores.iter().map(|p| p.values.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total(&self) -> f64 {
        self.scores.iter().flat_map(|p| &p.values).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.scores.iter().flat_map(|p| p.values.iter().copied()).collect()
    }
}

/// Binary masks for the prunable parameters, aligned with the report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneResult {
    pub names: Vec<String>,
    pub masks: Vec<Vec<bool>>,
}

impl PruneResult {
    pub fn retained(&self) -> usize {
        self.masks.iter().map(|m| m.iter().filter(|&&k| k).count()).sum()
    }

    pub fn len(&self) -> usize {
        self.masks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(name, retained, total)` per parameter.
    pub fn per_layer(&self) -> Vec<(String, usize, usize)> {
        self.names
            .iter()
            .zip(&self.masks)
            .map(|(n, m)| (n.clone(), m.iter().filter(|&&k| k).count(), m.len()))
            .collect()
    }

    pub fn layer(&self, name: &str) -> Option<&[bool]> {
        self.names.iter().position(|n| n == name).map(|i| self.masks[i].as_slice())
    }

    pub fn flat(&self) -> impl Iterator<Item = bool> + '_ {
        self.masks.iter().flat_map(|m| m.iter().copied())
    }

    /// Current masks of a model's prunable parameters.
    pub fn from_model<T: Real>(model: &Model<T>) -> Self {
        let (names, masks) = model
            .params
            .iter()
            .filter(|p| p.prunable)
            .map(|p| (p.name.clone(), p.mask.data().iter().map(|&c| c != T::zero()).collect()))
            .unzip();
        PruneResult { names, masks }
    }
}

/// Retained count for sparsity `κ̄` percent over `m` entries, rounded half up.
pub fn kappa_from_bar(kappa_bar: f64, m: usize) -> Result<usize> {
    if !(0.0..=100.0).contains(&kappa_bar) {
        return Err(Error::Domain(format!("sparsity level must lie in [0, 100], got {kappa_bar}")));
    }
    let exact = (100.0 - kappa_bar) * m as f64 / 100.0;
    // the small slack keeps e.g. 10% of 266,200 from landing a hair below .5
    let kappa = (exact + 0.5 + 1e-9).floor() as usize;
    Ok(kappa.min(m))
}

fn require_fresh<T: Real>(model: &Model<T>) -> Result<()> {
    if model.steps != 0 {
        return Err(Error::State(format!("saliency must be computed before training; model has taken {} steps", model.steps)));
    }
    if !model.masks_all_ones() {
        return Err(Error::State("saliency expects all-ones masks".into()));
    }
    Ok(())
}

fn normalize<T: Real>(model: &Model<T>, raw: Vec<Vec<f64>>, criterion: Criterion, batch_size: usize, seed: u64) -> Result<SaliencyReport> {
    let total: f64 = raw.iter().flatten().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::DegenerateSaliency(format!("{criterion} scores sum to {total}")));
    }
    let scores = model
        .params
        .iter()
        .filter(|p| p.prunable)
        .zip(raw)
        .map(|(p, vals)| ParamScores {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            values: vals.into_iter().map(|v| v / total).collect(),
        })
        .collect();
    Ok(SaliencyReport { criterion, scores, batch_size, seed, selection: None })
}

/// `∂L/∂w` for every prunable parameter, from one forward-backward pass.
fn weight_gradients<T: Real>(model: &Model<T>, batch: &Batch<T>) -> Result<Vec<Tensor<T>>> {
    let mut lg = model.forward(batch, GradMode::Weights)?;
    let grads = lg.backward()?;
    Ok(model.params.iter().zip(grads.weights).filter(|(p, _)| p.prunable).map(|(_, g)| g).collect())
}

/// `g = ∂L/∂c` at `c = 1`, computed as `w ⊙ ∂L/∂w`.
pub fn mask_gradients<T: Real>(model: &Model<T>, batch: &Batch<T>) -> Result<Vec<Tensor<T>>> {
    let grads = weight_gradients(model, batch)?;
    model
        .params
        .iter()
        .filter(|p| p.prunable)
        .zip(grads)
        .map(|(p, g)| p.value.zip_map(&g, |w, d| w * d))
        .collect()
}

/// `∂L/∂c` through explicit mask leaves in the graph; the cross-check for
/// [`mask_gradients`].
pub fn mask_gradients_explicit<T: Real>(model: &Model<T>, batch: &Batch<T>) -> Result<Vec<Tensor<T>>> {
    let mut lg = model.forward(batch, GradMode::WeightsAndMasks)?;
    let grads = lg.backward()?;
    Ok(grads.masks.into_iter().flatten().collect())
}

/// Normalized connection sensitivity `s_j = |g_j| / Σ_k |g_k|`.
pub fn connection_sensitivity<T: Real>(model: &Model<T>, batch: &Batch<T>) -> Result<SaliencyReport> {
    require_fresh(model)?;
    let g = mask_gradients(model, batch)?;
    let raw = g.iter().map(|t| t.data().iter().map(|v| v.as_f64().abs()).collect()).collect();
    normalize(model, raw, Criterion::Snip, batch.len(), 0)
}

/// Scores for any criterion. `batch` is required by `snip` and
/// `grad_magnitude`; `rng` drives `random`.
pub fn saliency<T: Real>(model: &Model<T>, criterion: Criterion, batch: Option<&Batch<T>>, rng: &mut Rng) -> Result<SaliencyReport> {
    require_fresh(model)?;
    let need_batch = || batch.ok_or_else(|| Error::Config(format!("criterion {criterion} needs a batch")));
    let (raw, batch_size): (Vec<Vec<f64>>, usize) = match criterion {
        Criterion::Snip => return connection_sensitivity(model, need_batch()?),
        Criterion::GradMagnitude => {
            let b = need_batch()?;
            let g = weight_gradients(model, b)?;
            (g.iter().map(|t| t.data().iter().map(|v| v.as_f64().abs()).collect()).collect(), b.len())
        }
        Criterion::Magnitude => (
            model
                .params
                .iter()
                .filter(|p| p.prunable)
                .map(|p| p.value.data().iter().map(|v| v.as_f64().abs()).collect())
                .collect(),
            0,
        ),
        Criterion::Random => {
            let m = model.prunable_count();
            let perm = rng.permutation(m);
            let mut it = perm.into_iter().map(|r| (r + 1) as f64);
            (
                model
                    .params
                    .iter()
                    .filter(|p| p.prunable)
                    .map(|p| it.by_ref().take(p.len()).collect())
                    .collect(),
                0,
            )
        }
    };
    normalize(model, raw, criterion, batch_size, rng.seed())
}

/// Alias for the data-free and gradient-only baselines.
pub fn baseline_saliency<T: Real>(model: &Model<T>, criterion: Criterion, batch: Option<&Batch<T>>, rng: &mut Rng) -> Result<SaliencyReport> {
    if criterion == Criterion::Snip {
        return Err(Error::Config("snip is not a baseline criterion".into()));
    }
    saliency(model, criterion, batch, rng)
}

/// Keeps exactly `kappa` entries by descending score. Ties go to the earlier
/// parameter, then the lower flat index.
pub fn top_kappa_mask(report: &mut SaliencyReport, kappa: usize) -> Result<PruneResult> {
    let flat = report.flat();
    let m = flat.len();
    if kappa > m {
        return Err(Error::Domain(format!("kappa {kappa} exceeds the {m} prunable entries")));
    }
    let mut keep = vec![false; m];
    let mut threshold = f64::INFINITY;
    if kappa > 0 {
        let mut order: Vec<usize> = (0..m).collect();
        let by_rank = |&a: &usize, &b: &usize| flat[b].total_cmp(&flat[a]).then(a.cmp(&b));
        if kappa < m {
            order.select_nth_unstable_by(kappa - 1, by_rank);
        }
        let top = &mut order[..kappa];
        top.sort_unstable_by(by_rank);
        threshold = flat[top[kappa - 1]];
        for &j in top.iter() {
            keep[j] = true;
        }
    }
    let mut masks = Vec::with_capacity(report.scores.len());
    let mut offset = 0;
    for p in &report.scores {
        masks.push(keep[offset..offset + p.values.len()].to_vec());
        offset += p.values.len();
    }
    report.selection = Some(Selection {
        kappa,
        kappa_bar: if m == 0 { 0.0 } else { (m - kappa) as f64 / m as f64 * 100.0 },
        threshold,
    });
    Ok(PruneResult { names: report.scores.iter().map(|p| p.name.clone()).collect(), masks })
}

/// Installs masks on the matching prunable parameters and zeroes the removed
/// weights.
pub fn apply_masks<T: Real>(model: &mut Model<T>, result: &PruneResult) -> Result<()> {
    let prunable: Vec<usize> = (0..model.params.len()).filter(|&i| model.params[i].prunable).collect();
    if prunable.len() != result.masks.len() {
        return Err(Error::shape(format!(
            "{} masks for {} prunable parameters",
            result.masks.len(),
            prunable.len()
        )));
    }
    for ((&i, name), mask) in prunable.iter().zip(&result.names).zip(&result.masks) {
        let p = &mut model.params[i];
        if &p.name != name {
            return Err(Error::shape(format!("mask for `{name}` offered to `{}`", p.name)));
        }
        p.apply_mask(mask)?;
    }
    Ok(())
}

/// Scores `model` on `batch` with `criterion`, keeps the top `κ` for `kappa_bar`
/// and applies the masks in place.
pub fn prune_with<T: Real>(
    model: &mut Model<T>,
    criterion: Criterion,
    batch: Option<&Batch<T>>,
    kappa_bar: f64,
    rng: &mut Rng,
) -> Result<(SaliencyReport, PruneResult)> {
    let kappa = kappa_from_bar(kappa_bar, model.prunable_count())?;
    let mut report = saliency(model, criterion, batch, rng)?;
    let result = top_kappa_mask(&mut report, kappa)?;
    if let Some(sel) = report.selection.as_mut() {
        sel.kappa_bar = kappa_bar;
    }
    apply_masks(model, &result)?;
    Ok((report, result))
}

/// Single-shot pruning: sample one training batch of `saliency_batch`
/// examples, score every connection by sensitivity and keep the top κ.
pub fn snip_prune<T: Real>(
    model: &mut Model<T>,
    train: &Dataset,
    kappa_bar: f64,
    saliency_batch: usize,
    rng: &mut Rng,
) -> Result<(SaliencyReport, PruneResult)> {
    require_fresh(model)?;
    let batch = sample_batch::<T>(train, saliency_batch, rng)?;
    let (mut report, result) = prune_with(model, Criterion::Snip, Some(&batch), kappa_bar, rng)?;
    report.seed = rng.seed();
    Ok((report, result))
}

/// `(L(1 ⊙ w) − L((1 − δe_j) ⊙ w)) / δ` for every prunable entry, in flat
/// order, together with the number of forward passes spent (`m + 1`).
pub fn delta_loss_bruteforce<T: Real>(model: &Model<T>, batch: &Batch<T>, delta: f64) -> Result<(Vec<f64>, usize)> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1], got {delta}")));
    }
    let base = model.loss(batch)?.as_f64();
    let mut passes = 1;
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(model.prunable_count());
    for i in 0..probe.params.len() {
        if !probe.params[i].prunable {
            continue;
        }
        for j in 0..probe.params[i].len() {
            let c = probe.params[i].mask.data()[j];
            probe.params[i].mask.data_mut()[j] = c * T::of_f64(1.0 - delta);
            let l = probe.loss(batch)?.as_f64();
            passes += 1;
            probe.params[i].mask.data_mut()[j] = c;
            out.push((base - l) / delta);
        }
    }
    Ok((out, passes))
}

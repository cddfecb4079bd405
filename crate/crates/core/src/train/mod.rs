//! Optimizer, learning-rate schedule, masking, training loops and metrics.
//!
//! Every loop is driven by one seeded generator. For each micro-batch the
//! sample indices and per-sample seeds are drawn sequentially; the samples
//! are then run in parallel and their gradients summed in sample order, so a
//! run is bitwise reproducible for a given seed whatever the thread count.

mod mask;
mod metrics;
mod optim;
mod schedule;

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use mask::{MaskMode, MaskPlan};
pub use metrics::{
    classification_metrics, f_beta, regression_metrics, ClassMetrics, ClassificationMetrics, MetricsReport,
    RegressionMetrics,
};
pub use optim::{AdamW, AdamWConfig};
pub use schedule::LrSchedule;

use crate::error::{config_err, Error, Result};
use crate::model::Fome;
use crate::preprocess::PatchGrid;
use crate::signal::Gaussian;
use crate::spectral::{band_powers, BandPowerTensor, BandScheme};
use crate::tensor::{Graph, ParameterStore, Tensor, Var};

/// Which slots the reconstruction loss covers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScope {
    #[default]
    MaskedOnly,
    All,
}

/// What fine-tuning updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinetuneMode {
    /// Only the task head; the backbone stays frozen.
    Probe,
    /// Backbone and task head.
    #[default]
    Full,
}

impl std::str::FromStr for FinetuneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probe" => Ok(Self::Probe),
            "full" => Ok(Self::Full),
            _ => Err(config_err(format!("unknown fine-tune mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mask_ratio: f64,
    pub mask_mode: MaskMode,
    pub patches_per_sample: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub adamw: AdamWConfig,
    pub lr: LrSchedule,
    /// Optimizer steps to run.
    pub steps: usize,
    pub seed: u64,
    pub loss_scope: LossScope,
    /// Checkpoint cadence in optimizer steps; 0 disables.
    pub checkpoint_every: usize,
    /// Validation cadence in optimizer steps; 0 evaluates only at the end.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let lr = LrSchedule::default();
        Self {
            mask_ratio: 0.40,
            mask_mode: MaskMode::Slot,
            patches_per_sample: 15,
            batch_size: 12,
            grad_accum: 4,
            adamw: AdamWConfig::default(),
            steps: lr.total_steps,
            lr,
            seed: 0,
            loss_scope: LossScope::MaskedOnly,
            checkpoint_every: 500,
            eval_every: 500,
        }
    }
}

impl TrainConfig {
    /// Defaults with the schedule compressed to `steps` optimizer steps.
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            lr: LrSchedule::scaled(steps),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(config_err(format!("mask ratio {} outside (0, 1)", self.mask_ratio)));
        }
        if self.batch_size == 0 || self.grad_accum == 0 || self.patches_per_sample == 0 {
            return Err(config_err("batch size, accumulation and sample length must be positive"));
        }
        self.lr.validate()
    }
}

/// One model input: a patch grid and its band powers.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub grid: PatchGrid,
    pub bands: BandPowerTensor,
}

impl Sample {
    /// Computes band powers with the default eight-band scheme.
    pub fn new(grid: PatchGrid) -> Result<Self> {
        let bands = band_powers(&grid, &BandScheme::default())?;
        Ok(Self { grid, bands })
    }

    /// Cuts a long grid into samples of `patches` patches each, dropping the remainder.
    pub fn chunk(grid: &PatchGrid, patches: usize) -> Result<Vec<Self>> {
        if patches == 0 {
            return Err(config_err("sample length must be positive"));
        }
        (0..grid.patches() / patches)
            .map(|i| Self::new(grid.slice_patches(i * patches, patches)?))
            .collect()
    }
}

/// One optimizer step of a loss trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Target tensor `[C, P, L]` of a grid.
fn grid_tensor(grid: &PatchGrid) -> Result<Tensor> {
    Tensor::new([grid.channels(), grid.patches(), grid.patch_len()], grid.values().to_vec())
}

fn slot_weights(grid: &PatchGrid, slots: &[(usize, usize)]) -> Tensor {
    let (p, l) = (grid.patches(), grid.patch_len());
    let mut w = Tensor::zeros([grid.channels(), p, l]);
    for &(c, q) in slots {
        let start = (c * p + q) * l;
        w.data_mut()[start..start + l].fill(1.0);
    }
    w
}

/// Masked-reconstruction loss for one sample: encode with `plan` masked,
/// reconstruct every slot and take the MSE over the masked slots (or all).
pub fn masked_reconstruction_loss(
    model: &Fome,
    g: &mut Graph,
    sample: &Sample,
    plan: &MaskPlan,
    scope: LossScope,
    dropout: Option<&mut Gaussian>,
) -> Result<Var> {
    let enc = model.encode(g, &sample.grid, &sample.bands, plan.slots(), dropout)?;
    let rec = model.reconstruct(g, enc.output)?;
    let target = grid_tensor(&sample.grid)?;
    match scope {
        LossScope::All => g.mse(rec, &target),
        LossScope::MaskedOnly => {
            let w = slot_weights(&sample.grid, plan.slots());
            g.mse_weighted(rec, &target, Some(&w))
        }
    }
}

/// Runs `loss` for every job in parallel and adds `scale ·` each gradient
/// into the model's store in job order. Returns the summed loss.
pub fn accumulate<J: Sync>(
    model: &mut Fome,
    jobs: &[J],
    scale: f64,
    loss: impl Fn(&Fome, &mut Graph, &J) -> Result<Var> + Sync,
) -> Result<f64> {
    let shared: &Fome = model;
    let results: Vec<Result<_>> = jobs
        .par_iter()
        .map(|job| {
            let mut g = Graph::new();
            let l = loss(shared, &mut g, job)?;
            let value = g.value(l).item()?;
            Ok((value, g.param_gradients(l, scale)?))
        })
        .collect();
    let mut total = 0.0;
    let store = model.params_mut();
    for r in results {
        let (value, grads) = r?;
        total += value;
        for (id, grad) in grads {
            store.accumulate_grad(id, &grad, 1.0);
        }
    }
    Ok(total)
}

/// Draws indices by walking a fresh shuffle of the data each epoch.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
}

impl EpochSampler {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self, rng: &mut Gaussian) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng.rng());
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// The shared optimization loop.
///
/// `loss` receives a per-sample generator (for masks and dropout) and a flag
/// that is false during validation. When `val` is non-empty the parameters
/// with the lowest validation loss are restored at the end.
fn fit<S: Sync>(
    model: &mut Fome,
    train: &[S],
    val: &[S],
    cfg: &TrainConfig,
    loss: impl Fn(&Fome, &mut Graph, &S, &mut Gaussian, bool) -> Result<Var> + Sync,
    mut on_step: impl FnMut(usize, &Fome) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(config_err("training set is empty"));
    }
    let mut rng = Gaussian::new(cfg.seed);
    let mut sampler = EpochSampler::new(train.len());
    let mut opt = AdamW::new(cfg.adamw, model.params());
    let scale = 1.0 / (cfg.batch_size * cfg.grad_accum) as f64;
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut best: Option<(f64, ParameterStore)> = None;

    let validate = |model: &Fome| -> Result<f64> {
        let losses = (0..val.len())
            .into_par_iter()
            .map(|i| {
                let mut r = Gaussian::new(cfg.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut g = Graph::new();
                let l = loss(model, &mut g, &val[i], &mut r, false)?;
                g.value(l).item()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(losses.iter().sum::<f64>() / val.len() as f64)
    };
    let consider = |model: &Fome, best: &mut Option<(f64, ParameterStore)>| -> Result<()> {
        if val.is_empty() {
            return Ok(());
        }
        let v = validate(model)?;
        log::debug!("validation loss {v:.6}");
        if best.as_ref().is_none_or(|(b, _)| v <= *b) {
            *best = Some((v, model.params().clone()));
        }
        Ok(())
    };

    model.params_mut().zero_grad();
    for step in 0..cfg.steps {
        let lr = cfg.lr.lr_at(step);
        let mut total = 0.0;
        for _ in 0..cfg.grad_accum {
            let jobs: Vec<(usize, u64)> = (0..cfg.batch_size)
                .map(|_| (sampler.next(&mut rng), rng.rng().next_u64()))
                .collect();
            total += accumulate(model, &jobs, scale, |m, g, &(i, seed)| {
                loss(m, g, &train[i], &mut Gaussian::new(seed), true)
            })?;
        }
        let mean = total * scale;
        trace.push(LossRecord { step, lr, loss: mean });
        opt.step(model.params_mut(), lr)?;
        if step % 100 == 0 {
            log::info!("step {step} lr {lr:.3e} loss {mean:.6}");
        }
        let done = step + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            on_step(done, model)?;
        }
        if cfg.eval_every > 0 && done % cfg.eval_every == 0 {
            consider(model, &mut best)?;
        }
    }
    if cfg.eval_every == 0 || cfg.steps % cfg.eval_every != 0 {
        consider(model, &mut best)?;
    }
    if let Some((_, params)) = best {
        *model.params_mut() = params;
        model.params_mut().zero_grad();
    }
    Ok(trace)
}

/// Masked-patch pre-training.
///
/// Each micro-step draws a mask plan per sample, reconstructs, and adds the
/// loss gradient scaled by `1/(batch · accum)`; the optimizer steps after
/// `grad_accum` micro-steps with `lr_at(step)`. `on_checkpoint` is called
/// every `checkpoint_every` optimizer steps.
pub fn pretrain(
    model: &mut Fome,
    corpus: &[Sample],
    cfg: &TrainConfig,
    on_checkpoint: impl FnMut(usize, &Fome) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    if corpus.is_empty() {
        return Err(config_err("pre-training corpus is empty"));
    }
    fit(
        model,
        corpus,
        &[],
        cfg,
        |m, g, s, rng, _| {
            let plan = MaskPlan::sample(s.grid.channels(), s.grid.patches(), cfg.mask_ratio, cfg.mask_mode, rng)?;
            let dropout = (m.config().dropout > 0.0).then_some(rng);
            masked_reconstruction_loss(m, g, s, &plan, cfg.loss_scope, dropout)
        },
        on_checkpoint,
    )
}

/// Train / validation / test index ranges in 6:2:2 proportion, as contiguous blocks.
pub fn split_ranges(n: usize) -> [Range<usize>; 3] {
    let train = (n * 6 + 5) / 10;
    let val = ((n * 2 + 5) / 10).min(n - train);
    [0..train, train..train + val, train + val..n]
}

/// Train, validation and test portions of a dataset.
#[derive(Debug)]
pub struct Splits<'a, T> {
    pub train: &'a [T],
    pub val: &'a [T],
    pub test: &'a [T],
}

impl<T> Clone for Splits<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Splits<'_, T> {}

impl<'a, T> Splits<'a, T> {
    /// Contiguous 6:2:2 blocks, see [`split_ranges`].
    pub fn contiguous(data: &'a [T]) -> Self {
        let [tr, va, te] = split_ranges(data.len());
        Self {
            train: &data[tr],
            val: &data[va],
            test: &data[te],
        }
    }
}

/// Result of a fine-tuning run: the test report and the training loss trace.
#[derive(Clone, Debug, PartialEq)]
pub struct Finetuned {
    pub report: MetricsReport,
    pub trace: Vec<LossRecord>,
}

fn set_trainable_for(model: &mut Fome, head: &str, mode: FinetuneMode) {
    let store = model.params_mut();
    store.set_trainable_where(true, |_| true);
    match mode {
        FinetuneMode::Probe => store.set_trainable_where(false, |n| !n.starts_with(head)),
        FinetuneMode::Full => store.set_trainable_where(false, |n| n.starts_with("head.") && !n.starts_with(head)),
    }
}

/// A sample with a class label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub sample: Sample,
    pub label: usize,
}

/// Attaches a classifier, trains it with cross-entropy on the first 60 % of
/// `data`, keeps the parameters with the best validation loss on the next
/// 20 % and reports on the last 20 %.
pub fn finetune_classify(
    model: &mut Fome,
    data: &[LabeledSample],
    cfg: &TrainConfig,
    n_classes: usize,
    mode: FinetuneMode,
) -> Result<MetricsReport> {
    finetune_classify_on(model, Splits::contiguous(data), cfg, n_classes, mode).map(|f| f.report)
}

/// [`finetune_classify`] on explicit splits.
pub fn finetune_classify_on(
    model: &mut Fome,
    data: Splits<'_, LabeledSample>,
    cfg: &TrainConfig,
    n_classes: usize,
    mode: FinetuneMode,
) -> Result<Finetuned> {
    let all = data.train.iter().chain(data.val).chain(data.test);
    if let Some(bad) = all.into_iter().find(|d| d.label >= n_classes) {
        return Err(Error::InvalidData(format!("label {} with {n_classes} classes", bad.label)));
    }
    model.attach_classifier(n_classes, cfg.seed ^ 0xC1A5)?;
    set_trainable_for(model, "head.cls", mode);
    let loss = |m: &Fome, g: &mut Graph, s: &LabeledSample, rng: &mut Gaussian, train: bool| {
        let dropout = (train && m.config().dropout > 0.0).then_some(rng);
        let enc = m.encode(g, &s.sample.grid, &s.sample.bands, &[], dropout)?;
        let logits = m.classify_logits(g, enc.output)?;
        g.cross_entropy(logits, &[s.label])
    };
    let trace = fit(model, data.train, data.val, cfg, loss, |_, _| Ok(()))?;
    model.params_mut().set_trainable_where(true, |_| true);
    let preds = predict_classes(model, data.test.iter().map(|d| &d.sample))?;
    let labels: Vec<usize> = data.test.iter().map(|d| d.label).collect();
    let report = MetricsReport::classification("classify", classification_metrics(&preds, &labels, n_classes)?);
    Ok(Finetuned { report, trace })
}

/// Arg-max class per sample.
pub fn predict_classes<'a>(model: &Fome, samples: impl Iterator<Item = &'a Sample>) -> Result<Vec<usize>> {
    let samples: Vec<&Sample> = samples.collect();
    samples
        .par_iter()
        .map(|s| {
            let p = model.predict_proba(&s.grid, &s.bands)?;
            Ok(p
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0)
        })
        .collect()
}

/// A forecasting example: `context` patches in, the next `horizon` patches
/// of every channel as target.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastSample {
    pub input: Sample,
    /// `[C, horizon · L]`, row-major.
    pub target: Vec<f64>,
}

impl ForecastSample {
    pub fn from_grid(grid: &PatchGrid, context: usize, horizon: usize) -> Result<Self> {
        if grid.patches() < context + horizon {
            return Err(Error::Empty(format!(
                "{} patches, need {context} + {horizon}",
                grid.patches()
            )));
        }
        let input = Sample::new(grid.slice_patches(0, context)?)?;
        let future = grid.slice_patches(context, horizon)?;
        Ok(Self {
            input,
            target: future.values().to_vec(),
        })
    }

    /// Repeats the last observed patch of each channel over the horizon.
    pub fn persistence(&self) -> Vec<f64> {
        let g = &self.input.grid;
        let h = self.target.len() / g.channels();
        (0..g.channels())
            .flat_map(|c| {
                let last = g.patch(c, g.patches() - 1);
                (0..h).map(move |i| last[i % last.len()])
            })
            .collect()
    }
}

/// Forecast `[C, H]` for one input.
pub fn predict_forecast(model: &Fome, input: &Sample) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let enc = model.encode(&mut g, &input.grid, &input.bands, &[], None)?;
    let out = model.forecast(&mut g, enc.output)?;
    Ok(g.value(out).data().to_vec())
}

/// Trains a forecasting head mapping `context` patches to the next
/// `horizon_patches` patches; reports test MAE/MSE next to the persistence
/// baseline.
pub fn finetune_forecast(
    model: &mut Fome,
    grids: &[PatchGrid],
    cfg: &TrainConfig,
    context: usize,
    horizon_patches: usize,
    mode: FinetuneMode,
) -> Result<MetricsReport> {
    let data = grids
        .iter()
        .map(|g| ForecastSample::from_grid(g, context, horizon_patches))
        .collect::<Result<Vec<_>>>()?;
    finetune_forecast_on(model, Splits::contiguous(&data), cfg, context, horizon_patches, mode).map(|f| f.report)
}

/// [`finetune_forecast`] on explicit splits of prepared samples.
pub fn finetune_forecast_on(
    model: &mut Fome,
    data: Splits<'_, ForecastSample>,
    cfg: &TrainConfig,
    context: usize,
    horizon_patches: usize,
    mode: FinetuneMode,
) -> Result<Finetuned> {
    let l = model.config().patch_len;
    let h = horizon_patches * l;
    for s in data.train.iter().chain(data.val).chain(data.test) {
        let c = s.input.grid.channels();
        if s.input.grid.patches() != context || s.target.len() != c * h {
            return Err(Error::Shape {
                op: "finetune_forecast",
                lhs: vec![c, s.input.grid.patches(), s.target.len()],
                rhs: vec![c, context, c * h],
            });
        }
    }
    model.attach_forecaster(context, h, cfg.seed ^ 0xF0CA)?;
    set_trainable_for(model, "head.forecast", mode);
    let loss = |m: &Fome, g: &mut Graph, s: &ForecastSample, rng: &mut Gaussian, train: bool| {
        let dropout = (train && m.config().dropout > 0.0).then_some(rng);
        let enc = m.encode(g, &s.input.grid, &s.input.bands, &[], dropout)?;
        let out = m.forecast(g, enc.output)?;
        let target = Tensor::new([s.input.grid.channels(), s.target.len() / s.input.grid.channels()], s.target.clone())?;
        g.mse(out, &target)
    };
    let trace = fit(model, data.train, data.val, cfg, loss, |_, _| Ok(()))?;
    model.params_mut().set_trainable_where(true, |_| true);

    let test = data.test;
    let preds = test
        .par_iter()
        .map(|s| predict_forecast(model, &s.input))
        .collect::<Result<Vec<_>>>()?;
    let flat_pred: Vec<f64> = preds.concat();
    let flat_target: Vec<f64> = test.iter().flat_map(|s| s.target.iter().copied()).collect();
    let flat_base: Vec<f64> = test.iter().flat_map(|s| s.persistence()).collect();
    let report = MetricsReport::regression(
        format!("forecast-{horizon_patches}"),
        regression_metrics(&flat_pred, &flat_target)?,
        Some(regression_metrics(&flat_base, &flat_target)?),
    );
    Ok(Finetuned { report, trace })
}

/// A recording window with some patches unobserved.
#[derive(Clone, Debug, PartialEq)]
pub struct ImputeSample {
    /// Ground truth, used only for scoring.
    pub truth: PatchGrid,
    /// Model input: the truth with missing patches zeroed.
    pub input: Sample,
    /// Per slot `c·P + p`.
    pub missing: Vec<bool>,
}

impl ImputeSample {
    /// `missing_samples` flags individual values (same layout as the grid);
    /// a patch with any missing value counts as missing as a whole.
    pub fn new(truth: PatchGrid, missing_samples: &[bool]) -> Result<Self> {
        if missing_samples.len() != truth.values().len() {
            return Err(Error::Shape {
                op: "impute",
                lhs: vec![truth.values().len()],
                rhs: vec![missing_samples.len()],
            });
        }
        let l = truth.patch_len();
        let missing: Vec<bool> = missing_samples.chunks(l).map(|c| c.iter().any(|&m| m)).collect();
        let mut values = truth.values().to_vec();
        for (slot, &m) in missing.iter().enumerate() {
            if m {
                values[slot * l..(slot + 1) * l].fill(0.0);
            }
        }
        let grid = PatchGrid::new(truth.channels(), truth.patches(), l, truth.source_rate_hz(), values)?;
        Ok(Self {
            input: Sample::new(grid)?,
            truth,
            missing,
        })
    }

    pub fn missing_slots(&self) -> Vec<(usize, usize)> {
        let p = self.truth.patches();
        self.missing
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (i / p, i % p))
            .collect()
    }

    /// Fills each missing patch with the mean of the observed values of its channel.
    pub fn mean_imputation(&self) -> Vec<f64> {
        let (p, l) = (self.truth.patches(), self.truth.patch_len());
        let mut out = Vec::new();
        for (c, _) in self.missing_slots() {
            let observed: Vec<f64> = (0..p)
                .filter(|&q| !self.missing[c * p + q])
                .flat_map(|q| self.truth.patch(c, q).iter().copied())
                .collect();
            let mean = if observed.is_empty() {
                0.0
            } else {
                observed.iter().sum::<f64>() / observed.len() as f64
            };
            out.extend(std::iter::repeat_n(mean, l));
        }
        out
    }

    fn missing_truth(&self) -> Vec<f64> {
        self.missing_slots()
            .into_iter()
            .flat_map(|(c, q)| self.truth.patch(c, q).iter().copied())
            .collect()
    }
}

/// Reconstruction of the missing patches of one sample, concatenated in slot order.
pub fn predict_missing(model: &Fome, s: &ImputeSample) -> Result<Vec<f64>> {
    let slots = s.missing_slots();
    let mut g = Graph::new();
    let enc = model.encode(&mut g, &s.input.grid, &s.input.bands, &slots, None)?;
    let rec = model.reconstruct(&mut g, enc.output)?;
    let rec = g.value(rec);
    let (p, l) = (s.truth.patches(), s.truth.patch_len());
    Ok(slots
        .into_iter()
        .flat_map(|(c, q)| rec.data()[(c * p + q) * l..(c * p + q + 1) * l].iter().copied())
        .collect())
}

/// Imputation with the reconstruction head.
///
/// Training on the first 60 % masks the missing patches plus a random
/// `mask_ratio` share of slots and scores only the observed masked slots.
/// The test split masks exactly its missing patches; MAE/MSE over the
/// missing values are reported next to per-channel mean imputation.
pub fn impute(model: &mut Fome, data: &[ImputeSample], cfg: &TrainConfig) -> Result<MetricsReport> {
    impute_on(model, Splits::contiguous(data), cfg).map(|f| f.report)
}

/// [`impute`] on explicit splits.
pub fn impute_on(model: &mut Fome, data: Splits<'_, ImputeSample>, cfg: &TrainConfig) -> Result<Finetuned> {
    let mut trace = Vec::new();
    if cfg.steps > 0 {
        set_trainable_for(model, "head.recon", FinetuneMode::Full);
        let loss = |m: &Fome, g: &mut Graph, s: &ImputeSample, rng: &mut Gaussian, train: bool| {
            let (c, p) = (s.truth.channels(), s.truth.patches());
            let plan = MaskPlan::sample(c, p, cfg.mask_ratio, cfg.mask_mode, rng)?;
            let scored: Vec<_> = plan.slots().iter().copied().filter(|&(ch, q)| !s.missing[ch * p + q]).collect();
            let mut hidden = s.missing_slots();
            hidden.extend_from_slice(plan.slots());
            let hidden = MaskPlan::from_slots(hidden);
            let dropout = (train && m.config().dropout > 0.0).then_some(rng);
            let enc = m.encode(g, &s.input.grid, &s.input.bands, hidden.slots(), dropout)?;
            let rec = m.reconstruct(g, enc.output)?;
            let w = slot_weights(&s.truth, &scored);
            g.mse_weighted(rec, &grid_tensor(&s.truth)?, Some(&w))
        };
        trace = fit(model, data.train, data.val, cfg, loss, |_, _| Ok(()))?;
        model.params_mut().set_trainable_where(true, |_| true);
    }
    let test = data.test;
    let preds = test
        .par_iter()
        .map(|s| predict_missing(model, s))
        .collect::<Result<Vec<_>>>()?;
    let flat_pred = preds.concat();
    let flat_truth: Vec<f64> = test.iter().flat_map(|s| s.missing_truth()).collect();
    let flat_base: Vec<f64> = test.iter().flat_map(|s| s.mean_imputation()).collect();
    let report = MetricsReport::regression(
        "impute",
        regression_metrics(&flat_pred, &flat_truth)?,
        Some(regression_metrics(&flat_base, &flat_truth)?),
    );
    Ok(Finetuned { report, trace })
}

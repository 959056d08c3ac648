use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;

use super::{evaluate, Adam, TrainConfig};
use crate::checkpoint::{self, Checkpoint};
use crate::data::{augment_spatial, augment_spectral, AugmentConfig, ImageSample};
use crate::error::{Error, Result};
use crate::fusion;
use crate::model::{HeadNoise, Model};
use crate::params::{Bound, ParamGroup};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

const SHUFFLE_STREAM: u64 = 0x5AFF;
const AUGMENT_STREAM: u64 = 0xA06E;
const NOISE_STREAM: u64 = 0x2015;

pub const METRICS_HEADER: &str =
    "epoch,train_loss,train_ce,train_kl,val_acc,lr_backbone,lr_head,c1,c2,alpha_low,alpha_mid,alpha_high,alpha_res";
pub const STEPS_HEADER: &str = "step,epoch,loss,ce,kl,lr_backbone,lr_head";

/// One row of `metrics.csv`. Fields a variant does not have are left empty.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_ce: f64,
    pub train_kl: f64,
    pub val_acc: Option<f64>,
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub cutoffs: Option<(f64, f64)>,
    pub alpha: Option<Vec<f64>>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let alpha = self.alpha.clone().unwrap_or_default();
        let a = |i: usize| opt(alpha.get(i).copied());
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.train_ce,
            self.train_kl,
            opt(self.val_acc),
            self.lr_backbone,
            self.lr_head,
            opt(self.cutoffs.map(|c| c.0)),
            opt(self.cutoffs.map(|c| c.1)),
            a(0),
            a(1),
            a(2),
            a(3)
        )
    }
}

/// One row of `steps.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub ce: f64,
    pub kl: f64,
    pub lr_backbone: f64,
    pub lr_head: f64,
}

impl StepLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.epoch, self.loss, self.ce, self.kl, self.lr_backbone, self.lr_head
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub epochs: Vec<EpochMetrics>,
    pub steps: Vec<StepLog>,
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
}

/// Where the trainer writes `metrics.csv`, `steps.csv`,
/// `checkpoint_best.fadc` and `checkpoint_final.fadc`.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub dir: PathBuf,
    /// Embedded in every checkpoint.
    pub config_text: String,
}

pub const BEST_CHECKPOINT: &str = "checkpoint_best.fadc";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.fadc";

struct Csv {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Csv {
    fn create(path: PathBuf, header: &str) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut csv = Self { path, out: BufWriter::new(file) };
        csv.row(header)?;
        Ok(csv)
    }

    fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn save_model(dir: &Path, name: &str, model: &Model, outputs: &TrainOutputs, cfg: &TrainConfig) -> Result<()> {
    let ck = Checkpoint { config_text: outputs.config_text.clone(), tensors: model.named_tensors() };
    checkpoint::save(&dir.join(name), &ck, cfg.checkpoint_dtype)
}

struct Partial {
    grads: Vec<Option<Vec<f64>>>,
    loss: f64,
    ce_sum: f64,
    kl: f64,
}

struct StepCtx<'a> {
    model: &'a Model,
    cfg: &'a TrainConfig,
    kl_scale: f64,
    batch: usize,
    noise: Option<&'a HeadNoise>,
}

impl StepCtx<'_> {
    /// Loss and gradients of one worker's share of the batch. The first
    /// share also carries the batch-level terms (KL, fusion entropy).
    fn run(&self, samples: &[ImageSample], labels: &[usize], first: bool) -> Result<Partial> {
        let bound = self.model.store().bind(true);
        let images: Vec<Tensor> = samples.iter().map(ImageSample::tensor).collect();
        let refs: Vec<&Tensor> = images.iter().collect();
        let parts = batch_loss(self.model, &bound, &refs, labels, self.noise, self.cfg, self.kl_scale, self.batch, first)?;
        let value = parts.loss.item()?;
        parts.loss.backward()?;
        Ok(Partial { grads: bound.grads(), loss: value, ce_sum: parts.ce_sum, kl: parts.kl })
    }
}

/// The training objective of one batch share, as a graph over `bound`.
pub struct LossParts {
    pub loss: Tensor,
    pub ce_sum: f64,
    pub kl: f64,
}

/// Cross-entropy of `images` summed and divided by `batch`; with
/// `batch_terms` also the scaled KL and the fusion entropy bonus, which are
/// counted once per batch.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    model: &Model,
    bound: &Bound,
    images: &[&Tensor],
    labels: &[usize],
    noise: Option<&HeadNoise>,
    cfg: &TrainConfig,
    kl_scale: f64,
    batch: usize,
    batch_terms: bool,
) -> Result<LossParts> {
    let out = model.forward(bound, images, noise)?;
    let mut ce_sum = 0.0;
    let mut loss: Option<Tensor> = None;
    for (z, &y) in out.logits.iter().zip(labels) {
        let ce = z.cross_entropy(y)?;
        ce_sum += ce.item()?;
        loss = Some(match loss {
            Some(l) => l.add(&ce)?,
            None => ce,
        });
    }
    let mut loss = loss.ok_or_else(|| Error::Invariant("empty batch share".into()))?.scale(1.0 / batch as f64);
    let mut kl_value = 0.0;
    if batch_terms {
        if let (Some(kl), true) = (&out.kl, cfg.kl_enabled) {
            kl_value = kl.item()?;
            loss = loss.add(&kl.scale(cfg.alpha / kl_scale))?;
        }
        if cfg.entropy_reg != 0.0 {
            if let Some(id) = model.store().id("fusion.u") {
                let h = fusion::fusion_entropy(bound.get(id))?;
                loss = loss.sub(&h.scale(cfg.entropy_reg))?;
            }
        }
    }
    Ok(LossParts { loss, ce_sum, kl: kl_value })
}

fn group_norms(model: &Model, grads: &[Option<Vec<f64>>]) -> String {
    let mut sums = [0.0f64; 2];
    for ((_, p), g) in model.store().iter().zip(grads) {
        let i = usize::from(p.group == ParamGroup::Head);
        if let Some(g) = g {
            sums[i] += g.iter().map(|v| v * v).sum::<f64>();
        }
    }
    format!("backbone={}, head={}", sums[0].sqrt(), sums[1].sqrt())
}

fn apply_freeze(model: &mut Model, prefixes: &[String]) -> Result<()> {
    for prefix in prefixes {
        let names: Vec<String> = model
            .store()
            .iter()
            .filter(|(_, p)| p.name.starts_with(prefix.as_str()))
            .map(|(_, p)| p.name.clone())
            .collect();
        if names.is_empty() {
            return Err(Error::Config(format!("train.freeze prefix `{prefix}` matches no parameter")));
        }
        for n in names {
            model.store_mut().set_trainable(&n, false)?;
        }
    }
    Ok(())
}

fn augmented(sample: &ImageSample, aug: &AugmentConfig, rng: &mut SplitMix64) -> Result<ImageSample> {
    if aug.is_identity() {
        return Ok(sample.clone());
    }
    let s = augment_spatial(sample, aug, rng);
    if aug.spectral_noise > 0.0 || aug.band_mask_prob > 0.0 {
        augment_spectral(&s, aug, rng)
    } else {
        Ok(s)
    }
}

/// Trains `model` in place. With `workers > 1`, each batch is split into
/// contiguous shares whose gradients are summed in share order.
pub fn train(
    model: &mut Model,
    train_set: &[ImageSample],
    val_set: &[ImageSample],
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    seed: u64,
    outputs: Option<&TrainOutputs>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    aug.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    apply_freeze(model, &cfg.freeze)?;
    let kl_scale = cfg.kl_scale.unwrap_or(train_set.len() as f64);
    let pool = if cfg.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    let mut files = match outputs {
        Some(o) => {
            std::fs::create_dir_all(&o.dir).map_err(|e| Error::io(&o.dir, e))?;
            Some((
                Csv::create(o.dir.join("metrics.csv"), METRICS_HEADER)?,
                Csv::create(o.dir.join("steps.csv"), STEPS_HEADER)?,
            ))
        }
        None => None,
    };

    let s = model.store();
    let mut adam = Adam::new(s, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    let mut result = TrainOutput { epochs: Vec::new(), steps: Vec::new(), best_epoch: None, best_val_acc: None };
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let lr_b = cfg.lr(ParamGroup::Backbone, epoch);
        let lr_h = cfg.lr(ParamGroup::Head, epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        SplitMix64::keyed(seed, &[SHUFFLE_STREAM, epoch as u64]).shuffle(&mut order);
        let (mut sum_loss, mut sum_ce, mut sum_kl, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            step += 1;
            let samples = idx
                .iter()
                .map(|&i| {
                    let mut rng = SplitMix64::keyed(seed, &[AUGMENT_STREAM, epoch as u64, i as u64]);
                    augmented(&train_set[i], aug, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
            let noise = if cfg.sample_head {
                model.draw_noise(&mut SplitMix64::keyed(seed, &[NOISE_STREAM, step as u64]))
            } else {
                None
            };
            let ctx = StepCtx { model, cfg, kl_scale, batch: samples.len(), noise: noise.as_ref() };
            let share = samples.len().div_ceil(cfg.workers);
            let partials: Vec<Partial> = match &pool {
                None => vec![ctx.run(&samples, &labels, true)?],
                Some(pool) => pool.install(|| {
                    samples
                        .par_chunks(share)
                        .zip(labels.par_chunks(share))
                        .enumerate()
                        .map(|(w, (s, l))| ctx.run(s, l, w == 0))
                        .collect::<Result<Vec<_>>>()
                })?,
            };

            let mut grads: Vec<Option<Vec<f64>>> = vec![None; model.store().len()];
            let (mut loss, mut ce_sum, mut kl) = (0.0, 0.0, 0.0);
            for p in partials {
                loss += p.loss;
                ce_sum += p.ce_sum;
                kl += p.kl;
                for (acc, g) in grads.iter_mut().zip(p.grads) {
                    match (acc.as_mut(), g) {
                        (Some(a), Some(g)) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
                        (None, Some(g)) => *acc = Some(g),
                        _ => {}
                    }
                }
            }
            let finite = loss.is_finite() && grads.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(Error::Numeric(format!(
                    "non-finite loss or gradient at epoch {epoch}, step {step} (loss = {loss}); gradient norms: {}",
                    group_norms(model, &grads)
                )));
            }
            if cfg.grad_clip > 0.0 {
                let norm = grads.iter().flatten().flatten().map(|v| v * v).sum::<f64>().sqrt();
                if norm > cfg.grad_clip {
                    let k = cfg.grad_clip / norm;
                    grads.iter_mut().flatten().flatten().for_each(|v| *v *= k);
                }
            }
            let rate = |g| if g == ParamGroup::Backbone { lr_b } else { lr_h };
            adam.step(model.store_mut(), &grads, rate)?;
            if let Some((c1, c2)) = model.cutoffs() {
                let ordered = model.config().ordering == crate::freq::CutoffOrdering::Ordered;
                if !(0.0..=1.0).contains(&c1) || !(0.0..=1.0).contains(&c2) || (ordered && c1 > c2) {
                    return Err(Error::Invariant(format!("cutoffs left the valid range: c1 = {c1}, c2 = {c2}")));
                }
            }

            let ce = ce_sum / samples.len() as f64;
            let log = StepLog { step, epoch, loss, ce, kl, lr_backbone: lr_b, lr_head: lr_h };
            if let Some((_, steps)) = files.as_mut() {
                steps.row(&log.csv_row())?;
            }
            result.steps.push(log);
            sum_loss += loss;
            sum_ce += ce;
            sum_kl += kl;
            batches += 1;
        }

        let val_acc = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(model, val_set, cfg.predict, seed)?.accuracy)
        };
        let n = batches as f64;
        let m = EpochMetrics {
            epoch,
            train_loss: sum_loss / n,
            train_ce: sum_ce / n,
            train_kl: sum_kl / n,
            val_acc,
            lr_backbone: lr_b,
            lr_head: lr_h,
            cutoffs: model.cutoffs(),
            alpha: model.fusion_alpha(),
        };
        info!("{}", m.csv_row());
        let improved = match (val_acc, result.best_val_acc) {
            (Some(v), Some(best)) => v > best,
            (Some(_), None) => true,
            _ => false,
        };
        if improved {
            result.best_val_acc = val_acc;
            result.best_epoch = Some(epoch);
        }
        if let (Some((metrics, steps)), Some(o)) = (files.as_mut(), outputs) {
            metrics.row(&m.csv_row())?;
            metrics.flush()?;
            steps.flush()?;
            if improved {
                save_model(&o.dir, BEST_CHECKPOINT, model, o, cfg)?;
            }
        }
        result.epochs.push(m);
    }
    if let Some(o) = outputs {
        save_model(&o.dir, FINAL_CHECKPOINT, model, o, cfg)?;
    }
    Ok(result)
}

//! End-to-end commands: train from a config, evaluate or inspect a
//! checkpoint.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::data::{load_corpus, ppm, resize_rgb, Corpus, ImageSample};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::train::{self, EvalReport, TrainOutput, TrainOutputs};

fn load_split(root: &Path, split: &str, size: usize) -> Result<Option<Corpus>> {
    let dir = root.join(split);
    if dir.is_dir() {
        load_corpus(&dir, size).map(Some)
    } else {
        Ok(None)
    }
}

/// Loads `data_dir/train` (required) and `data_dir/val` (optional), builds
/// the model and trains it, writing all outputs to `out`.
pub fn run_train(cfg: &RunConfig, out: &Path) -> Result<TrainOutput> {
    cfg.validate()?;
    let train_corpus = load_split(&cfg.data_dir, "train", cfg.image_size)?.ok_or_else(|| {
        Error::Data(format!("{} has no train/ subdirectory", cfg.data_dir.display()))
    })?;
    let val = load_split(&cfg.data_dir, "val", cfg.image_size)?;
    if let Some(v) = &val {
        if v.classes != train_corpus.classes {
            return Err(Error::Data(format!(
                "validation classes {:?} differ from training classes {:?}",
                v.classes, train_corpus.classes
            )));
        }
    }
    let classes = train_corpus.classes.len();
    if cfg.classes != 0 && cfg.classes != classes {
        return Err(Error::Data(format!("config expects {} classes, corpus has {classes}", cfg.classes)));
    }
    let mut resolved = cfg.clone();
    resolved.classes = classes;
    let mut model = Model::new(resolved.model_config(classes), resolved.seed)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let text = resolved.to_text();
    let cfg_path = out.join("config.txt");
    fs::write(&cfg_path, &text).map_err(|e| Error::io(&cfg_path, e))?;
    let outputs = TrainOutputs { dir: out.to_path_buf(), config_text: text };
    let val_samples = val.map(|v| v.samples).unwrap_or_default();
    train::train(
        &mut model,
        &train_corpus.samples,
        &val_samples,
        &resolved.train,
        &resolved.augment,
        resolved.seed,
        Some(&outputs),
    )
}

/// Rebuilds the model recorded in a checkpoint.
pub fn load_model(path: &Path) -> Result<(RunConfig, Model)> {
    let ck = checkpoint::load(path)?;
    model_from_checkpoint(&ck)
}

pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<(RunConfig, Model)> {
    let cfg = RunConfig::parse(&ck.config_text)?;
    if cfg.classes < 2 {
        return Err(Error::Format { offset: 0, msg: "checkpoint config does not record a class count".into() });
    }
    let mut model = Model::new(cfg.model_config(cfg.classes), cfg.seed)?;
    model.load_named(&ck.tensors)?;
    Ok((cfg, model))
}

pub fn run_eval(checkpoint_path: &Path, data: &Path) -> Result<(EvalReport, Vec<String>)> {
    let (cfg, model) = load_model(checkpoint_path)?;
    let corpus = load_corpus(data, cfg.image_size)?;
    if corpus.classes.len() != cfg.classes {
        return Err(Error::Data(format!(
            "{} has {} classes, checkpoint was trained on {}",
            data.display(),
            corpus.classes.len(),
            cfg.classes
        )));
    }
    let report = train::evaluate(&model, &corpus.samples, cfg.train.predict, cfg.seed)?;
    Ok((report, corpus.classes))
}

/// `key=value` lines for an evaluation report.
pub fn format_report(report: &EvalReport, classes: &[String], bayesian: bool) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "accuracy={}", report.accuracy);
    let _ = writeln!(s, "correct={}", report.correct);
    let _ = writeln!(s, "total={}", report.total);
    for (name, &(c, n)) in classes.iter().zip(&report.per_class) {
        let acc = if n == 0 { String::new() } else { (c as f64 / n as f64).to_string() };
        let _ = writeln!(s, "class_accuracy.{name}={acc}");
    }
    let _ = writeln!(s, "mean_ce={}", report.mean_ce);
    if bayesian {
        let _ = writeln!(s, "mean_entropy={}", report.mean_entropy);
    }
    s
}

/// Bands of one image at a checkpoint's cutoffs.
#[derive(Debug, Clone)]
pub struct Inspection {
    pub c1: f64,
    pub c2: f64,
    pub input: Vec<f64>,
    pub low: Vec<f64>,
    pub mid: Vec<f64>,
    pub high: Vec<f64>,
}

/// Writes `input.ppm`, `low.ppm`, `mid.ppm`, `high.ppm` (clamped to
/// `[0, 1]`), gray `mask_low.ppm`, `mask_mid.ppm`, `mask_high.ppm`, and
/// `bands.txt` with the unclamped values.
pub fn run_inspect(checkpoint_path: &Path, image: &Path, out: &Path) -> Result<Inspection> {
    let (cfg, model) = load_model(checkpoint_path)?;
    let bytes = fs::read(image).map_err(|e| Error::io(image, e))?;
    let img = ppm::decode(&bytes)?;
    let s = cfg.image_size;
    let sample = ImageSample {
        pixels: resize_rgb(&img.to_planar_rgb(), img.height, img.width, s),
        size: s,
        label: 0,
        id: image.display().to_string(),
    };
    let (masks, bands) = model.bands_of(&sample.tensor())?.ok_or_else(|| {
        Error::Config(format!("variant {} has no frequency bands to inspect", cfg.variant))
    })?;
    let (c1, c2) = model.cutoffs().expect("band variant");
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let write = |name: &str, bytes: Vec<u8>| {
        let p = out.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    write("input.ppm", ppm::encode_rgb8(s, s, &sample.pixels))?;
    write("low.ppm", ppm::encode_rgb8(s, s, bands.low.data()))?;
    write("mid.ppm", ppm::encode_rgb8(s, s, bands.mid.data()))?;
    write("high.ppm", ppm::encode_rgb8(s, s, bands.high.data()))?;
    for (name, mask) in [("mask_low.ppm", &masks.low), ("mask_mid.ppm", &masks.mid), ("mask_high.ppm", &masks.high)] {
        write(name, ppm::encode_rgb8(s, s, &mask.data().repeat(3)))?;
    }

    let mut text = format!("c1 = {c1}\nc2 = {c2}\n# index input low mid high\n");
    for i in 0..sample.pixels.len() {
        let _ = writeln!(
            text,
            "{i} {} {} {} {}",
            sample.pixels[i],
            bands.low.data()[i],
            bands.mid.data()[i],
            bands.high.data()[i]
        );
    }
    write("bands.txt", text.into_bytes())?;
    Ok(Inspection {
        c1,
        c2,
        input: sample.pixels,
        low: bands.low.to_vec(),
        mid: bands.mid.to_vec(),
        high: bands.high.to_vec(),
    })
}

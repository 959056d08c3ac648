//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Booleans are `true` or `false`; lists are comma separated. Every key has
//! a default, unknown keys are errors, and `--set key=value` overrides use
//! the same keys. [`RunConfig::to_text`] writes every key, so the text
//! embedded in a checkpoint fully determines the run.

use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use crate::backbones::{MicroResNetConfig, MicroViTConfig};
use crate::bayes::PredictMode;
use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::freq::CutoffOrdering;
use crate::model::{ModelConfig, Variant};
use crate::checkpoint::CheckpointDtype;
use crate::train::TrainConfig;

/// `(key, value, line number)` triples in file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string(), i + 1));
    }
    Ok(out)
}

pub fn parse_value<T: FromStr>(s: &str) -> Result<T>
where
    T::Err: Display,
{
    s.trim()
        .parse()
        .map_err(|e| Error::Config(format!("cannot parse `{s}`: {e}")))
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("expected true or false, got `{s}`"))),
    }
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    s.split(',').filter(|p| !p.trim().is_empty()).map(parse_value).collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub seed: u64,
    /// Corpus root with `train/` and `val/` subdirectories.
    pub data_dir: PathBuf,
    pub image_size: usize,
    /// Class count; 0 means "take it from the corpus".
    pub classes: usize,
    pub feature_dim: usize,
    pub vit: MicroViTConfig,
    pub vit_shared: bool,
    pub resnet_stages: Vec<usize>,
    pub resnet_blocks: usize,
    pub freq_k: f64,
    pub freq_c1_init: f64,
    pub freq_c2_init: f64,
    pub freq_ordering: CutoffOrdering,
    pub bayes_prior_sigma: f64,
    pub bayes_logvar_init: f64,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            variant: m.variant,
            seed: 0,
            data_dir: PathBuf::from("data"),
            image_size: m.image_size,
            classes: 0,
            feature_dim: m.feature_dim,
            vit: m.vit,
            vit_shared: m.shared_vit,
            resnet_stages: m.resnet.stages,
            resnet_blocks: m.resnet.blocks_per_stage,
            freq_k: m.sharpness,
            freq_c1_init: m.c1_init,
            freq_c2_init: m.c2_init,
            freq_ordering: m.ordering,
            bayes_prior_sigma: m.prior_sigma,
            bayes_logvar_init: m.logvar_init,
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

/// Every accepted key, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "variant",
    "seed",
    "data_dir",
    "image_size",
    "classes",
    "feature_dim",
    "vit.patch_size",
    "vit.embed_dim",
    "vit.layers",
    "vit.heads",
    "vit.mlp_ratio",
    "vit.shared",
    "resnet.stages",
    "resnet.blocks",
    "freq.k",
    "freq.c1_init",
    "freq.c2_init",
    "freq.ordering",
    "bayes.prior_sigma",
    "bayes.logvar_init",
    "bayes.sample",
    "bayes.predict",
    "loss.alpha",
    "loss.kl_scale",
    "loss.kl",
    "fusion.entropy_reg",
    "train.epochs",
    "train.batch_size",
    "train.lr_backbone",
    "train.lr_head",
    "train.lr_min",
    "train.weight_decay",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.grad_clip",
    "train.workers",
    "train.freeze",
    "augment.crop_prob",
    "augment.crop_scale_min",
    "augment.crop_scale_max",
    "augment.hflip_prob",
    "augment.vflip_prob",
    "augment.jitter",
    "augment.blur_prob",
    "augment.blur_sigma",
    "augment.spectral_noise",
    "augment.band_mask_prob",
    "checkpoint.dtype",
];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v, line) in parse_pairs(text)? {
            cfg.set(&k, &v).map_err(|e| Error::Config(format!("line {line}: {}", strip(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides, then revalidates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let ctx = |e: Error| Error::Config(format!("{key}: {}", strip(e)));
        let t = &mut self.train;
        let a = &mut self.augment;
        match key {
            "variant" => {
                self.variant = Variant::parse(v).ok_or_else(|| {
                    Error::Config(format!("variant must be resnet, vit, dctvit or dctvitres, got `{v}`"))
                })?
            }
            "seed" => self.seed = parse_value(v).map_err(ctx)?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "image_size" => self.image_size = parse_value(v).map_err(ctx)?,
            "classes" => self.classes = parse_value(v).map_err(ctx)?,
            "feature_dim" => self.feature_dim = parse_value(v).map_err(ctx)?,
            "vit.patch_size" => self.vit.patch_size = parse_value(v).map_err(ctx)?,
            "vit.embed_dim" => self.vit.embed_dim = parse_value(v).map_err(ctx)?,
            "vit.layers" => self.vit.layers = parse_value(v).map_err(ctx)?,
            "vit.heads" => self.vit.heads = parse_value(v).map_err(ctx)?,
            "vit.mlp_ratio" => self.vit.mlp_ratio = parse_value(v).map_err(ctx)?,
            "vit.shared" => self.vit_shared = parse_bool(v).map_err(ctx)?,
            "resnet.stages" => self.resnet_stages = parse_list(v).map_err(ctx)?,
            "resnet.blocks" => self.resnet_blocks = parse_value(v).map_err(ctx)?,
            "freq.k" => self.freq_k = parse_value(v).map_err(ctx)?,
            "freq.c1_init" => self.freq_c1_init = parse_value(v).map_err(ctx)?,
            "freq.c2_init" => self.freq_c2_init = parse_value(v).map_err(ctx)?,
            "freq.ordering" => {
                self.freq_ordering = CutoffOrdering::parse(v)
                    .ok_or_else(|| Error::Config(format!("freq.ordering must be ordered or independent, got `{v}`")))?
            }
            "bayes.prior_sigma" => self.bayes_prior_sigma = parse_value(v).map_err(ctx)?,
            "bayes.logvar_init" => self.bayes_logvar_init = parse_value(v).map_err(ctx)?,
            "bayes.sample" => t.sample_head = parse_bool(v).map_err(ctx)?,
            "bayes.predict" => t.predict = PredictMode::parse(v).map_err(ctx)?,
            "loss.alpha" => t.alpha = parse_value(v).map_err(ctx)?,
            "loss.kl_scale" => {
                t.kl_scale = if v == "auto" { None } else { Some(parse_value(v).map_err(ctx)?) }
            }
            "loss.kl" => t.kl_enabled = parse_bool(v).map_err(ctx)?,
            "fusion.entropy_reg" => t.entropy_reg = parse_value(v).map_err(ctx)?,
            "train.epochs" => t.epochs = parse_value(v).map_err(ctx)?,
            "train.batch_size" => t.batch_size = parse_value(v).map_err(ctx)?,
            "train.lr_backbone" => t.lr_backbone = parse_value(v).map_err(ctx)?,
            "train.lr_head" => t.lr_head = parse_value(v).map_err(ctx)?,
            "train.lr_min" => t.lr_min = parse_value(v).map_err(ctx)?,
            "train.weight_decay" => t.weight_decay = parse_value(v).map_err(ctx)?,
            "train.beta1" => t.beta1 = parse_value(v).map_err(ctx)?,
            "train.beta2" => t.beta2 = parse_value(v).map_err(ctx)?,
            "train.eps" => t.eps = parse_value(v).map_err(ctx)?,
            "train.grad_clip" => t.grad_clip = parse_value(v).map_err(ctx)?,
            "train.workers" => t.workers = parse_value(v).map_err(ctx)?,
            "train.freeze" => {
                t.freeze = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
            }
            "augment.crop_prob" => a.crop_prob = parse_value(v).map_err(ctx)?,
            "augment.crop_scale_min" => a.crop_scale.0 = parse_value(v).map_err(ctx)?,
            "augment.crop_scale_max" => a.crop_scale.1 = parse_value(v).map_err(ctx)?,
            "augment.hflip_prob" => a.hflip_prob = parse_value(v).map_err(ctx)?,
            "augment.vflip_prob" => a.vflip_prob = parse_value(v).map_err(ctx)?,
            "augment.jitter" => a.jitter = parse_value(v).map_err(ctx)?,
            "augment.blur_prob" => a.blur_prob = parse_value(v).map_err(ctx)?,
            "augment.blur_sigma" => a.blur_sigma = parse_value(v).map_err(ctx)?,
            "augment.spectral_noise" => a.spectral_noise = parse_value(v).map_err(ctx)?,
            "augment.band_mask_prob" => a.band_mask_prob = parse_value(v).map_err(ctx)?,
            "checkpoint.dtype" => {
                t.checkpoint_dtype = CheckpointDtype::parse(v)
                    .ok_or_else(|| Error::Config(format!("checkpoint.dtype must be f64 or f32, got `{v}`")))?
            }
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let a = &self.augment;
        Some(match key {
            "variant" => self.variant.to_string(),
            "seed" => self.seed.to_string(),
            "data_dir" => self.data_dir.display().to_string(),
            "image_size" => self.image_size.to_string(),
            "classes" => self.classes.to_string(),
            "feature_dim" => self.feature_dim.to_string(),
            "vit.patch_size" => self.vit.patch_size.to_string(),
            "vit.embed_dim" => self.vit.embed_dim.to_string(),
            "vit.layers" => self.vit.layers.to_string(),
            "vit.heads" => self.vit.heads.to_string(),
            "vit.mlp_ratio" => self.vit.mlp_ratio.to_string(),
            "vit.shared" => self.vit_shared.to_string(),
            "resnet.stages" => join(&self.resnet_stages),
            "resnet.blocks" => self.resnet_blocks.to_string(),
            "freq.k" => self.freq_k.to_string(),
            "freq.c1_init" => self.freq_c1_init.to_string(),
            "freq.c2_init" => self.freq_c2_init.to_string(),
            "freq.ordering" => self.freq_ordering.as_str().to_string(),
            "bayes.prior_sigma" => self.bayes_prior_sigma.to_string(),
            "bayes.logvar_init" => self.bayes_logvar_init.to_string(),
            "bayes.sample" => t.sample_head.to_string(),
            "bayes.predict" => match t.predict {
                PredictMode::Mean => "mean".to_string(),
                PredictMode::MonteCarlo(s) => format!("mc:{s}"),
            },
            "loss.alpha" => t.alpha.to_string(),
            "loss.kl_scale" => t.kl_scale.map_or_else(|| "auto".to_string(), |s| s.to_string()),
            "loss.kl" => t.kl_enabled.to_string(),
            "fusion.entropy_reg" => t.entropy_reg.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.lr_backbone" => t.lr_backbone.to_string(),
            "train.lr_head" => t.lr_head.to_string(),
            "train.lr_min" => t.lr_min.to_string(),
            "train.weight_decay" => t.weight_decay.to_string(),
            "train.beta1" => t.beta1.to_string(),
            "train.beta2" => t.beta2.to_string(),
            "train.eps" => t.eps.to_string(),
            "train.grad_clip" => t.grad_clip.to_string(),
            "train.workers" => t.workers.to_string(),
            "train.freeze" => t.freeze.join(","),
            "augment.crop_prob" => a.crop_prob.to_string(),
            "augment.crop_scale_min" => a.crop_scale.0.to_string(),
            "augment.crop_scale_max" => a.crop_scale.1.to_string(),
            "augment.hflip_prob" => a.hflip_prob.to_string(),
            "augment.vflip_prob" => a.vflip_prob.to_string(),
            "augment.jitter" => a.jitter.to_string(),
            "augment.blur_prob" => a.blur_prob.to_string(),
            "augment.blur_sigma" => a.blur_sigma.to_string(),
            "augment.spectral_noise" => a.spectral_noise.to_string(),
            "augment.band_mask_prob" => a.band_mask_prob.to_string(),
            "checkpoint.dtype" => t.checkpoint_dtype.as_str().to_string(),
            _ => return None,
        })
    }

    /// Every key with its current value, one per line.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn model_config(&self, classes: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            channels: 3,
            image_size: self.image_size,
            classes,
            feature_dim: self.feature_dim,
            vit: self.vit.clone(),
            resnet: MicroResNetConfig {
                stages: self.resnet_stages.clone(),
                blocks_per_stage: self.resnet_blocks,
                ..MicroResNetConfig::default()
            },
            shared_vit: self.vit_shared,
            sharpness: self.freq_k,
            c1_init: self.freq_c1_init,
            c2_init: self.freq_c2_init,
            ordering: self.freq_ordering,
            prior_sigma: self.bayes_prior_sigma,
            logvar_init: self.bayes_logvar_init,
        }
    }

    /// Checks everything that can be checked before data is loaded.
    pub fn validate(&self) -> Result<()> {
        let classes = if self.classes == 0 { 2 } else { self.classes };
        if self.classes == 1 {
            return Err(Error::Config("classes must be 0 (from corpus) or ≥ 2".into()));
        }
        self.model_config(classes).validate()?;
        self.train.validate()?;
        self.augment.validate()
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = RunConfig::default();
        let text = cfg.to_text();
        assert_eq!(text.lines().count(), KEYS.len());
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn every_key_is_settable_and_readable() {
        let cfg = RunConfig::default();
        for k in KEYS {
            let mut c = cfg.clone();
            let v = cfg.get(k).unwrap();
            c.set(k, &v).unwrap_or_else(|e| panic!("{k} = {v}: {e}"));
            assert_eq!(c, cfg, "{k}");
        }
    }

    #[test]
    fn comments_overrides_and_errors() {
        let cfg = RunConfig::parse("# run\nvariant = vit  # raw image\n\nloss.alpha = 0.5\nloss.kl_scale = 12\n").unwrap();
        assert_eq!(cfg.variant, Variant::Vit);
        assert_eq!(cfg.train.alpha, 0.5);
        assert_eq!(cfg.train.kl_scale, Some(12.0));

        let mut c = cfg.clone();
        c.apply_overrides(&["train.epochs=3", "resnet.stages = 4,8"]).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.resnet_stages, vec![4, 8]);

        let err = RunConfig::parse("trian.epochs = 3\n").unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("trian.epochs"), "{err}");
        assert!(RunConfig::parse("vit.shared = yes\n").is_err());
        assert!(RunConfig::parse("just words\n").is_err());
        assert!(RunConfig::parse("loss.alpha = 2\n").is_err());
        assert!(RunConfig::parse("vit.heads = 3\n").is_err());
        assert!(c.apply_overrides(&["nope"]).is_err());
    }
}

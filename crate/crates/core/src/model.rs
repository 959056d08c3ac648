//! The four compared classifiers behind one interface.
//!
//! | variant     | branches                                   | head      |
//! |-------------|--------------------------------------------|-----------|
//! | `resnet`    | ResNet on the image                        | linear    |
//! | `vit`       | ViT on the image                           | linear    |
//! | `dctvit`    | ViT on the low, mid and high band images   | Bayesian  |
//! | `dctvitres` | the three band branches plus the ResNet    | Bayesian  |
//!
//! Multi-branch variants fuse features with softmax weights in the fixed
//! order low, mid, high, res.

use std::fmt;
use std::sync::Arc;

use crate::backbones::{MicroResNet, MicroResNetConfig, MicroViT, MicroViTConfig};
use crate::bayes::{self, BayesLinear, PredictMode};
use crate::dct::DctPlan;
use crate::error::{Error, Result};
use crate::freq::{self, Bands, CutoffOrdering, CutoffParams, FrequencyIndexMap, MaskSet};
use crate::fusion;
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Resnet,
    Vit,
    DctVit,
    DctVitRes,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Resnet, Variant::Vit, Variant::DctVit, Variant::DctVitRes];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "resnet" => Some(Variant::Resnet),
            "vit" => Some(Variant::Vit),
            "dctvit" => Some(Variant::DctVit),
            "dctvitres" => Some(Variant::DctVitRes),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Resnet => "resnet",
            Variant::Vit => "vit",
            Variant::DctVit => "dctvit",
            Variant::DctVitRes => "dctvitres",
        }
    }

    pub fn uses_bands(self) -> bool {
        matches!(self, Variant::DctVit | Variant::DctVitRes)
    }

    pub fn uses_resnet(self) -> bool {
        matches!(self, Variant::Resnet | Variant::DctVitRes)
    }

    pub fn is_bayesian(self) -> bool {
        self.uses_bands()
    }

    pub fn branches(self) -> usize {
        match self {
            Variant::Resnet | Variant::Vit => 1,
            Variant::DctVit => 3,
            Variant::DctVitRes => 4,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub channels: usize,
    pub image_size: usize,
    pub classes: usize,
    pub feature_dim: usize,
    pub vit: MicroViTConfig,
    pub resnet: MicroResNetConfig,
    pub shared_vit: bool,
    pub sharpness: f64,
    pub c1_init: f64,
    pub c2_init: f64,
    pub ordering: CutoffOrdering,
    pub prior_sigma: f64,
    pub logvar_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::DctVitRes,
            channels: 3,
            image_size: 32,
            classes: 3,
            feature_dim: 64,
            vit: MicroViTConfig::default(),
            resnet: MicroResNetConfig::default(),
            shared_vit: true,
            sharpness: freq::DEFAULT_SHARPNESS,
            c1_init: 1.0 / 3.0,
            c2_init: 2.0 / 3.0,
            ordering: CutoffOrdering::Ordered,
            prior_sigma: 1.0,
            logvar_init: bayes::DEFAULT_LOGVAR_INIT,
        }
    }
}

impl ModelConfig {
    /// Backbone configs with the shared extents filled in.
    pub fn vit_config(&self) -> MicroViTConfig {
        MicroViTConfig {
            channels: self.channels,
            image_size: self.image_size,
            out_dim: self.feature_dim,
            ..self.vit.clone()
        }
    }

    pub fn resnet_config(&self) -> MicroResNetConfig {
        MicroResNetConfig {
            channels: self.channels,
            image_size: self.image_size,
            out_dim: self.feature_dim,
            ..self.resnet.clone()
        }
    }

    /// 8×8 images, one-layer ViTs with 4×4 patches, a single-block
    /// ResNet stage and 6-dimensional features.
    pub fn tiny(variant: Variant) -> Self {
        ModelConfig {
            variant,
            channels: 3,
            image_size: 8,
            classes: 3,
            feature_dim: 6,
            vit: MicroViTConfig {
                patch_size: 4,
                embed_dim: 8,
                layers: 1,
                heads: 2,
                mlp_ratio: 2,
                ..MicroViTConfig::default()
            },
            resnet: MicroResNetConfig {
                stages: vec![4],
                blocks_per_stage: 1,
                ..MicroResNetConfig::default()
            },
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.channels == 0 || self.image_size == 0 || self.feature_dim == 0 {
            return Err(Error::Config("channels, image size and feature dim must be ≥ 1".into()));
        }
        if self.variant != Variant::Resnet {
            self.vit_config().validate()?;
        }
        if self.variant.uses_resnet() {
            self.resnet_config().validate()?;
        }
        if self.variant.uses_bands() {
            CutoffParams::from_cutoffs(self.c1_init, self.c2_init, self.sharpness, self.ordering)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.prior_sigma <= 0.0 || !self.prior_sigma.is_finite() {
            return Err(Error::Config(format!("prior sigma must be positive, got {}", self.prior_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Head {
    Linear { w: ParamId, b: ParamId },
    Bayes(BayesLinear),
}

#[derive(Debug, Clone)]
struct BandPart {
    raw_c1: ParamId,
    raw_c2: ParamId,
    plan: Arc<DctPlan>,
    index: FrequencyIndexMap,
}

/// Standard-normal noise for one draw of the Bayesian head's weights.
#[derive(Debug, Clone)]
pub struct HeadNoise {
    /// `[C×D]`, row-major.
    pub eps_w: Vec<f64>,
    /// `[C]`.
    pub eps_b: Vec<f64>,
}

/// Logits for each input image and, for Bayesian heads, the KL term.
#[derive(Debug)]
pub struct Forward {
    pub logits: Vec<Tensor>,
    pub kl: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    store: ParamStore,
    bands: Option<BandPart>,
    vits: Vec<MicroViT>,
    resnet: Option<MicroResNet>,
    fusion_u: Option<ParamId>,
    head: Head,
}

impl Model {
    /// Builds the model and initializes every parameter from `seed`.
    /// Initialization order is fixed, so equal seeds give equal weights.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let root = SplitMix64::new(seed);
        let v = cfg.variant;

        let bands = if v.uses_bands() {
            let raw = CutoffParams::from_cutoffs(cfg.c1_init, cfg.c2_init, cfg.sharpness, cfg.ordering)?;
            Some(BandPart {
                raw_c1: store.add("freq.raw_c1", &[], vec![raw.raw_c1], ParamGroup::Head)?,
                raw_c2: store.add("freq.raw_c2", &[], vec![raw.raw_c2], ParamGroup::Head)?,
                plan: DctPlan::cached(cfg.image_size, cfg.image_size)?,
                index: FrequencyIndexMap::new(cfg.image_size, cfg.image_size)?,
            })
        } else {
            None
        };

        let vit_count = match v {
            Variant::Resnet => 0,
            Variant::Vit => 1,
            _ if cfg.shared_vit => 1,
            _ => 3,
        };
        let vits = (0..vit_count)
            .map(|i| {
                let prefix = if vit_count == 1 { "vit".to_string() } else { format!("vit{i}") };
                let mut rng = root.substream(1 + i as u64);
                MicroViT::new(&mut store, &prefix, cfg.vit_config(), &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;

        let resnet = if v.uses_resnet() {
            let mut rng = root.substream(10);
            Some(MicroResNet::new(&mut store, "resnet", cfg.resnet_config(), &mut rng)?)
        } else {
            None
        };

        let fusion_u = if v.branches() > 1 {
            Some(store.add("fusion.u", &[v.branches()], vec![0.0; v.branches()], ParamGroup::Head)?)
        } else {
            None
        };

        let mut rng = root.substream(20);
        let head = if v.is_bayesian() {
            let h = BayesLinear::new(&mut store, "head", cfg.feature_dim, cfg.classes, cfg.prior_sigma, &mut rng)?;
            for id in [h.logvar_w, h.logvar_b] {
                store.get_mut(id).value.iter_mut().for_each(|x| *x = cfg.logvar_init);
            }
            Head::Bayes(h)
        } else {
            let (c, d) = (cfg.classes, cfg.feature_dim);
            Head::Linear {
                w: store.add("head.w", &[c, d], rng.truncated_normal_vec(c * d, bayes::DEFAULT_MU_STD), ParamGroup::Head)?,
                b: store.add("head.b", &[c], vec![0.0; c], ParamGroup::Head)?,
            }
        };

        Ok(Self { cfg, store, bands, vits, resnet, fusion_u, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn variant(&self) -> Variant {
        self.cfg.variant
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Names of the Bayesian head's log-variance tensors (empty otherwise).
    pub fn logvar_names(&self) -> Vec<String> {
        match &self.head {
            Head::Bayes(h) => [h.logvar_w, h.logvar_b]
                .iter()
                .map(|&id| self.store.get(id).name.clone())
                .collect(),
            Head::Linear { .. } => Vec::new(),
        }
    }

    /// Current cutoffs `(c1, c2)` for band variants.
    pub fn cutoffs(&self) -> Option<(f64, f64)> {
        self.bands.as_ref().map(|b| {
            let p = self.cutoff_params(b);
            (p.c1(), p.c2())
        })
    }

    fn cutoff_params(&self, b: &BandPart) -> CutoffParams {
        CutoffParams {
            raw_c1: self.store.get(b.raw_c1).value[0],
            raw_c2: self.store.get(b.raw_c2).value[0],
            k: self.cfg.sharpness,
            ordering: self.cfg.ordering,
        }
    }

    /// Fusion weights in branch order, for multi-branch variants.
    pub fn fusion_alpha(&self) -> Option<Vec<f64>> {
        self.fusion_u.map(|id| {
            let u = &self.store.get(id).value;
            fusion::fusion_weights(&Tensor::vector(u.clone()))
                .expect("rank-1 scores")
                .to_vec()
        })
    }

    /// Standard-normal head noise, or `None` for a plain linear head.
    pub fn draw_noise(&self, rng: &mut SplitMix64) -> Option<HeadNoise> {
        match &self.head {
            Head::Bayes(h) => Some(HeadNoise {
                eps_w: rng.normal_vec(h.classes * h.features, 1.0),
                eps_b: rng.normal_vec(h.classes, 1.0),
            }),
            Head::Linear { .. } => None,
        }
    }

    /// Masks at the current cutoffs (no graph).
    pub fn masks(&self) -> Option<MaskSet> {
        self.bands
            .as_ref()
            .map(|b| self.cutoff_params(b).masks(&b.index).expect("validated cutoffs"))
    }

    /// Band images of `image` at the current cutoffs.
    pub fn bands_of(&self, image: &Tensor) -> Result<Option<(MaskSet, Bands)>> {
        match (&self.bands, self.masks()) {
            (Some(b), Some(m)) => {
                let bands = freq::band_decompose(image, &m, &b.plan)?;
                Ok(Some((m, bands)))
            }
            _ => Ok(None),
        }
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let c = &self.cfg;
        image.expect_shape(&[c.channels, c.image_size, c.image_size], "model input")
    }

    /// Fused feature vectors for each image.
    fn features(&self, bound: &Bound, images: &[&Tensor]) -> Result<Vec<Tensor>> {
        let masks = match &self.bands {
            Some(b) => {
                let (c1, c2) = CutoffParams::derive(bound.get(b.raw_c1), bound.get(b.raw_c2), self.cfg.ordering)?;
                Some(freq::compute_masks(&c1, &c2, self.cfg.sharpness, &b.index)?)
            }
            None => None,
        };
        images
            .iter()
            .map(|image| {
                self.check_image(image)?;
                let mut branches = Vec::with_capacity(4);
                if let (Some(b), Some(m)) = (&self.bands, &masks) {
                    let bands = freq::band_decompose(image, m, &b.plan)?;
                    for (i, band) in bands.as_array().into_iter().enumerate() {
                        let vit = &self.vits[i.min(self.vits.len() - 1)];
                        branches.push(vit.forward(bound, band)?);
                    }
                } else if self.cfg.variant == Variant::Vit {
                    branches.push(self.vits[0].forward(bound, image)?);
                }
                if let Some(r) = &self.resnet {
                    branches.push(r.forward(bound, image)?);
                }
                match self.fusion_u {
                    Some(u) => fusion::fuse(&branches, bound.get(u)),
                    None => Ok(branches.pop().expect("one branch")),
                }
            })
            .collect()
    }

    /// Forward pass over a batch inside one graph. For Bayesian heads
    /// `noise` supplies the weight sample shared by the batch; `None` uses
    /// the posterior means.
    pub fn forward(&self, bound: &Bound, images: &[&Tensor], noise: Option<&HeadNoise>) -> Result<Forward> {
        let feats = self.features(bound, images)?;
        match &self.head {
            Head::Linear { w, b } => {
                let logits = feats
                    .iter()
                    .map(|x| bayes::logits(x, bound.get(*w), bound.get(*b)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Forward { logits, kl: None })
            }
            Head::Bayes(h) => {
                let p = h.bind(bound);
                let (w, b) = match noise {
                    Some(n) => {
                        let eps_w = Tensor::new(n.eps_w.clone(), &[h.classes, h.features])?;
                        let eps_b = Tensor::new(n.eps_b.clone(), &[h.classes])?;
                        bayes::sample_weights(&p, &eps_w, &eps_b)?
                    }
                    None => (p.mu_w.clone(), p.mu_b.clone()),
                };
                let logits = feats
                    .iter()
                    .map(|x| bayes::logits(x, &w, &b))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Forward { logits, kl: Some(bayes::kl_loss(&p)?) })
            }
        }
    }

    /// Test-time logits for one image.
    pub fn predict(&self, image: &Tensor, mode: PredictMode, rng: &mut SplitMix64) -> Result<Vec<f64>> {
        let bound = self.store.bind(false);
        let feats = self.features(&bound, &[image])?;
        match &self.head {
            Head::Linear { w, b } => Ok(bayes::logits(&feats[0], bound.get(*w), bound.get(*b))?.to_vec()),
            Head::Bayes(h) => Ok(bayes::predictive_logits(&feats[0], &h.bind(&bound), mode, rng)?.to_vec()),
        }
    }

    /// `(name, shape, values)` for every parameter, in store order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.store
            .iter()
            .map(|(_, p)| (p.name.clone(), p.shape.clone(), p.value.clone()))
            .collect()
    }

    pub fn load_named(&mut self, named: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        self.store.load_named(named)
    }
}

use super::linear_vec;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::rng::SplitMix64;
use crate::tensor::{Conv2dSpec, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct MicroResNetConfig {
    pub channels: usize,
    pub image_size: usize,
    /// Output channels of each stage; every stage after the first halves
    /// the resolution.
    pub stages: Vec<usize>,
    pub blocks_per_stage: usize,
    pub out_dim: usize,
}

impl Default for MicroResNetConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            image_size: 32,
            stages: vec![16, 32, 64],
            blocks_per_stage: 2,
            out_dim: 64,
        }
    }
}

impl MicroResNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.image_size == 0 || self.out_dim == 0 || self.blocks_per_stage == 0 {
            return Err(Error::Config(format!("ResNet extents must all be ≥ 1: {self:?}")));
        }
        if self.stages.is_empty() || self.stages.contains(&0) {
            return Err(Error::Config(format!(
                "ResNet stages must be a non-empty list of positive widths, got {:?}",
                self.stages
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Affine {
    scale: ParamId,
    shift: ParamId,
}

#[derive(Debug, Clone)]
struct ResBlock {
    stride: usize,
    conv1: ParamId,
    bn1: Affine,
    conv2: ParamId,
    bn2: Affine,
    proj: Option<(ParamId, Affine)>,
}

/// Residual CNN without a classifier: global average pooling followed by
/// a projection to `out_dim` features.
#[derive(Debug, Clone)]
pub struct MicroResNet {
    cfg: MicroResNetConfig,
    stem: ParamId,
    stem_bn: Affine,
    blocks: Vec<ResBlock>,
    proj_w: ParamId,
    proj_b: ParamId,
}

fn he_uniform(rng: &mut SplitMix64, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.uniform_range(-bound, bound)).collect()
}

fn add_conv(
    store: &mut ParamStore,
    rng: &mut SplitMix64,
    name: &str,
    cout: usize,
    cin: usize,
    k: usize,
) -> Result<ParamId> {
    let shape = [cout, cin, k, k];
    let fan_in = cin * k * k;
    store.add(name, &shape, he_uniform(rng, cout * fan_in, fan_in), ParamGroup::Backbone)
}

fn add_affine(store: &mut ParamStore, name: &str, c: usize) -> Result<Affine> {
    Ok(Affine {
        scale: store.add(&format!("{name}.scale"), &[c], vec![1.0; c], ParamGroup::Backbone)?,
        shift: store.add(&format!("{name}.shift"), &[c], vec![0.0; c], ParamGroup::Backbone)?,
    })
}

impl MicroResNet {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: MicroResNetConfig, rng: &mut SplitMix64) -> Result<Self> {
        cfg.validate()?;
        let first = cfg.stages[0];
        let stem = add_conv(store, rng, &format!("{prefix}.stem.conv"), first, cfg.channels, 3)?;
        let stem_bn = add_affine(store, &format!("{prefix}.stem.bn"), first)?;
        let mut blocks = Vec::new();
        let mut cin = first;
        for (s, &cout) in cfg.stages.iter().enumerate() {
            for b in 0..cfg.blocks_per_stage {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let name = format!("{prefix}.stage{s}.block{b}");
                let conv1 = add_conv(store, rng, &format!("{name}.conv1"), cout, cin, 3)?;
                let bn1 = add_affine(store, &format!("{name}.bn1"), cout)?;
                let conv2 = add_conv(store, rng, &format!("{name}.conv2"), cout, cout, 3)?;
                let bn2 = add_affine(store, &format!("{name}.bn2"), cout)?;
                let proj = if stride != 1 || cin != cout {
                    let w = add_conv(store, rng, &format!("{name}.proj.conv"), cout, cin, 1)?;
                    Some((w, add_affine(store, &format!("{name}.proj.bn"), cout)?))
                } else {
                    None
                };
                blocks.push(ResBlock { stride, conv1, bn1, conv2, bn2, proj });
                cin = cout;
            }
        }
        let last = *cfg.stages.last().expect("validated");
        let bound = (6.0 / last as f64).sqrt();
        let proj_w = store.add(
            &format!("{prefix}.proj.w"),
            &[last, cfg.out_dim],
            (0..last * cfg.out_dim).map(|_| rng.uniform_range(-bound, bound)).collect(),
            ParamGroup::Backbone,
        )?;
        let proj_b = store.add(&format!("{prefix}.proj.b"), &[cfg.out_dim], vec![0.0; cfg.out_dim], ParamGroup::Backbone)?;
        Ok(Self { cfg, stem, stem_bn, blocks, proj_w, proj_b })
    }

    pub fn config(&self) -> &MicroResNetConfig {
        &self.cfg
    }

    /// Names of the scale parameters that close each residual branch;
    /// zeroing them turns every block into its skip path.
    pub fn branch_scale_ids(&self) -> Vec<ParamId> {
        self.blocks.iter().map(|b| b.bn2.scale).collect()
    }

    pub fn forward(&self, bound: &Bound, image: &Tensor) -> Result<Tensor> {
        let c = &self.cfg;
        image.expect_shape(&[c.channels, c.image_size, c.image_size], "ResNet input")?;
        let p = |id| bound.get(id);
        let affine = |x: &Tensor, a: &Affine| x.channel_affine(p(a.scale), p(a.shift));
        let conv3 = |stride| Conv2dSpec { stride, padding: 1 };

        let mut x = affine(&image.conv2d(p(self.stem), None, conv3(1))?, &self.stem_bn)?.relu();
        for b in &self.blocks {
            let h = affine(&x.conv2d(p(b.conv1), None, conv3(b.stride))?, &b.bn1)?.relu();
            let h = affine(&h.conv2d(p(b.conv2), None, conv3(1))?, &b.bn2)?;
            let skip = match &b.proj {
                Some((w, a)) => affine(&x.conv2d(p(*w), None, Conv2dSpec { stride: b.stride, padding: 0 })?, a)?,
                None => x.clone(),
            };
            x = h.add(&skip)?.relu();
        }
        linear_vec(&x.mean_inner()?, p(self.proj_w), p(self.proj_b))
    }
}

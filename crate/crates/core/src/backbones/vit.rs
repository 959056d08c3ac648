use std::sync::Arc;

use super::linear;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct MicroViTConfig {
    pub channels: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub out_dim: usize,
}

impl Default for MicroViTConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            image_size: 32,
            patch_size: 8,
            embed_dim: 64,
            layers: 4,
            heads: 4,
            mlp_ratio: 4,
            out_dim: 64,
        }
    }
}

impl MicroViTConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.channels,
            self.image_size,
            self.patch_size,
            self.embed_dim,
            self.layers,
            self.heads,
            self.mlp_ratio,
            self.out_dim,
        ];
        if all.contains(&0) {
            return Err(Error::Config(format!("ViT extents must all be ≥ 1: {self:?}")));
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "ViT image size {} is not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "ViT embed dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Patch tokens plus the class token.
    pub fn tokens(&self) -> usize {
        self.patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    qkv_w: ParamId,
    qkv_b: ParamId,
    attn_out_w: ParamId,
    attn_out_b: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
    fc1_w: ParamId,
    fc1_b: ParamId,
    fc2_w: ParamId,
    fc2_b: ParamId,
}

/// Per-layer, per-head attention probabilities from one forward pass.
#[derive(Debug, Default)]
pub struct VitTrace {
    pub attention: Vec<Vec<Tensor>>,
}

/// Pre-norm vision transformer without a classification layer: the class
/// token's final embedding is projected to `out_dim` features.
#[derive(Debug, Clone)]
pub struct MicroViT {
    cfg: MicroViTConfig,
    patch_index: Arc<[usize]>,
    patch_w: ParamId,
    patch_b: ParamId,
    cls_token: ParamId,
    pos_embed: ParamId,
    blocks: Vec<Block>,
    ln_gain: ParamId,
    ln_bias: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
}

/// Row `p` of the patch matrix holds patch `p` (row-major over the grid),
/// flattened channel-major then row then column.
fn patch_indices(cfg: &MicroViTConfig) -> Arc<[usize]> {
    let (s, p, g, ch) = (cfg.image_size, cfg.patch_size, cfg.grid(), cfg.channels);
    let mut idx = Vec::with_capacity(cfg.patches() * cfg.patch_dim());
    for pr in 0..g {
        for pc in 0..g {
            for c in 0..ch {
                for y in 0..p {
                    for x in 0..p {
                        idx.push(c * s * s + (pr * p + y) * s + pc * p + x);
                    }
                }
            }
        }
    }
    idx.into()
}

impl MicroViT {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: MicroViTConfig, rng: &mut SplitMix64) -> Result<Self> {
        cfg.validate()?;
        let e = cfg.embed_dim;
        let hidden = e * cfg.mlp_ratio;
        let g = ParamGroup::Backbone;
        let mut normal = |store: &mut ParamStore, name: &str, shape: &[usize]| {
            let n = shape.iter().product();
            store.add(&format!("{prefix}.{name}"), shape, rng.truncated_normal_vec(n, INIT_STD), g)
        };
        let patch_w = normal(store, "patch_embed.w", &[cfg.patch_dim(), e])?;
        let cls_token = normal(store, "cls_token", &[1, e])?;
        let pos_embed = normal(store, "pos_embed", &[cfg.tokens(), e])?;
        let mut blocks = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let qkv_w = normal(store, &format!("block{l}.attn.qkv.w"), &[e, 3 * e])?;
            let attn_out_w = normal(store, &format!("block{l}.attn.out.w"), &[e, e])?;
            let fc1_w = normal(store, &format!("block{l}.mlp.fc1.w"), &[e, hidden])?;
            let fc2_w = normal(store, &format!("block{l}.mlp.fc2.w"), &[hidden, e])?;
            blocks.push((qkv_w, attn_out_w, fc1_w, fc2_w));
        }
        let proj_w = normal(store, "proj.w", &[e, cfg.out_dim])?;

        let zeros = |store: &mut ParamStore, name: &str, n: usize| {
            store.add(&format!("{prefix}.{name}"), &[n], vec![0.0; n], g)
        };
        let ones = |store: &mut ParamStore, name: &str, n: usize| {
            store.add(&format!("{prefix}.{name}"), &[n], vec![1.0; n], g)
        };
        let patch_b = zeros(store, "patch_embed.b", e)?;
        let blocks = blocks
            .into_iter()
            .enumerate()
            .map(|(l, (qkv_w, attn_out_w, fc1_w, fc2_w))| {
                Ok(Block {
                    ln1_gain: ones(store, &format!("block{l}.ln1.gain"), e)?,
                    ln1_bias: zeros(store, &format!("block{l}.ln1.bias"), e)?,
                    qkv_w,
                    qkv_b: zeros(store, &format!("block{l}.attn.qkv.b"), 3 * e)?,
                    attn_out_w,
                    attn_out_b: zeros(store, &format!("block{l}.attn.out.b"), e)?,
                    ln2_gain: ones(store, &format!("block{l}.ln2.gain"), e)?,
                    ln2_bias: zeros(store, &format!("block{l}.ln2.bias"), e)?,
                    fc1_w,
                    fc1_b: zeros(store, &format!("block{l}.mlp.fc1.b"), hidden)?,
                    fc2_w,
                    fc2_b: zeros(store, &format!("block{l}.mlp.fc2.b"), e)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ln_gain = ones(store, "ln.gain", e)?;
        let ln_bias = zeros(store, "ln.bias", e)?;
        let proj_b = zeros(store, "proj.b", cfg.out_dim)?;
        Ok(Self {
            patch_index: patch_indices(&cfg),
            cfg,
            patch_w,
            patch_b,
            cls_token,
            pos_embed,
            blocks,
            ln_gain,
            ln_bias,
            proj_w,
            proj_b,
        })
    }

    pub fn config(&self) -> &MicroViTConfig {
        &self.cfg
    }

    pub fn pos_embed_id(&self) -> ParamId {
        self.pos_embed
    }

    /// `[patches × patch_dim]` view of a `[ch×S×S]` image.
    pub fn patchify(&self, image: &Tensor) -> Result<Tensor> {
        let c = &self.cfg;
        image.expect_shape(&[c.channels, c.image_size, c.image_size], "ViT input")?;
        image.gather(Arc::clone(&self.patch_index), &[c.patches(), c.patch_dim()])
    }

    pub fn forward(&self, bound: &Bound, image: &Tensor) -> Result<Tensor> {
        self.forward_traced(bound, image, None)
    }

    pub fn forward_traced(&self, bound: &Bound, image: &Tensor, mut trace: Option<&mut VitTrace>) -> Result<Tensor> {
        let p = |id| bound.get(id);
        let patches = self.patchify(image)?;
        let tokens = linear(&patches, p(self.patch_w), p(self.patch_b))?;
        let mut x = Tensor::concat(&[p(self.cls_token).clone(), tokens])?.add(p(self.pos_embed))?;
        for block in &self.blocks {
            let heads = trace.as_deref_mut().map(|t| {
                t.attention.push(Vec::new());
                t.attention.last_mut().expect("just pushed")
            });
            let h = x.layer_norm_rows(p(block.ln1_gain), p(block.ln1_bias), LN_EPS)?;
            x = x.add(&self.attention(bound, block, &h, heads)?)?;
            let h = x.layer_norm_rows(p(block.ln2_gain), p(block.ln2_bias), LN_EPS)?;
            let h = linear(&h, p(block.fc1_w), p(block.fc1_b))?.gelu();
            x = x.add(&linear(&h, p(block.fc2_w), p(block.fc2_b))?)?;
        }
        let x = x.layer_norm_rows(p(self.ln_gain), p(self.ln_bias), LN_EPS)?;
        let cls = x.select(0)?;
        super::linear_vec(&cls, p(self.proj_w), p(self.proj_b))
    }

    fn attention(&self, bound: &Bound, block: &Block, x: &Tensor, mut trace: Option<&mut Vec<Tensor>>) -> Result<Tensor> {
        let e = self.cfg.embed_dim;
        let dh = self.cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let qkv = linear(x, bound.get(block.qkv_w), bound.get(block.qkv_b))?;
        let mut outs = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let q = qkv.slice_cols(h * dh, dh)?;
            let k = qkv.slice_cols(e + h * dh, dh)?;
            let v = qkv.slice_cols(2 * e + h * dh, dh)?;
            let attn = q.matmul(&k.transpose()?)?.scale(scale).softmax_rows()?;
            if let Some(t) = trace.as_deref_mut() {
                t.push(attn.clone());
            }
            outs.push(attn.matmul(&v)?);
        }
        let merged = if outs.len() == 1 {
            outs.pop().expect("one head")
        } else {
            Tensor::concat_cols(&outs)?
        };
        linear(&merged, bound.get(block.attn_out_w), bound.get(block.attn_out_b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MicroViTConfig {
        MicroViTConfig {
            channels: 3,
            image_size: 8,
            patch_size: 4,
            embed_dim: 8,
            layers: 2,
            heads: 2,
            mlp_ratio: 2,
            out_dim: 5,
        }
    }

    fn build(cfg: MicroViTConfig, seed: u64) -> (ParamStore, MicroViT) {
        let mut store = ParamStore::new();
        let mut rng = SplitMix64::new(seed);
        let vit = MicroViT::new(&mut store, "vit", cfg, &mut rng).unwrap();
        (store, vit)
    }

    fn image(cfg: &MicroViTConfig, seed: u64) -> Tensor {
        let mut rng = SplitMix64::new(seed);
        let n = cfg.channels * cfg.image_size * cfg.image_size;
        Tensor::new((0..n).map(|_| rng.uniform()).collect(), &[cfg.channels, cfg.image_size, cfg.image_size])
            .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(MicroViTConfig::default().validate().is_ok());
        let bad = MicroViTConfig { patch_size: 5, ..MicroViTConfig::default() };
        assert!(bad.validate().is_err());
        let bad = MicroViTConfig { heads: 3, ..MicroViTConfig::default() };
        assert!(bad.validate().is_err());
        let bad = MicroViTConfig { layers: 0, ..MicroViTConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn output_is_feature_vector() {
        let cfg = tiny();
        let (store, vit) = build(cfg.clone(), 1);
        let out = vit.forward(&store.bind(false), &image(&cfg, 2)).unwrap();
        assert_eq!(out.shape(), &[5]);
        let wrong = Tensor::zeros(&[3, 8, 9]);
        assert!(matches!(vit.forward(&store.bind(false), &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn attention_rows_are_distributions() {
        let cfg = tiny();
        let (store, vit) = build(cfg.clone(), 3);
        let mut trace = VitTrace::default();
        vit.forward_traced(&store.bind(false), &image(&cfg, 4), Some(&mut trace)).unwrap();
        assert_eq!(trace.attention.len(), cfg.layers);
        for layer in &trace.attention {
            assert_eq!(layer.len(), cfg.heads);
            for a in layer {
                assert_eq!(a.shape(), &[cfg.tokens(), cfg.tokens()]);
                for row in a.data().chunks(cfg.tokens()) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                    assert!(row.iter().all(|&p| p >= 0.0));
                }
            }
        }
    }

    #[test]
    fn patch_layout_is_row_major_over_grid() {
        let cfg = tiny();
        let (_, vit) = build(cfg.clone(), 1);
        let n = 3 * 8 * 8;
        let img = Tensor::new((0..n).map(|i| i as f64).collect(), &[3, 8, 8]).unwrap();
        let p = vit.patchify(&img).unwrap();
        assert_eq!(p.shape(), &[4, 48]);
        // Patch 1 is the top-right 4×4 block; its first pixel is (0, 4).
        assert_eq!(p.data()[48], 4.0);
        // Second channel of patch 0 starts at 64.
        assert_eq!(p.data()[16], 64.0);
    }

    #[test]
    fn swapping_patches_and_positions_is_invisible() {
        let cfg = tiny();
        let (mut store, vit) = build(cfg.clone(), 5);
        let img = image(&cfg, 6);
        let before = vit.forward(&store.bind(false), &img).unwrap();

        // Swap patches 0 and 3 (top-left and bottom-right 4×4 blocks).
        let mut swapped = img.to_vec();
        let s = cfg.image_size;
        for c in 0..cfg.channels {
            for y in 0..4 {
                for x in 0..4 {
                    swapped.swap(c * s * s + y * s + x, c * s * s + (y + 4) * s + x + 4);
                }
            }
        }
        let swapped = Tensor::new(swapped, img.shape()).unwrap();
        let e = cfg.embed_dim;
        let pos = &mut store.get_mut(vit.pos_embed_id()).value;
        for j in 0..e {
            pos.swap(e + j, 4 * e + j);
        }
        let after = vit.forward(&store.bind(false), &swapped).unwrap();
        for (a, b) in before.data().iter().zip(after.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn every_parameter_receives_a_gradient() {
        let cfg = tiny();
        let (store, vit) = build(cfg.clone(), 7);
        let bound = store.bind(true);
        vit.forward(&bound, &image(&cfg, 8)).unwrap().sum().backward().unwrap();
        for ((_, p), g) in store.iter().zip(bound.grads()) {
            assert!(g.is_some(), "{} has no gradient", p.name);
        }
    }

    #[test]
    fn single_head_path() {
        let cfg = MicroViTConfig { heads: 1, ..tiny() };
        let (store, vit) = build(cfg.clone(), 9);
        let out = vit.forward(&store.bind(false), &image(&cfg, 1)).unwrap();
        assert_eq!(out.shape(), &[5]);
    }
}

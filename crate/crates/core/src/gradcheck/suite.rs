//! The full finite-difference suite: every tensor operation on random
//! inputs, the composite building blocks, both backbones and the complete
//! training objective of each model variant.

use std::sync::Arc;
use std::time::{Duration, Instant};

use super::{check, check_selected, GradCheckConfig, GradCheckReport};
use crate::backbones::{MicroResNet, MicroResNetConfig, MicroViT};
use crate::bayes::{self, BayesLinearParams};
use crate::dct::DctPlan;
use crate::error::Result;
use crate::freq::{band_decompose, compute_masks, CutoffOrdering, CutoffParams, FrequencyIndexMap};
use crate::fusion;
use crate::model::{Model, ModelConfig, Variant};
use crate::params::{Bound, ParamStore};
use crate::rng::SplitMix64;
use crate::tensor::{Conv2dSpec, Tensor};
use crate::train::{batch_loss, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    /// Random inputs per operation.
    pub trials: usize,
    pub seed: u64,
    pub check: GradCheckConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            trials: 10,
            seed: 0,
            check: GradCheckConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub reports: Vec<GradCheckReport>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(GradCheckReport::passed)
    }

    pub fn get(&self, name: &str) -> Option<&GradCheckReport> {
        self.reports.iter().find(|r| r.name == name)
    }

    pub fn worst_rel_error(&self) -> f64 {
        self.reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    /// One line per check plus a summary line.
    pub fn lines(&self) -> Vec<String> {
        let width = self.reports.iter().map(|r| r.name.len()).max().unwrap_or(0);
        let mut out: Vec<String> = self
            .reports
            .iter()
            .map(|r| {
                format!(
                    "{:<width$}  {}  max_rel={:.3e}  max_abs={:.3e}  checked={}  kinks_skipped={}",
                    r.name,
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.max_rel_error,
                    r.max_abs_error,
                    r.checked,
                    r.kinks_skipped,
                )
            })
            .collect();
        let failed = self.reports.iter().filter(|r| !r.passed()).count();
        out.push(format!(
            "{} checks, {failed} failed, worst relative error {:.3e}, {:.1}s",
            self.reports.len(),
            self.worst_rel_error(),
            self.elapsed.as_secs_f64()
        ));
        out
    }
}

type Inputs = Vec<(Vec<f64>, Vec<usize>)>;
type Op = fn(&[Tensor]) -> Result<Tensor>;
type Maker = fn(&mut SplitMix64) -> Inputs;

fn normal(rng: &mut SplitMix64, shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    (rng.normal_vec(shape.iter().product(), 1.0), shape.to_vec())
}

fn positive(rng: &mut SplitMix64, shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let n = shape.iter().product();
    ((0..n).map(|_| rng.uniform_range(0.5, 2.0)).collect(), shape.to_vec())
}

/// Values bounded away from zero, either sign.
fn nonzero(rng: &mut SplitMix64, shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let (mut v, s) = positive(rng, shape);
    for x in &mut v {
        if rng.bernoulli(0.5) {
            *x = -*x;
        }
    }
    (v, s)
}

/// Raw cutoff pair around the equal-thirds start.
fn raw_cutoffs(rng: &mut SplitMix64) -> Inputs {
    let c1 = rng.uniform_range(0.2, 0.45);
    let c2 = rng.uniform_range(c1 + 0.1, 0.85);
    let p = CutoffParams::from_cutoffs(c1, c2, 50.0, CutoffOrdering::Ordered).expect("valid cutoffs");
    vec![(vec![p.raw_c1], vec![]), (vec![p.raw_c2], vec![])]
}

fn fixed_noise(n: usize, seed: u64) -> Vec<f64> {
    SplitMix64::new(seed).normal_vec(n, 1.0)
}

fn bayes_params(t: &[Tensor]) -> BayesLinearParams {
    BayesLinearParams {
        mu_w: t[1].clone(),
        logvar_w: t[2].clone(),
        mu_b: t[3].clone(),
        logvar_b: t[4].clone(),
        prior_sigma: 0.7,
    }
}

fn bayes_inputs(rng: &mut SplitMix64) -> Inputs {
    let logvar = |rng: &mut SplitMix64, n: usize| -> Vec<f64> { (0..n).map(|_| rng.uniform_range(-3.0, 0.5)).collect() };
    vec![
        normal(rng, &[5]),
        normal(rng, &[3, 5]),
        (logvar(rng, 15), vec![3, 5]),
        normal(rng, &[3]),
        (logvar(rng, 3), vec![3]),
    ]
}

fn op_cases() -> Vec<(&'static str, Maker, Op)> {
    vec![
        ("add", |r| vec![normal(r, &[3, 4]), normal(r, &[3, 4])], |t| t[0].add(&t[1])),
        ("add_broadcast", |r| vec![normal(r, &[3, 4]), normal(r, &[])], |t| t[0].add(&t[1])),
        ("sub", |r| vec![normal(r, &[3, 4]), normal(r, &[3, 4])], |t| t[0].sub(&t[1])),
        ("mul", |r| vec![normal(r, &[3, 4]), normal(r, &[3, 4])], |t| t[0].mul(&t[1])),
        ("mul_broadcast", |r| vec![normal(r, &[]), normal(r, &[2, 3])], |t| t[0].mul(&t[1])),
        ("div", |r| vec![normal(r, &[3, 4]), nonzero(r, &[3, 4])], |t| t[0].div(&t[1])),
        ("pow", |r| vec![positive(r, &[6]), normal(r, &[6])], |t| t[0].pow(&t[1])),
        ("add_scalar", |r| vec![normal(r, &[5])], |t| Ok(t[0].add_scalar(0.7))),
        ("rsub_scalar", |r| vec![normal(r, &[5])], |t| Ok(t[0].rsub_scalar(1.3))),
        ("scale", |r| vec![normal(r, &[5])], |t| Ok(t[0].scale(-2.5))),
        ("powf", |r| vec![positive(r, &[5])], |t| Ok(t[0].powf(2.5))),
        ("neg", |r| vec![normal(r, &[5])], |t| Ok(t[0].neg())),
        ("exp", |r| vec![normal(r, &[5])], |t| Ok(t[0].exp())),
        ("log", |r| vec![positive(r, &[5])], |t| Ok(t[0].log())),
        ("sqrt", |r| vec![positive(r, &[5])], |t| Ok(t[0].sqrt())),
        ("sigmoid", |r| vec![normal(r, &[5])], |t| Ok(t[0].sigmoid())),
        ("tanh", |r| vec![normal(r, &[5])], |t| Ok(t[0].tanh())),
        ("cos", |r| vec![normal(r, &[5])], |t| Ok(t[0].cos())),
        ("relu", |r| vec![normal(r, &[8])], |t| Ok(t[0].relu())),
        ("gelu", |r| vec![normal(r, &[8])], |t| Ok(t[0].gelu())),
        ("sum", |r| vec![normal(r, &[3, 4])], |t| Ok(t[0].sum())),
        ("mean", |r| vec![normal(r, &[3, 4])], |t| Ok(t[0].mean())),
        ("matmul", |r| vec![normal(r, &[4, 5]), normal(r, &[5, 3])], |t| t[0].matmul(&t[1])),
        ("transpose", |r| vec![normal(r, &[3, 5])], |t| t[0].transpose()),
        ("softmax", |r| vec![normal(r, &[6])], |t| t[0].softmax()),
        ("softmax_rows", |r| vec![normal(r, &[3, 5])], |t| t[0].softmax_rows()),
        ("cross_entropy", |r| vec![normal(r, &[5])], |t| t[0].cross_entropy(2)),
        ("add_row", |r| vec![normal(r, &[4, 3]), normal(r, &[3])], |t| t[0].add_row(&t[1])),
        (
            "layer_norm_rows",
            |r| vec![normal(r, &[4, 6]), normal(r, &[6]), normal(r, &[6])],
            |t| t[0].layer_norm_rows(&t[1], &t[2], 1e-6),
        ),
        (
            "conv2d",
            |r| vec![normal(r, &[2, 5, 5]), normal(r, &[3, 2, 3, 3]), normal(r, &[3])],
            |t| t[0].conv2d(&t[1], Some(&t[2]), Conv2dSpec { stride: 1, padding: 1 }),
        ),
        (
            "conv2d_strided",
            |r| vec![normal(r, &[2, 6, 6]), normal(r, &[3, 2, 3, 3])],
            |t| t[0].conv2d(&t[1], None, Conv2dSpec { stride: 2, padding: 1 }),
        ),
        (
            "conv2d_1x1",
            |r| vec![normal(r, &[3, 5, 5]), normal(r, &[2, 3, 1, 1])],
            |t| t[0].conv2d(&t[1], None, Conv2dSpec { stride: 2, padding: 0 }),
        ),
        (
            "channel_affine",
            |r| vec![normal(r, &[3, 4, 4]), normal(r, &[3]), normal(r, &[3])],
            |t| t[0].channel_affine(&t[1], &t[2]),
        ),
        ("mean_inner", |r| vec![normal(r, &[3, 4, 2])], |t| t[0].mean_inner()),
        ("reshape", |r| vec![normal(r, &[3, 4])], |t| t[0].reshape(&[2, 6])),
        (
            "gather",
            |r| vec![normal(r, &[6])],
            |t| t[0].gather(Arc::from(vec![5, 0, 0, 3, 5, 1, 2, 2]), &[2, 4]),
        ),
        ("select", |r| vec![normal(r, &[3, 2, 2])], |t| t[0].select(1)),
        ("slice_cols", |r| vec![normal(r, &[3, 5])], |t| t[0].slice_cols(1, 3)),
        (
            "concat",
            |r| vec![normal(r, &[2, 3]), normal(r, &[1, 3])],
            |t| Tensor::concat(&t[..2]),
        ),
        (
            "stack",
            |r| vec![normal(r, &[2, 3]), normal(r, &[2, 3])],
            |t| Tensor::stack(&t[..2]),
        ),
        (
            "concat_cols",
            |r| vec![normal(r, &[3, 2]), normal(r, &[3, 1])],
            |t| Tensor::concat_cols(&t[..2]),
        ),
        ("expand0", |r| vec![normal(r, &[2, 2])], |t| Ok(t[0].expand0(3))),
        (
            "dct2",
            |r| vec![normal(r, &[2, 5, 4])],
            |t| DctPlan::cached(5, 4)?.dct2(&t[0]),
        ),
        (
            "idct2",
            |r| vec![normal(r, &[2, 5, 4])],
            |t| DctPlan::cached(5, 4)?.idct2(&t[0]),
        ),
        (
            "band_decompose",
            |r| {
                let mut v = vec![normal(r, &[3, 6, 6])];
                v.extend(raw_cutoffs(r));
                v
            },
            |t| {
                let (c1, c2) = CutoffParams::derive(&t[1], &t[2], CutoffOrdering::Ordered)?;
                let masks = compute_masks(&c1, &c2, 50.0, &FrequencyIndexMap::new(6, 6)?)?;
                let b = band_decompose(&t[0], &masks, &*DctPlan::cached(6, 6)?)?;
                Tensor::stack(&[b.low, b.mid, b.high])
            },
        ),
        (
            "fusion",
            |r| vec![normal(r, &[6]), normal(r, &[6]), normal(r, &[6]), normal(r, &[3])],
            |t| fusion::fuse(&t[..3], &t[3]),
        ),
        ("fusion_entropy", |r| vec![normal(r, &[4])], |t| fusion::fusion_entropy(&t[0])),
        (
            "bayes_logits",
            bayes_inputs,
            |t| {
                let p = bayes_params(t);
                let eps_w = Tensor::new(fixed_noise(15, 31), &[3, 5])?;
                let eps_b = Tensor::new(fixed_noise(3, 32), &[3])?;
                let (w, b) = bayes::sample_weights(&p, &eps_w, &eps_b)?;
                bayes::logits(&t[0], &w, &b)
            },
        ),
        ("bayes_kl", bayes_inputs, |t| bayes::kl_loss(&bayes_params(t))),
    ]
}

/// Checks `sum(op(x) ⊙ R)` for a fixed random projection `R`, so that every
/// output element contributes a distinct weight.
fn check_op(name: &str, make: Maker, op: Op, rng: &mut SplitMix64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut inputs = make(rng);
    let consts: Vec<Tensor> = inputs
        .iter()
        .map(|(v, s)| Tensor::new(v.clone(), s))
        .collect::<Result<_>>()?;
    let out_shape = op(&consts)?.shape().to_vec();
    inputs.push(normal(rng, &out_shape));
    let n = inputs.len() - 1;
    check(
        name,
        &inputs,
        |t| op(&t[..n])?.mul(&t[n]).map(|p| p.sum()),
        cfg,
    )
}

fn store_inputs(store: &ParamStore) -> Inputs {
    store.iter().map(|(_, p)| (p.value.clone(), p.shape.clone())).collect()
}

fn random_image(rng: &mut SplitMix64, size: usize) -> Tensor {
    let data = (0..3 * size * size).map(|_| rng.uniform()).collect();
    Tensor::new(data, &[3, size, size]).expect("image shape")
}

fn projected(out: Tensor, weights: &[f64]) -> Result<Tensor> {
    let r = Tensor::new(weights.to_vec(), out.shape())?;
    Ok(out.mul(&r)?.sum())
}

fn check_vit(rng: &mut SplitMix64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let vit_cfg = ModelConfig::tiny(Variant::Vit).vit_config();
    let mut store = ParamStore::new();
    let vit = MicroViT::new(&mut store, "vit", vit_cfg.clone(), rng)?;
    let image = random_image(rng, vit_cfg.image_size);
    let weights = rng.normal_vec(vit_cfg.out_dim, 1.0);
    check(
        "backbone.vit",
        &store_inputs(&store),
        |t| projected(vit.forward(&Bound::from_tensors(t.to_vec()), &image)?, &weights),
        cfg,
    )
}

fn check_resnet(rng: &mut SplitMix64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let res_cfg = MicroResNetConfig {
        channels: 3,
        image_size: 8,
        stages: vec![3, 4],
        blocks_per_stage: 1,
        out_dim: 5,
    };
    let mut store = ParamStore::new();
    let net = MicroResNet::new(&mut store, "resnet", res_cfg, rng)?;
    let image = random_image(rng, 8);
    let weights = rng.normal_vec(5, 1.0);
    check(
        "backbone.resnet",
        &store_inputs(&store),
        |t| projected(net.forward(&Bound::from_tensors(t.to_vec()), &image)?, &weights),
        cfg,
    )
}

/// Parameter groups reported separately for the end-to-end check; all
/// remaining parameters fall under `backbones`.
const PIPELINE_GROUPS: [&str; 7] = [
    "freq.raw_c1",
    "freq.raw_c2",
    "fusion.u",
    "head.mu_w",
    "head.mu_b",
    "head.logvar_w",
    "head.logvar_b",
];

/// The complete training objective (cross-entropy, scaled KL, fusion
/// entropy) over a two-image batch, differentiated with respect to every
/// model parameter.
fn check_pipeline(variant: Variant, rng: &mut SplitMix64, cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mcfg = ModelConfig {
        shared_vit: false,
        ..ModelConfig::tiny(variant)
    };
    let model = Model::new(mcfg, rng.next_u64())?;
    let train_cfg = TrainConfig {
        entropy_reg: 0.05,
        alpha: 0.5,
        ..TrainConfig::default()
    };
    let images = [random_image(rng, 8), random_image(rng, 8)];
    let refs: Vec<&Tensor> = images.iter().collect();
    let labels = [rng.below(3), rng.below(3)];
    let noise = model.draw_noise(rng);
    let inputs = store_inputs(model.store());
    let f = |t: &[Tensor]| {
        let bound = Bound::from_tensors(t.to_vec());
        batch_loss(&model, &bound, &refs, &labels, noise.as_ref(), &train_cfg, 4.0, 2, true).map(|p| p.loss)
    };

    let mut groups: Vec<(String, Vec<(usize, usize)>)> = Vec::new();
    let mut rest = Vec::new();
    for (id, p) in model.store().iter() {
        let elems = (0..p.value.len()).map(|j| (id.index(), j));
        if PIPELINE_GROUPS.contains(&p.name.as_str()) {
            groups.push((p.name.clone(), elems.collect()));
        } else {
            rest.extend(elems);
        }
    }
    groups.push(("backbones".into(), rest));
    groups
        .iter()
        .map(|(name, sel)| {
            check_selected(&format!("pipeline.{variant}.{name}"), &inputs, Some(sel), f, cfg)
        })
        .collect()
}

/// Runs every check. Each operation is exercised on `cfg.trials` random
/// inputs; its report aggregates the worst error over all of them.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut reports = Vec::new();
    for (i, (name, make, op)) in op_cases().into_iter().enumerate() {
        let mut merged: Option<GradCheckReport> = None;
        for trial in 0..cfg.trials.max(1) {
            let mut rng = SplitMix64::keyed(cfg.seed, &[i as u64, trial as u64]);
            let r = check_op(name, make, op, &mut rng, &cfg.check)?;
            match &mut merged {
                Some(m) => m.merge(&r),
                None => merged = Some(r),
            }
        }
        reports.extend(merged);
    }
    let mut rng = SplitMix64::keyed(cfg.seed, &[0xB0]);
    reports.push(check_vit(&mut rng, &cfg.check)?);
    reports.push(check_resnet(&mut rng, &cfg.check)?);
    for v in Variant::ALL {
        let mut rng = SplitMix64::keyed(cfg.seed, &[0xE2E, v as u64]);
        reports.extend(check_pipeline(v, &mut rng, &cfg.check)?);
    }
    Ok(SuiteReport { reports, elapsed: start.elapsed() })
}

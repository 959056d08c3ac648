//! Variational Bayesian linear classifier with a diagonal Gaussian
//! posterior over every weight and bias and an isotropic Gaussian prior.

use crate::error::{Error, Result};
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub const DEFAULT_MU_STD: f64 = 0.05;
pub const DEFAULT_LOGVAR_INIT: f64 = -6.0;

/// How test-time logits are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    /// Logits at the posterior means.
    Mean,
    /// Average of `S` sampled-logit vectors.
    MonteCarlo(usize),
}

impl PredictMode {
    /// `mean` or `mc:<S>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(PredictMode::Mean),
            _ => {
                let n = s
                    .strip_prefix("mc:")
                    .and_then(|n| n.parse::<usize>().ok())
                    .ok_or_else(|| Error::Config(format!("predict mode must be `mean` or `mc:<S>`, got `{s}`")))?;
                if n == 0 {
                    return Err(Error::domain("mc prediction needs S ≥ 1"));
                }
                Ok(PredictMode::MonteCarlo(n))
            }
        }
    }
}

/// Handles to the four posterior tensors inside a [`ParamStore`].
/// Weights are stored `[C×D]`, so logits are `W·x + b`.
#[derive(Debug, Clone)]
pub struct BayesLinear {
    pub mu_w: ParamId,
    pub logvar_w: ParamId,
    pub mu_b: ParamId,
    pub logvar_b: ParamId,
    pub classes: usize,
    pub features: usize,
    pub prior_sigma: f64,
}

/// Bound posterior tensors for one graph.
#[derive(Debug, Clone)]
pub struct BayesLinearParams {
    pub mu_w: Tensor,
    pub logvar_w: Tensor,
    pub mu_b: Tensor,
    pub logvar_b: Tensor,
    pub prior_sigma: f64,
}

impl BayesLinear {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        features: usize,
        classes: usize,
        prior_sigma: f64,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        if prior_sigma <= 0.0 || !prior_sigma.is_finite() {
            return Err(Error::Config(format!("prior sigma must be positive, got {prior_sigma}")));
        }
        let g = ParamGroup::Head;
        let n = classes * features;
        Ok(Self {
            mu_w: store.add(&format!("{prefix}.mu_w"), &[classes, features], rng.truncated_normal_vec(n, DEFAULT_MU_STD), g)?,
            logvar_w: store.add(&format!("{prefix}.logvar_w"), &[classes, features], vec![DEFAULT_LOGVAR_INIT; n], g)?,
            mu_b: store.add(&format!("{prefix}.mu_b"), &[classes], vec![0.0; classes], g)?,
            logvar_b: store.add(&format!("{prefix}.logvar_b"), &[classes], vec![DEFAULT_LOGVAR_INIT; classes], g)?,
            classes,
            features,
            prior_sigma,
        })
    }

    pub fn bind(&self, bound: &Bound) -> BayesLinearParams {
        BayesLinearParams {
            mu_w: bound.get(self.mu_w).clone(),
            logvar_w: bound.get(self.logvar_w).clone(),
            mu_b: bound.get(self.mu_b).clone(),
            logvar_b: bound.get(self.logvar_b).clone(),
            prior_sigma: self.prior_sigma,
        }
    }
}

impl BayesLinearParams {
    pub fn classes(&self) -> usize {
        self.mu_b.numel()
    }

    pub fn features(&self) -> usize {
        self.mu_w.numel() / self.classes().max(1)
    }

    /// Standard-normal noise shaped like `(W, b)`.
    pub fn draw_noise(&self, rng: &mut SplitMix64) -> (Tensor, Tensor) {
        let w = Tensor::new(rng.normal_vec(self.mu_w.numel(), 1.0), self.mu_w.shape()).expect("same shape");
        let b = Tensor::vector(rng.normal_vec(self.mu_b.numel(), 1.0));
        (w, b)
    }
}

/// `w = μ + exp(ℓ/2)·ε` for weights and biases.
pub fn sample_weights(p: &BayesLinearParams, eps_w: &Tensor, eps_b: &Tensor) -> Result<(Tensor, Tensor)> {
    eps_w.expect_shape(p.mu_w.shape(), "weight noise")?;
    eps_b.expect_shape(p.mu_b.shape(), "bias noise")?;
    let w = p.mu_w.add(&p.logvar_w.scale(0.5).exp().mul(eps_w)?)?;
    let b = p.mu_b.add(&p.logvar_b.scale(0.5).exp().mul(eps_b)?)?;
    Ok((w, b))
}

/// `z = W·x + b` for `W: [C×D]`, `x: [D]`, `b: [C]`.
pub fn logits(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    w.expect_rank(2, "logit weights")?;
    let (c, d) = (w.shape()[0], w.shape()[1]);
    x.expect_shape(&[d], "logit input")?;
    b.expect_shape(&[c], "logit bias")?;
    w.matmul(&x.reshape(&[d, 1])?)?.reshape(&[c])?.add(b)
}

/// Closed-form `KL(q ‖ p)` summed over all weights and biases:
/// `log σ_p − ℓ/2 + (exp(ℓ) + μ²)/(2σ_p²) − 1/2` per element.
pub fn kl_loss(p: &BayesLinearParams) -> Result<Tensor> {
    let sp = p.prior_sigma;
    if sp <= 0.0 || !sp.is_finite() {
        return Err(Error::domain(format!("prior sigma must be positive, got {sp}")));
    }
    let inv2 = 1.0 / (2.0 * sp * sp);
    let term = |mu: &Tensor, lv: &Tensor| -> Result<Tensor> {
        let quad = lv.exp().add(&mu.mul(mu)?)?.scale(inv2);
        Ok(quad.sub(&lv.scale(0.5))?.add_scalar(sp.ln() - 0.5).sum())
    };
    term(&p.mu_w, &p.logvar_w)?.add(&term(&p.mu_b, &p.logvar_b)?)
}

/// Test-time logits. The `rng` is only consumed in Monte Carlo mode.
pub fn predictive_logits(x: &Tensor, p: &BayesLinearParams, mode: PredictMode, rng: &mut SplitMix64) -> Result<Tensor> {
    match mode {
        PredictMode::Mean => logits(x, &p.mu_w, &p.mu_b),
        PredictMode::MonteCarlo(0) => Err(Error::domain("mc prediction needs S ≥ 1")),
        PredictMode::MonteCarlo(s) => {
            let mut acc = vec![0.0; p.classes()];
            for _ in 0..s {
                let (ew, eb) = p.draw_noise(rng);
                let (w, b) = sample_weights(&p.detached(), &ew, &eb)?;
                for (a, z) in acc.iter_mut().zip(logits(&x.detach(), &w, &b)?.data()) {
                    *a += z;
                }
            }
            Ok(Tensor::vector(acc.into_iter().map(|a| a / s as f64).collect()))
        }
    }
}

impl BayesLinearParams {
    fn detached(&self) -> Self {
        Self {
            mu_w: self.mu_w.detach(),
            logvar_w: self.logvar_w.detach(),
            mu_b: self.mu_b.detach(),
            logvar_b: self.logvar_b.detach(),
            prior_sigma: self.prior_sigma,
        }
    }
}

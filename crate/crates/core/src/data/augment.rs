//! Spatial and spectral augmentations. Every random decision is drawn from
//! the caller's generator, so a fixed seed reproduces the output exactly.

use super::{resize_plane, ImageSample};
use crate::dct::{dct2_plane, idct2_plane, DctPlan};
use crate::error::{Error, Result};
use crate::freq::FrequencyIndexMap;
use crate::rng::SplitMix64;

/// Normalized-frequency width of a spectral band mask.
pub const BAND_MASK_WIDTH: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Probability of a random resized crop.
    pub crop_prob: f64,
    /// Range of the crop's area fraction.
    pub crop_scale: (f64, f64),
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Per-channel gain `1 + U(−j, j)` and offset `U(−j, j)/2`.
    pub jitter: f64,
    pub blur_prob: f64,
    pub blur_sigma: f64,
    /// Std of Gaussian noise added to DCT coefficients.
    pub spectral_noise: f64,
    pub band_mask_prob: f64,
}

impl Default for AugmentConfig {
    /// Everything off.
    fn default() -> Self {
        Self {
            crop_prob: 0.0,
            crop_scale: (0.6, 1.0),
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            jitter: 0.0,
            blur_prob: 0.0,
            blur_sigma: 1.0,
            spectral_noise: 0.0,
            band_mask_prob: 0.0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("augment.crop_prob", self.crop_prob),
            ("augment.hflip_prob", self.hflip_prob),
            ("augment.vflip_prob", self.vflip_prob),
            ("augment.blur_prob", self.blur_prob),
            ("augment.band_mask_prob", self.band_mask_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        let (lo, hi) = self.crop_scale;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("crop scale range must satisfy 0 < lo ≤ hi ≤ 1, got ({lo}, {hi})")));
        }
        for (name, v) in [
            ("augment.jitter", self.jitter),
            ("augment.blur_sigma", self.blur_sigma),
            ("augment.spectral_noise", self.spectral_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.crop_prob == 0.0
            && self.hflip_prob == 0.0
            && self.vflip_prob == 0.0
            && self.jitter == 0.0
            && self.blur_prob == 0.0
            && self.spectral_noise == 0.0
            && self.band_mask_prob == 0.0
    }
}

pub fn hflip(pixels: &mut [f64], s: usize) {
    for row in pixels.chunks_exact_mut(s) {
        row.reverse();
    }
}

pub fn vflip(pixels: &mut [f64], s: usize) {
    for plane in pixels.chunks_exact_mut(s * s) {
        for y in 0..s / 2 {
            let (top, bottom) = plane.split_at_mut((s - 1 - y) * s);
            top[y * s..(y + 1) * s].swap_with_slice(&mut bottom[..s]);
        }
    }
}

fn crop_resize(pixels: &[f64], s: usize, side: usize, y0: usize, x0: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(pixels.len());
    for plane in pixels.chunks_exact(s * s) {
        let crop: Vec<f64> = (0..side)
            .flat_map(|y| plane[(y0 + y) * s + x0..(y0 + y) * s + x0 + side].iter().copied())
            .collect();
        out.extend(resize_plane(&crop, side, side, s, s));
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let d = i as f64 - r as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian blur with edge clamping.
pub fn blur(pixels: &mut [f64], s: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let at = |i: isize| i.clamp(0, s as isize - 1) as usize;
    for plane in pixels.chunks_exact_mut(s * s) {
        let mut tmp = vec![0.0; s * s];
        for y in 0..s {
            for x in 0..s {
                tmp[y * s + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, w)| w * plane[y * s + at(x as isize + i as isize - r)])
                    .sum();
            }
        }
        for y in 0..s {
            for x in 0..s {
                plane[y * s + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, w)| w * tmp[at(y as isize + i as isize - r) * s + x])
                    .sum();
            }
        }
    }
}

fn clamp_unit(pixels: &mut [f64]) {
    pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
}

/// Random resized crop, horizontal flip, vertical flip, color jitter and
/// Gaussian blur, in that order; the result is clamped to `[0, 1]`.
pub fn augment_spatial(sample: &ImageSample, cfg: &AugmentConfig, rng: &mut SplitMix64) -> ImageSample {
    let s = sample.size;
    let mut px = sample.pixels.clone();
    if rng.bernoulli(cfg.crop_prob) {
        let scale = rng.uniform_range(cfg.crop_scale.0, cfg.crop_scale.1);
        let side = (s as f64 * scale.sqrt()).round() as usize;
        if (1..s).contains(&side) {
            let y0 = rng.below(s - side + 1);
            let x0 = rng.below(s - side + 1);
            px = crop_resize(&px, s, side, y0, x0);
        }
    }
    if rng.bernoulli(cfg.hflip_prob) {
        hflip(&mut px, s);
    }
    if rng.bernoulli(cfg.vflip_prob) {
        vflip(&mut px, s);
    }
    if cfg.jitter > 0.0 {
        for plane in px.chunks_exact_mut(s * s) {
            let gain = 1.0 + rng.uniform_range(-cfg.jitter, cfg.jitter);
            let offset = 0.5 * rng.uniform_range(-cfg.jitter, cfg.jitter);
            plane.iter_mut().for_each(|v| *v = *v * gain + offset);
        }
    }
    if rng.bernoulli(cfg.blur_prob) {
        blur(&mut px, s, cfg.blur_sigma);
    }
    clamp_unit(&mut px);
    ImageSample { pixels: px, ..sample.clone() }
}

/// Zeroes every coefficient whose normalized frequency lies in `[lo, hi]`.
pub fn mask_band(coeffs: &mut [f64], f: &FrequencyIndexMap, lo: f64, hi: f64) {
    for plane in coeffs.chunks_exact_mut(f.values().len()) {
        for (c, &fv) in plane.iter_mut().zip(f.values()) {
            if (lo..=hi).contains(&fv) {
                *c = 0.0;
            }
        }
    }
}

/// Coefficient noise and an optional random band mask applied in the DCT
/// domain; the result is transformed back and clamped to `[0, 1]`.
pub fn augment_spectral(sample: &ImageSample, cfg: &AugmentConfig, rng: &mut SplitMix64) -> Result<ImageSample> {
    let s = sample.size;
    let plan = DctPlan::cached(s, s)?;
    let mut coeffs: Vec<f64> = sample.pixels.chunks_exact(s * s).flat_map(|p| dct2_plane(&plan, p)).collect();
    if cfg.spectral_noise > 0.0 {
        for c in coeffs.iter_mut() {
            *c += cfg.spectral_noise * rng.normal();
        }
    }
    if rng.bernoulli(cfg.band_mask_prob) {
        let lo = rng.uniform_range(0.0, 1.0 - BAND_MASK_WIDTH);
        mask_band(&mut coeffs, &FrequencyIndexMap::new(s, s)?, lo, lo + BAND_MASK_WIDTH);
    }
    let mut px: Vec<f64> = coeffs.chunks_exact(s * s).flat_map(|c| idct2_plane(&plan, c)).collect();
    clamp_unit(&mut px);
    Ok(ImageSample { pixels: px, ..sample.clone() })
}

//! Learnable soft partition of DCT coefficients into low, mid and high
//! frequency bands.
//!
//! Each coefficient position `(i, j)` of an `M×N` map gets the normalized
//! frequency index `f(i, j) = (i + j) / (M + N − 2)`. Two cutoffs
//! `0 < c1 ≤ c2 < 1` and a sharpness `k` define
//!
//! ```text
//! M_low  = σ(k (c1 − f))
//! M_high = σ(k (f − c2))
//! M_mid  = 1 − (M_low + M_high)
//! ```
//!
//! The masks multiply the coefficients of every channel; the inverse DCT of
//! each masked map is a band-specific image. Because the three masks sum to
//! one and the DCT is linear, the three band images add back up to the input.

use crate::dct::DctPlan;
use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Tensor};

/// Default sigmoid sharpness.
pub const DEFAULT_SHARPNESS: f64 = 50.0;

/// How the second raw parameter maps to `c2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CutoffOrdering {
    /// `c2 = c1 + (1 − c1)·σ(raw_c_2)`, so `c1 ≤ c2 < 1` always holds.
    #[default]
    Ordered,
    /// `c2 = σ(raw_c_2)` independently of `c1`; ordering is not enforced.
    Independent,
}

impl CutoffOrdering {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ordered" => Some(Self::Ordered),
            "independent" => Some(Self::Independent),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ordered => "ordered",
            Self::Independent => "independent",
        }
    }
}

/// Raw (unconstrained) cutoff values plus the fixed sharpness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffParams {
    pub raw_c1: f64,
    pub raw_c2: f64,
    pub k: f64,
    pub ordering: CutoffOrdering,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl CutoffParams {
    /// Raw values that reproduce the requested cutoffs.
    pub fn from_cutoffs(c1: f64, c2: f64, k: f64, ordering: CutoffOrdering) -> Result<Self> {
        if !(0.0 < c1 && c1 < 1.0 && 0.0 < c2 && c2 < 1.0) {
            return Err(Error::domain(format!(
                "cutoffs must lie in (0, 1), got c1 = {c1}, c2 = {c2}"
            )));
        }
        if k <= 0.0 || !k.is_finite() {
            return Err(Error::domain(format!("sharpness k must be positive, got {k}")));
        }
        let raw_c2 = match ordering {
            CutoffOrdering::Ordered => {
                if c2 <= c1 {
                    return Err(Error::domain(format!(
                        "ordered cutoffs need c1 < c2, got {c1} and {c2}"
                    )));
                }
                logit((c2 - c1) / (1.0 - c1))
            }
            CutoffOrdering::Independent => logit(c2),
        };
        Ok(Self {
            raw_c1: logit(c1),
            raw_c2,
            k,
            ordering,
        })
    }

    /// Equal thirds: `c1 = 1/3`, `c2 = 2/3`.
    pub fn equal_thirds(k: f64, ordering: CutoffOrdering) -> Self {
        Self::from_cutoffs(1.0 / 3.0, 2.0 / 3.0, k, ordering).expect("valid thirds")
    }

    pub fn c1(&self) -> f64 {
        sigmoid(self.raw_c1)
    }

    pub fn c2(&self) -> f64 {
        let c1 = self.c1();
        match self.ordering {
            CutoffOrdering::Ordered => c1 + (1.0 - c1) * sigmoid(self.raw_c2),
            CutoffOrdering::Independent => sigmoid(self.raw_c2),
        }
    }

    /// Differentiable `(c1, c2)` from raw scalar tensors.
    pub fn derive(raw_c1: &Tensor, raw_c2: &Tensor, ordering: CutoffOrdering) -> Result<(Tensor, Tensor)> {
        let c1 = raw_c1.sigmoid();
        let c2 = match ordering {
            CutoffOrdering::Ordered => c1.add(&c1.rsub_scalar(1.0).mul(&raw_c2.sigmoid())?)?,
            CutoffOrdering::Independent => raw_c2.sigmoid(),
        };
        Ok((c1, c2))
    }

    /// Masks as plain values (no graph).
    pub fn masks(&self, f: &FrequencyIndexMap) -> Result<MaskSet> {
        compute_masks(&Tensor::scalar(self.c1()), &Tensor::scalar(self.c2()), self.k, f)
    }
}

/// `f(i, j) = (i + j) / (M + N − 2)` over an `M×N` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyIndexMap {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FrequencyIndexMap {
    /// The 1×1 grid has no frequency range; its single entry is 0, i.e.
    /// everything belongs to the low band.
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!(
                "frequency index needs a non-empty grid, got {rows}×{cols}"
            )));
        }
        let denom = (rows + cols - 2) as f64;
        let values = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| if denom > 0.0 { (i + j) as f64 / denom } else { 0.0 }))
            .collect();
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.values.clone(), &[self.rows, self.cols]).expect("consistent map")
    }
}

/// Soft low/mid/high masks over an `M×N` coefficient grid.
#[derive(Debug, Clone)]
pub struct MaskSet {
    pub low: Tensor,
    pub mid: Tensor,
    pub high: Tensor,
}

impl MaskSet {
    pub fn bands(&self) -> [&Tensor; 3] {
        [&self.low, &self.mid, &self.high]
    }
}

/// Builds the three masks from scalar cutoff tensors. The mid mask is the
/// complement `1 − (low + high)`, so `(low + high) + mid` is exactly one in
/// floating point.
pub fn compute_masks(c1: &Tensor, c2: &Tensor, k: f64, f: &FrequencyIndexMap) -> Result<MaskSet> {
    if k <= 0.0 || !k.is_finite() {
        return Err(Error::domain(format!("sharpness k must be positive, got {k}")));
    }
    if c1.numel() != 1 || c2.numel() != 1 {
        return Err(Error::shape("cutoffs must be scalar tensors"));
    }
    let ft = f.to_tensor();
    let low = c1.sub(&ft)?.scale(k).sigmoid();
    let high = ft.sub(c2)?.scale(k).sigmoid();
    let mid = low.add(&high)?.rsub_scalar(1.0);
    Ok(MaskSet { low, mid, high })
}

/// Band-specific images of a `[ch×M×N]` input.
#[derive(Debug, Clone)]
pub struct Bands {
    pub low: Tensor,
    pub mid: Tensor,
    pub high: Tensor,
}

impl Bands {
    pub fn as_array(&self) -> [&Tensor; 3] {
        [&self.low, &self.mid, &self.high]
    }
}

/// `idct2(M_band ⊙ dct2(image))` for each band, with one mask shared by all
/// channels.
pub fn band_decompose(image: &Tensor, masks: &MaskSet, plan: &DctPlan) -> Result<Bands> {
    let coeffs = plan.dct2(image)?;
    let ch = image.shape()[0];
    let apply = |mask: &Tensor| -> Result<Tensor> {
        mask.expect_shape(&[plan.height(), plan.width()], "band mask")?;
        plan.idct2(&coeffs.mul(&mask.expand0(ch))?)
    };
    Ok(Bands {
        low: apply(&masks.low)?,
        mid: apply(&masks.mid)?,
        high: apply(&masks.high)?,
    })
}

//! Orthonormal 2-D DCT-II and its inverse (DCT-III), applied per channel to
//! the whole image.
//!
//! With `B[u][i] = α(u)·cos((2i+1)uπ / 2M)`, `α(0) = √(1/M)` and
//! `α(u) = √(2/M)` otherwise, the forward transform of one channel is
//! `C = B_M · f · B_Nᵀ` and the inverse is `f = B_Mᵀ · C · B_N`. Both are
//! compositions of matmuls and therefore differentiable.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// DCT coefficients `C(u, v)` laid out as `[channels × M × N]`.
pub type CoefficientMap = Tensor;

type PlanCache = HashMap<(usize, usize), Arc<DctPlan>>;

/// Cosine bases for an `M×N` grid. Immutable and `Send + Sync`.
#[derive(Debug, Clone, PartialEq)]
pub struct DctPlan {
    m: usize,
    n: usize,
    basis_m: Vec<f64>,
    basis_n: Vec<f64>,
}

/// Row-major `len×len` orthonormal DCT-II basis.
pub fn dct_basis(len: usize) -> Vec<f64> {
    let mut b = vec![0.0; len * len];
    let lf = len as f64;
    for u in 0..len {
        let alpha = if u == 0 { (1.0 / lf).sqrt() } else { (2.0 / lf).sqrt() };
        for i in 0..len {
            b[u * len + i] = alpha * (((2 * i + 1) * u) as f64 * PI / (2.0 * lf)).cos();
        }
    }
    b
}

impl DctPlan {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::shape(format!("DCT plan needs M, N ≥ 1, got {m}×{n}")));
        }
        Ok(Self {
            m,
            n,
            basis_m: dct_basis(m),
            basis_n: dct_basis(n),
        })
    }

    /// Shared plan for `(m, n)`, built once per process.
    pub fn cached(m: usize, n: usize) -> Result<Arc<DctPlan>> {
        static CACHE: OnceLock<Mutex<PlanCache>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(p) = guard.get(&(m, n)) {
            return Ok(Arc::clone(p));
        }
        let plan = Arc::new(DctPlan::new(m, n)?);
        guard.insert((m, n), Arc::clone(&plan));
        Ok(plan)
    }

    pub fn height(&self) -> usize {
        self.m
    }

    pub fn width(&self) -> usize {
        self.n
    }

    pub fn basis_rows(&self) -> &[f64] {
        &self.basis_m
    }

    pub fn basis_cols(&self) -> &[f64] {
        &self.basis_n
    }

    fn check(&self, t: &Tensor, what: &str) -> Result<usize> {
        t.expect_rank(3, what)?;
        if t.shape()[1] != self.m || t.shape()[2] != self.n {
            return Err(Error::shape(format!(
                "{what}: tensor {:?} does not match a {}×{} DCT plan",
                t.shape(),
                self.m,
                self.n
            )));
        }
        Ok(t.shape()[0])
    }

    fn bases(&self) -> Result<(Tensor, Tensor)> {
        Ok((
            Tensor::matrix(self.m, self.m, self.basis_m.clone())?,
            Tensor::matrix(self.n, self.n, self.basis_n.clone())?,
        ))
    }

    /// Forward transform of a `[ch×M×N]` image.
    pub fn dct2(&self, image: &Tensor) -> Result<CoefficientMap> {
        let ch = self.check(image, "dct2")?;
        let (bm, bn) = self.bases()?;
        let bn_t = bn.transpose()?;
        let planes = (0..ch)
            .map(|c| bm.matmul(&image.select(c)?)?.matmul(&bn_t))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&planes)
    }

    /// Inverse transform of a `[ch×M×N]` coefficient map.
    pub fn idct2(&self, coeffs: &CoefficientMap) -> Result<Tensor> {
        let ch = self.check(coeffs, "idct2")?;
        let (bm, bn) = self.bases()?;
        let bm_t = bm.transpose()?;
        let planes = (0..ch)
            .map(|c| bm_t.matmul(&coeffs.select(c)?)?.matmul(&bn))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&planes)
    }
}

/// Plain-slice forward transform of one `M×N` channel (no graph).
pub fn dct2_plane(plan: &DctPlan, plane: &[f64]) -> Vec<f64> {
    let (m, n) = (plan.m, plan.n);
    let mut tmp = vec![0.0; m * n];
    crate::tensor::gemm(m, m, n, &plan.basis_m, false, plane, false, 0.0, &mut tmp);
    let mut out = vec![0.0; m * n];
    crate::tensor::gemm(m, n, n, &tmp, false, &plan.basis_n, true, 0.0, &mut out);
    out
}

/// Plain-slice inverse transform of one `M×N` channel (no graph).
pub fn idct2_plane(plan: &DctPlan, coeffs: &[f64]) -> Vec<f64> {
    let (m, n) = (plan.m, plan.n);
    let mut tmp = vec![0.0; m * n];
    crate::tensor::gemm(m, m, n, &plan.basis_m, true, coeffs, false, 0.0, &mut tmp);
    let mut out = vec![0.0; m * n];
    crate::tensor::gemm(m, n, n, &tmp, false, &plan.basis_n, false, 0.0, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    /// Direct double sum over the definition, independent of the bases.
    fn naive_dct(m: usize, n: usize, f: &[f64]) -> Vec<f64> {
        let alpha = |k: usize, len: usize| {
            if k == 0 {
                (1.0 / len as f64).sqrt()
            } else {
                (2.0 / len as f64).sqrt()
            }
        };
        let mut c = vec![0.0; m * n];
        for u in 0..m {
            for v in 0..n {
                let mut acc = 0.0;
                for i in 0..m {
                    for j in 0..n {
                        acc += f[i * n + j]
                            * ((2 * i + 1) as f64 * u as f64 * PI / (2 * m) as f64).cos()
                            * ((2 * j + 1) as f64 * v as f64 * PI / (2 * n) as f64).cos();
                    }
                }
                c[u * n + v] = alpha(u, m) * alpha(v, n) * acc;
            }
        }
        c
    }

    fn random_image(rng: &mut SplitMix64, ch: usize, m: usize, n: usize) -> Tensor {
        Tensor::new(rng.normal_vec(ch * m * n, 1.0), &[ch, m, n]).unwrap()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn basis_is_orthonormal() {
        for len in [1, 2, 3, 5, 8, 32] {
            let b = dct_basis(len);
            for r in 0..len {
                for s in 0..len {
                    let dot: f64 = (0..len).map(|i| b[r * len + i] * b[s * len + i]).sum();
                    let want = if r == s { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-12, "len {len} ({r},{s}) {dot}");
                }
            }
        }
    }

    #[test]
    fn constant_two_by_two_has_only_dc() {
        let plan = DctPlan::new(2, 2).unwrap();
        let c = plan.dct2(&Tensor::full(&[1, 2, 2], 1.0)).unwrap();
        assert!((c.data()[0] - 2.0).abs() < 1e-15);
        for &v in &c.data()[1..] {
            assert!(v.abs() < 1e-15);
        }
        let back = plan
            .idct2(&Tensor::new(vec![2.0, 0.0, 0.0, 0.0], &[1, 2, 2]).unwrap())
            .unwrap();
        assert_eq!(back.shape(), &[1, 2, 2]);
        for &v in back.data() {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn one_by_one_is_identity() {
        let plan = DctPlan::new(1, 1).unwrap();
        let c = plan.dct2(&Tensor::full(&[1, 1, 1], 5.0)).unwrap();
        assert_eq!(c.data(), &[5.0]);
    }

    #[test]
    fn separable_matches_naive_double_sum() {
        let mut rng = SplitMix64::new(11);
        for m in [1, 2, 3, 4, 5, 8] {
            for n in [1, 2, 3, 4, 5, 8] {
                let plan = DctPlan::new(m, n).unwrap();
                let x = random_image(&mut rng, 1, m, n);
                let fast = plan.dct2(&x).unwrap();
                let slow = naive_dct(m, n, x.data());
                let d = max_abs_diff(fast.data(), &slow);
                assert!(d < 1e-10, "{m}×{n}: {d}");
            }
        }
    }

    #[test]
    fn round_trip_three_channels() {
        let mut rng = SplitMix64::new(5);
        let plan = DctPlan::new(8, 8).unwrap();
        let x = random_image(&mut rng, 3, 8, 8);
        let back = plan.idct2(&plan.dct2(&x).unwrap()).unwrap();
        assert!(max_abs_diff(x.data(), back.data()) < 1e-9);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let plan = DctPlan::new(4, 4).unwrap();
        assert!(matches!(
            plan.dct2(&Tensor::zeros(&[3, 4, 5])),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            plan.idct2(&Tensor::zeros(&[4, 4])),
            Err(Error::Shape(_))
        ));
        assert!(DctPlan::new(0, 3).is_err());
    }

    #[test]
    fn gradient_of_round_trip_sum_is_ones() {
        let mut rng = SplitMix64::new(2);
        let plan = DctPlan::new(5, 4).unwrap();
        let x = Tensor::param(rng.normal_vec(2 * 20, 1.0), &[2, 5, 4]).unwrap();
        plan.idct2(&plan.dct2(&x).unwrap()).unwrap().sum().backward().unwrap();
        for g in x.grad().unwrap() {
            assert!((g - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn plane_helpers_agree_with_tensor_path() {
        let mut rng = SplitMix64::new(8);
        let plan = DctPlan::new(6, 7).unwrap();
        let x = random_image(&mut rng, 1, 6, 7);
        let t = plan.dct2(&x).unwrap();
        let p = dct2_plane(&plan, x.data());
        assert!(max_abs_diff(t.data(), &p) < 1e-13);
        assert!(max_abs_diff(&idct2_plane(&plan, &p), x.data()) < 1e-12);
    }

    #[test]
    fn cached_plans_are_shared() {
        let a = DctPlan::cached(9, 3).unwrap();
        let b = DctPlan::cached(9, 3).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }
}

//! Softmax-weighted fusion of branch feature vectors.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `α = softmax(u)`.
pub fn fusion_weights(u: &Tensor) -> Result<Tensor> {
    u.expect_rank(1, "fusion scores")?;
    u.softmax()
}

/// `Σ α_i h_i` with `α = softmax(u)`; `u` has one score per branch.
pub fn fuse(h: &[Tensor], u: &Tensor) -> Result<Tensor> {
    if h.is_empty() || u.numel() != h.len() {
        return Err(Error::shape(format!(
            "fusion over {} branches needs {} scores, got {:?}",
            h.len(),
            h.len(),
            u.shape()
        )));
    }
    let d = h[0].shape();
    if let Some(bad) = h.iter().find(|t| t.shape() != d) {
        return Err(Error::shape(format!(
            "fusion branches disagree: {:?} vs {:?}",
            bad.shape(),
            d
        )));
    }
    let alpha = fusion_weights(u)?;
    let stacked = Tensor::stack(h)?.reshape(&[h.len(), h[0].numel()])?;
    alpha.reshape(&[1, h.len()])?.matmul(&stacked)?.reshape(d)
}

/// `−Σ α_i log α_i`; the optional regularizer subtracts this scaled by a
/// coefficient, favouring mixed weights.
pub fn fusion_entropy(u: &Tensor) -> Result<Tensor> {
    let alpha = fusion_weights(u)?;
    Ok(alpha.mul(&alpha.log())?.sum().neg())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn vecs(rng: &mut SplitMix64, k: usize, d: usize) -> Vec<Tensor> {
        (0..k).map(|_| Tensor::vector(rng.normal_vec(d, 1.0))).collect()
    }

    #[test]
    fn uniform_scores_average() {
        let mut rng = SplitMix64::new(1);
        let h = vecs(&mut rng, 4, 5);
        let f = fuse(&h, &Tensor::zeros(&[4])).unwrap();
        for d in 0..5 {
            let avg: f64 = h.iter().map(|t| t.data()[d]).sum::<f64>() / 4.0;
            assert!((f.data()[d] - avg).abs() < 1e-14);
        }
    }

    #[test]
    fn equal_inputs_pass_through() {
        let v = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let h = vec![v.clone(), v.clone(), v.clone(), v.clone()];
        let f = fuse(&h, &Tensor::vector(vec![3.0, -1.0, 0.2, 7.0])).unwrap();
        for (a, b) in f.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn log_scores_give_proportional_weights() {
        let h: Vec<Tensor> = (0..4)
            .map(|i| {
                let mut e = vec![0.0; 4];
                e[i] = 1.0;
                Tensor::vector(e)
            })
            .collect();
        let u = Tensor::vector((1..=4).map(|i| (i as f64).ln()).collect());
        let f = fuse(&h, &u).unwrap();
        for (got, want) in f.data().iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_invariance_and_convexity() {
        let mut rng = SplitMix64::new(2);
        for _ in 0..20 {
            let h = vecs(&mut rng, 4, 6);
            let u = rng.normal_vec(4, 2.0);
            let c = rng.normal() * 10.0;
            let a = fuse(&h, &Tensor::vector(u.clone())).unwrap();
            let b = fuse(&h, &Tensor::vector(u.iter().map(|x| x + c).collect())).unwrap();
            for d in 0..6 {
                assert!((a.data()[d] - b.data()[d]).abs() < 1e-12);
                let lo = h.iter().map(|t| t.data()[d]).fold(f64::INFINITY, f64::min);
                let hi = h.iter().map(|t| t.data()[d]).fold(f64::NEG_INFINITY, f64::max);
                assert!(a.data()[d] >= lo - 1e-12 && a.data()[d] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn scores_receive_gradient() {
        let mut rng = SplitMix64::new(3);
        let h = vecs(&mut rng, 4, 3);
        let u = Tensor::param(rng.normal_vec(4, 1.0), &[4]).unwrap();
        let w = Tensor::vector(rng.normal_vec(3, 1.0));
        fuse(&h, &u).unwrap().mul(&w).unwrap().sum().backward().unwrap();
        assert!(u.grad().unwrap().iter().all(|g| g.abs() > 1e-8));
    }

    #[test]
    fn mismatched_branches_rejected() {
        let h = vec![Tensor::zeros(&[3]), Tensor::zeros(&[4])];
        assert!(matches!(fuse(&h, &Tensor::zeros(&[2])), Err(Error::Shape(_))));
        let h = vec![Tensor::zeros(&[3]); 3];
        assert!(matches!(fuse(&h, &Tensor::zeros(&[4])), Err(Error::Shape(_))));
    }

    #[test]
    fn entropy_of_uniform_is_log_k() {
        let e = fusion_entropy(&Tensor::zeros(&[4])).unwrap().item().unwrap();
        assert!((e - 4f64.ln()).abs() < 1e-12);
    }
}

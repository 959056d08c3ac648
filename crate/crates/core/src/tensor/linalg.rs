use super::Tensor;
use crate::error::{Error, Result};

/// `c ← a·b + beta·c` for row-major operands, either of which may be read
/// transposed. `a` is `m×k` after the optional transpose, `b` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices are at least as long as the strided extents that
    // dgemm reads (checked above), and `c` does not alias `a` or `b`
    // because it is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.expect_rank(2, "matmul lhs")?;
        other.expect_rank(2, "matmul rhs")?;
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (other.shape()[0], other.shape()[1]);
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: {:?} · {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(), false, other.data(), false, 0.0, &mut out);
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            "matmul",
            vec![self.clone(), other.clone()],
            move |ctx| {
                let ga = ctx.needs(0).then(|| {
                    let mut g = vec![0.0; m * k];
                    gemm(m, n, k, ctx.grad, false, ctx.input(1), true, 0.0, &mut g);
                    g
                });
                let gb = ctx.needs(1).then(|| {
                    let mut g = vec![0.0; k * n];
                    gemm(k, m, n, ctx.input(0), true, ctx.grad, false, 0.0, &mut g);
                    g
                });
                vec![ga, gb]
            },
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        self.expect_rank(2, "transpose")?;
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let src = self.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(Tensor::from_op(out, vec![c, r], "transpose", vec![self.clone()], move |ctx| {
            let mut g = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    g[i * c + j] = ctx.grad[j * r + i];
                }
            }
            vec![Some(g)]
        }))
    }
}

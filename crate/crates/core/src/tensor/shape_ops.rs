use std::sync::Arc;

use super::{numel, Tensor};
use crate::error::{Error, Result};

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            "reshape",
            vec![self.clone()],
            |ctx| vec![Some(ctx.grad.to_vec())],
        ))
    }

    /// `out[i] = self[indices[i]]`, reshaped to `shape`. Backward scatters
    /// (adds) into the source positions, so repeated indices accumulate.
    pub fn gather(&self, indices: Arc<[usize]>, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != indices.len() {
            return Err(Error::shape(format!(
                "gather: {} indices cannot fill shape {:?}",
                indices.len(),
                shape
            )));
        }
        let src = self.data();
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.len()) {
            return Err(Error::shape(format!(
                "gather index {bad} out of range for {} elements",
                src.len()
            )));
        }
        let data = indices.iter().map(|&i| src[i]).collect();
        let n = self.numel();
        Ok(Tensor::from_op(data, shape.to_vec(), "gather", vec![self.clone()], move |ctx| {
            let mut g = vec![0.0; n];
            for (&i, &go) in indices.iter().zip(ctx.grad) {
                g[i] += go;
            }
            vec![Some(g)]
        }))
    }

    /// Sub-tensor at position `i` of the leading axis.
    pub fn select(&self, i: usize) -> Result<Tensor> {
        if self.rank() == 0 || i >= self.shape()[0] {
            return Err(Error::shape(format!(
                "select({i}) out of range for shape {:?}",
                self.shape()
            )));
        }
        let inner: usize = self.shape()[1..].iter().product();
        let start = i * inner;
        let n = self.numel();
        let data = self.data()[start..start + inner].to_vec();
        Ok(Tensor::from_op(
            data,
            self.shape()[1..].to_vec(),
            "select",
            vec![self.clone()],
            move |ctx| {
                let mut g = vec![0.0; n];
                g[start..start + inner].copy_from_slice(ctx.grad);
                vec![Some(g)]
            },
        ))
    }

    /// Element `i` of a vector as a scalar tensor.
    pub fn index(&self, i: usize) -> Result<Tensor> {
        self.expect_rank(1, "index")?;
        self.select(i)
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        self.expect_rank(2, "slice_cols")?;
        let (r, c) = (self.shape()[0], self.shape()[1]);
        if start + len > c {
            return Err(Error::shape(format!(
                "slice_cols {start}..{} exceeds {c} columns",
                start + len
            )));
        }
        let src = self.data();
        let mut data = Vec::with_capacity(r * len);
        for row in 0..r {
            data.extend_from_slice(&src[row * c + start..row * c + start + len]);
        }
        Ok(Tensor::from_op(data, vec![r, len], "slice_cols", vec![self.clone()], move |ctx| {
            let mut g = vec![0.0; r * c];
            for row in 0..r {
                g[row * c + start..row * c + start + len]
                    .copy_from_slice(&ctx.grad[row * len..(row + 1) * len]);
            }
            vec![Some(g)]
        }))
    }

    /// Concatenation along the leading axis; trailing shapes must agree.
    pub fn concat(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        if first.rank() == 0 {
            return Err(Error::shape("concat needs rank ≥ 1"));
        }
        let trailing = &first.shape()[1..];
        let mut rows = 0;
        for p in parts {
            if p.rank() != first.rank() || &p.shape()[1..] != trailing {
                return Err(Error::shape(format!(
                    "concat: shape {:?} incompatible with {:?}",
                    p.shape(),
                    first.shape()
                )));
            }
            rows += p.shape()[0];
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(trailing);
        let mut data = Vec::with_capacity(numel(&shape));
        for p in parts {
            data.extend_from_slice(p.data());
        }
        let lens: Vec<usize> = parts.iter().map(Tensor::numel).collect();
        Ok(Tensor::from_op(data, shape, "concat", parts.to_vec(), move |ctx| {
            let mut off = 0;
            lens.iter()
                .enumerate()
                .map(|(i, &len)| {
                    let g = ctx.needs(i).then(|| ctx.grad[off..off + len].to_vec());
                    off += len;
                    g
                })
                .collect()
        }))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("stack of zero tensors"))?;
        let inner = first.shape().to_vec();
        let mut lifted = Vec::with_capacity(parts.len());
        for p in parts {
            if p.shape() != inner.as_slice() {
                return Err(Error::shape(format!(
                    "stack: shape {:?} differs from {:?}",
                    p.shape(),
                    inner
                )));
            }
            let mut s = vec![1];
            s.extend_from_slice(&inner);
            lifted.push(p.reshape(&s)?);
        }
        Tensor::concat(&lifted)
    }

    /// Concatenation of matrices along columns; row counts must agree.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_cols of zero tensors"))?;
        first.expect_rank(2, "concat_cols")?;
        let r = first.shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            p.expect_rank(2, "concat_cols")?;
            if p.shape()[0] != r {
                return Err(Error::shape(format!(
                    "concat_cols: {:?} has a different row count than {:?}",
                    p.shape(),
                    first.shape()
                )));
            }
            widths.push(p.shape()[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; r * total];
        let mut off = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            for row in 0..r {
                data[row * total + off..row * total + off + w]
                    .copy_from_slice(&p.data()[row * w..(row + 1) * w]);
            }
            off += w;
        }
        Ok(Tensor::from_op(data, vec![r, total], "concat_cols", parts.to_vec(), move |ctx| {
            let mut off = 0;
            widths
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    let g = ctx.needs(i).then(|| {
                        let mut g = Vec::with_capacity(r * w);
                        for row in 0..r {
                            g.extend_from_slice(&ctx.grad[row * total + off..row * total + off + w]);
                        }
                        g
                    });
                    off += w;
                    g
                })
                .collect()
        }))
    }

    /// Repeats the tensor `n` times along a new leading axis.
    pub fn expand0(&self, n: usize) -> Tensor {
        let inner = self.numel();
        let mut data = Vec::with_capacity(n * inner);
        for _ in 0..n {
            data.extend_from_slice(self.data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(self.shape());
        Tensor::from_op(data, shape, "expand0", vec![self.clone()], move |ctx| {
            let mut g = vec![0.0; inner];
            for chunk in ctx.grad.chunks_exact(inner.max(1)) {
                super::add_into(&mut g, chunk);
            }
            vec![Some(g)]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_and_stack_round_trip() {
        let t = Tensor::param((0..12).map(f64::from).collect(), &[3, 2, 2]).unwrap();
        let parts: Vec<Tensor> = (0..3).map(|i| t.select(i).unwrap()).collect();
        assert_eq!(parts[1].data(), &[4.0, 5.0, 6.0, 7.0]);
        let back = Tensor::stack(&parts).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.data(), t.data());
        back.sum().backward().unwrap();
        assert_eq!(t.grad().unwrap(), vec![1.0; 12]);
    }

    #[test]
    fn gather_accumulates_repeats() {
        let t = Tensor::param(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let g = t.gather(vec![2, 2, 0].into(), &[3]).unwrap();
        assert_eq!(g.data(), &[3.0, 3.0, 1.0]);
        g.sum().backward().unwrap();
        assert_eq!(t.grad().unwrap(), vec![1.0, 0.0, 2.0]);
        assert!(t.gather(vec![3].into(), &[1]).is_err());
    }

    #[test]
    fn slice_and_concat_cols() {
        let t = Tensor::matrix(2, 4, (0..8).map(f64::from).collect()).unwrap();
        let a = t.slice_cols(0, 1).unwrap();
        let b = t.slice_cols(1, 3).unwrap();
        assert_eq!(b.data(), &[1.0, 2.0, 3.0, 5.0, 6.0, 7.0]);
        let back = Tensor::concat_cols(&[a, b]).unwrap();
        assert_eq!(back.data(), t.data());
        assert!(t.slice_cols(2, 3).is_err());
    }

    #[test]
    fn expand_sums_gradient() {
        let t = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let e = t.expand0(3);
        assert_eq!(e.shape(), &[3, 2]);
        e.sum().backward().unwrap();
        assert_eq!(t.grad().unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn reshape_checks_count() {
        let t = Tensor::zeros(&[2, 3]);
        assert!(t.reshape(&[3, 2]).is_ok());
        assert!(matches!(t.reshape(&[4]), Err(Error::Shape(_))));
    }
}

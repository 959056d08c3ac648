use super::{gemm, Tensor};
use crate::error::{Error, Result};

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Geometry of a 2-D convolution over a `[C×H×W]` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn cols(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let n = self.ho * self.wo;
        let mut cols = vec![0.0; self.cols() * n];
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oi in 0..self.ho {
                        let ii = (oi * self.stride + ki) as isize - self.pad as isize;
                        if ii < 0 || ii >= self.h as isize {
                            continue;
                        }
                        let src = &x[(c * self.h + ii as usize) * self.w..];
                        for oj in 0..self.wo {
                            let jj = (oj * self.stride + kj) as isize - self.pad as isize;
                            if jj >= 0 && jj < self.w as isize {
                                dst[oi * self.wo + oj] = src[jj as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let n = self.ho * self.wo;
        let mut x = vec![0.0; self.cin * self.h * self.w];
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * n..(row + 1) * n];
                    for oi in 0..self.ho {
                        let ii = (oi * self.stride + ki) as isize - self.pad as isize;
                        if ii < 0 || ii >= self.h as isize {
                            continue;
                        }
                        let base = (c * self.h + ii as usize) * self.w;
                        for oj in 0..self.wo {
                            let jj = (oj * self.stride + kj) as isize - self.pad as isize;
                            if jj >= 0 && jj < self.w as isize {
                                x[base + jj as usize] += src[oi * self.wo + oj];
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

impl Tensor {
    /// Softmax of a vector, computed with max subtraction.
    pub fn softmax(&self) -> Result<Tensor> {
        self.expect_rank(1, "softmax")?;
        if self.numel() == 0 {
            return Err(Error::domain("softmax of an empty vector"));
        }
        let n = self.numel();
        self.reshape(&[1, n])?.softmax_rows()?.reshape(&[n])
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        self.expect_rank(2, "softmax_rows")?;
        let (r, c) = (self.shape()[0], self.shape()[1]);
        if c == 0 {
            return Err(Error::domain("softmax over zero columns"));
        }
        let mut out = self.to_vec();
        for row in out.chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        Ok(Tensor::from_op(out, vec![r, c], "softmax_rows", vec![self.clone()], move |ctx| {
            let mut g = vec![0.0; r * c];
            for ((gr, yr), gor) in g
                .chunks_exact_mut(c)
                .zip(ctx.output.chunks_exact(c))
                .zip(ctx.grad.chunks_exact(c))
            {
                let dot: f64 = yr.iter().zip(gor).map(|(y, g)| y * g).sum();
                for ((gi, y), go) in gr.iter_mut().zip(yr).zip(gor) {
                    *gi = y * (go - dot);
                }
            }
            vec![Some(g)]
        }))
    }

    /// `-log softmax(self)[label]` for a logit vector, via log-sum-exp.
    pub fn cross_entropy(&self, label: usize) -> Result<Tensor> {
        self.expect_rank(1, "cross_entropy")?;
        let c = self.numel();
        if label >= c {
            return Err(Error::domain(format!(
                "label {label} out of range for {c} classes"
            )));
        }
        let loss = log_sum_exp(self.data()) - self.data()[label];
        Ok(Tensor::from_op(vec![loss], Vec::new(), "cross_entropy", vec![self.clone()], move |ctx| {
            let mut p = ctx.input(0).to_vec();
            softmax_in_place(&mut p);
            p[label] -= 1.0;
            let g0 = ctx.grad[0];
            vec![Some(p.into_iter().map(|v| v * g0).collect())]
        }))
    }

    /// Adds a length-`n` vector to every row of an `[m×n]` matrix.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        self.expect_rank(2, "add_row")?;
        let (m, n) = (self.shape()[0], self.shape()[1]);
        bias.expect_shape(&[n], "add_row bias")?;
        let mut out = self.to_vec();
        for row in out.chunks_exact_mut(n.max(1)) {
            super::add_into(row, bias.data());
        }
        Ok(Tensor::from_op(out, vec![m, n], "add_row", vec![self.clone(), bias.clone()], move |ctx| {
            let gb = ctx.needs(1).then(|| {
                let mut g = vec![0.0; n];
                for row in ctx.grad.chunks_exact(n.max(1)) {
                    super::add_into(&mut g, row);
                }
                g
            });
            vec![ctx.needs(0).then(|| ctx.grad.to_vec()), gb]
        }))
    }

    /// Layer normalization over the last axis of an `[m×n]` matrix with a
    /// learnable per-feature `gain` and `bias`.
    pub fn layer_norm_rows(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        self.expect_rank(2, "layer_norm_rows")?;
        let (m, n) = (self.shape()[0], self.shape()[1]);
        gain.expect_shape(&[n], "layer_norm gain")?;
        bias.expect_shape(&[n], "layer_norm bias")?;
        let stats = move |row: &[f64]| {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            (mean, 1.0 / (var + eps).sqrt())
        };
        let mut out = vec![0.0; m * n];
        for (orow, xrow) in out.chunks_exact_mut(n).zip(self.data().chunks_exact(n)) {
            let (mean, inv) = stats(xrow);
            for j in 0..n {
                orow[j] = gain.data()[j] * (xrow[j] - mean) * inv + bias.data()[j];
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            "layer_norm_rows",
            vec![self.clone(), gain.clone(), bias.clone()],
            move |ctx| {
                let x = ctx.input(0);
                let gamma = ctx.input(1);
                let mut gx = ctx.needs(0).then(|| vec![0.0; m * n]);
                let mut gg = ctx.needs(1).then(|| vec![0.0; n]);
                let mut gbeta = ctx.needs(2).then(|| vec![0.0; n]);
                let mut xhat = vec![0.0; n];
                let mut dxhat = vec![0.0; n];
                for i in 0..m {
                    let xr = &x[i * n..(i + 1) * n];
                    let gor = &ctx.grad[i * n..(i + 1) * n];
                    let (mean, inv) = stats(xr);
                    for j in 0..n {
                        xhat[j] = (xr[j] - mean) * inv;
                        dxhat[j] = gor[j] * gamma[j];
                    }
                    if let Some(gg) = gg.as_mut() {
                        for j in 0..n {
                            gg[j] += gor[j] * xhat[j];
                        }
                    }
                    if let Some(gb) = gbeta.as_mut() {
                        super::add_into(gb, gor);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dx = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>()
                            / n as f64;
                        for j in 0..n {
                            gx[i * n + j] = inv * (dxhat[j] - mean_d - xhat[j] * mean_dx);
                        }
                    }
                }
                vec![gx, gg, gbeta]
            },
        ))
    }

    /// 2-D convolution of a `[Cin×H×W]` input with `[Cout×Cin×kh×kw]`
    /// weights and an optional `[Cout]` bias, zero padded.
    pub fn conv2d(&self, weight: &Tensor, bias: Option<&Tensor>, spec: Conv2dSpec) -> Result<Tensor> {
        self.expect_rank(3, "conv2d input")?;
        weight.expect_rank(4, "conv2d weight")?;
        let (cin, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (cout, wc, kh, kw) = (
            weight.shape()[0],
            weight.shape()[1],
            weight.shape()[2],
            weight.shape()[3],
        );
        if wc != cin {
            return Err(Error::shape(format!(
                "conv2d: input has {cin} channels but weight {:?} expects {wc}",
                weight.shape()
            )));
        }
        if spec.stride == 0 || h + 2 * spec.padding < kh || w + 2 * spec.padding < kw {
            return Err(Error::shape(format!(
                "conv2d: kernel {kh}×{kw} with {spec:?} does not fit input {h}×{w}"
            )));
        }
        if let Some(b) = bias {
            b.expect_shape(&[cout], "conv2d bias")?;
        }
        let geom = ConvGeom {
            cin,
            h,
            w,
            kh,
            kw,
            ho: (h + 2 * spec.padding - kh) / spec.stride + 1,
            wo: (w + 2 * spec.padding - kw) / spec.stride + 1,
            stride: spec.stride,
            pad: spec.padding,
        };
        let n = geom.ho * geom.wo;
        let k = geom.cols();
        let cols = geom.im2col(self.data());
        let mut out = vec![0.0; cout * n];
        if let Some(b) = bias {
            for (row, &bv) in out.chunks_exact_mut(n).zip(b.data()) {
                row.fill(bv);
            }
        }
        gemm(cout, k, n, weight.data(), false, &cols, false, 1.0, &mut out);
        let mut inputs = vec![self.clone(), weight.clone()];
        inputs.extend(bias.cloned());
        Ok(Tensor::from_op(
            out,
            vec![cout, geom.ho, geom.wo],
            "conv2d",
            inputs,
            move |ctx| {
                let mut grads = Vec::with_capacity(3);
                let gx = ctx.needs(0).then(|| {
                    let mut gcols = vec![0.0; k * n];
                    gemm(k, cout, n, ctx.input(1), true, ctx.grad, false, 0.0, &mut gcols);
                    geom.col2im(&gcols)
                });
                let gw = ctx.needs(1).then(|| {
                    let cols = geom.im2col(ctx.input(0));
                    let mut g = vec![0.0; cout * k];
                    gemm(cout, n, k, ctx.grad, false, &cols, true, 0.0, &mut g);
                    g
                });
                grads.push(gx);
                grads.push(gw);
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.needs(2).then(|| {
                        ctx.grad.chunks_exact(n).map(|r| r.iter().sum()).collect()
                    }));
                }
                grads
            },
        ))
    }

    /// Per-channel `scale[c]·x + shift[c]` over a `[C×H×W]` tensor.
    pub fn channel_affine(&self, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
        self.expect_rank(3, "channel_affine")?;
        let c = self.shape()[0];
        let hw = self.shape()[1] * self.shape()[2];
        scale.expect_shape(&[c], "channel_affine scale")?;
        shift.expect_shape(&[c], "channel_affine shift")?;
        let mut out = self.to_vec();
        for (ch, plane) in out.chunks_exact_mut(hw.max(1)).enumerate() {
            let (s, b) = (scale.data()[ch], shift.data()[ch]);
            for v in plane {
                *v = s * *v + b;
            }
        }
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            "channel_affine",
            vec![self.clone(), scale.clone(), shift.clone()],
            move |ctx| {
                let x = ctx.input(0);
                let s = ctx.input(1);
                let gx = ctx.needs(0).then(|| {
                    let mut g = ctx.grad.to_vec();
                    for (ch, plane) in g.chunks_exact_mut(hw.max(1)).enumerate() {
                        for v in plane {
                            *v *= s[ch];
                        }
                    }
                    g
                });
                let gs = ctx.needs(1).then(|| {
                    (0..c)
                        .map(|ch| {
                            let r = ch * hw..(ch + 1) * hw;
                            ctx.grad[r.clone()].iter().zip(&x[r]).map(|(g, x)| g * x).sum()
                        })
                        .collect()
                });
                let gb = ctx.needs(2).then(|| {
                    (0..c)
                        .map(|ch| ctx.grad[ch * hw..(ch + 1) * hw].iter().sum())
                        .collect()
                });
                vec![gx, gs, gb]
            },
        ))
    }

    /// Mean over every axis but the first: `[C×…]` → `[C]`.
    pub fn mean_inner(&self) -> Result<Tensor> {
        if self.rank() < 2 {
            return Err(Error::shape(format!(
                "mean_inner needs rank ≥ 2, got {:?}",
                self.shape()
            )));
        }
        let c = self.shape()[0];
        let inner = self.numel() / c.max(1);
        if inner == 0 {
            return Err(Error::shape("mean_inner over an empty axis"));
        }
        let data = self
            .data()
            .chunks_exact(inner)
            .map(|r| r.iter().sum::<f64>() / inner as f64)
            .collect();
        Ok(Tensor::from_op(data, vec![c], "mean_inner", vec![self.clone()], move |ctx| {
            let mut g = vec![0.0; c * inner];
            for (ch, row) in g.chunks_exact_mut(inner).enumerate() {
                row.fill(ctx.grad[ch] / inner as f64);
            }
            vec![Some(g)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close_all(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn softmax_uniform_and_exact_ratios() {
        let u = Tensor::vector(vec![0.0; 4]).softmax().unwrap();
        close_all(u.data(), &[0.25; 4], 1e-15);
        let v = Tensor::vector(vec![0.0, 2f64.ln(), 3f64.ln(), 4f64.ln()])
            .softmax()
            .unwrap();
        close_all(v.data(), &[0.1, 0.2, 0.3, 0.4], 1e-15);
    }

    #[test]
    fn softmax_shift_invariant() {
        let v = vec![0.3, -1.2, 2.5, 0.0];
        let a = Tensor::vector(v.clone()).softmax().unwrap();
        let b = Tensor::vector(v.iter().map(|x| x + 100.0).collect())
            .softmax()
            .unwrap();
        close_all(a.data(), b.data(), 1e-12);
        assert!((a.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_empty_is_domain_error() {
        assert!(matches!(
            Tensor::vector(vec![]).softmax(),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let l = Tensor::vector(vec![0.7; 4]).cross_entropy(2).unwrap();
        assert!((l.item().unwrap() - 4f64.ln()).abs() < 1e-12);
        let s = Tensor::vector(vec![0.0, 1000.0, 0.0]).cross_entropy(1).unwrap();
        let v = s.item().unwrap();
        assert!(v.is_finite() && v.abs() < 1e-12, "{v}");
        assert!(matches!(
            Tensor::vector(vec![0.0; 3]).cross_entropy(3),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_one_hot() {
        let z = vec![0.4, -1.3, 2.2, 0.05, -0.7];
        let t = Tensor::param(z.clone(), &[5]).unwrap();
        t.cross_entropy(3).unwrap().backward().unwrap();
        let mut want = Tensor::vector(z).softmax().unwrap().to_vec();
        want[3] -= 1.0;
        close_all(&t.grad().unwrap(), &want, 1e-9);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::new((0..18).map(f64::from).collect(), &[2, 3, 3]).unwrap();
        // 1×1 kernel mapping each channel to itself.
        let w = Tensor::new(vec![1.0, 0.0, 0.0, 1.0], &[2, 2, 1, 1]).unwrap();
        let y = x.conv2d(&w, None, Conv2dSpec { stride: 1, padding: 0 }).unwrap();
        assert_eq!(y.data(), x.data());
        let y2 = x.conv2d(&w, None, Conv2dSpec { stride: 2, padding: 0 }).unwrap();
        assert_eq!(y2.shape(), &[2, 2, 2]);
        assert_eq!(y2.data(), &[0.0, 2.0, 6.0, 8.0, 9.0, 11.0, 15.0, 17.0]);
    }

    #[test]
    fn conv_matches_direct_loop() {
        let (cin, cout, h, w, k) = (2, 3, 5, 4, 3);
        let x: Vec<f64> = (0..cin * h * w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let wt: Vec<f64> = (0..cout * cin * k * k).map(|i| ((i * 5) % 7) as f64 * 0.1).collect();
        let b = vec![0.5, -0.5, 1.0];
        let spec = Conv2dSpec { stride: 2, padding: 1 };
        let y = Tensor::new(x.clone(), &[cin, h, w])
            .unwrap()
            .conv2d(
                &Tensor::new(wt.clone(), &[cout, cin, k, k]).unwrap(),
                Some(&Tensor::vector(b.clone())),
                spec,
            )
            .unwrap();
        let (ho, wo) = (3, 2);
        assert_eq!(y.shape(), &[cout, ho, wo]);
        for o in 0..cout {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b[o];
                    for c in 0..cin {
                        for a in 0..k {
                            for d in 0..k {
                                let ii = (i * 2 + a) as isize - 1;
                                let jj = (j * 2 + d) as isize - 1;
                                if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                                    acc += wt[((o * cin + c) * k + a) * k + d]
                                        * x[(c * h + ii as usize) * w + jj as usize];
                                }
                            }
                        }
                    }
                    assert!((y.data()[(o * ho + i) * wo + j] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn layer_norm_rows_normalizes() {
        let x = Tensor::matrix(2, 4, vec![1.0, 2.0, 3.0, 4.0, -2.0, 0.0, 2.0, 8.0]).unwrap();
        let y = x
            .layer_norm_rows(&Tensor::full(&[4], 1.0), &Tensor::zeros(&[4]), 0.0)
            .unwrap();
        for row in y.data().chunks(4) {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_inner_pools_channels() {
        let x = Tensor::new(vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0], &[2, 2, 2]).unwrap();
        assert_eq!(x.mean_inner().unwrap().data(), &[2.5, 25.0]);
    }
}

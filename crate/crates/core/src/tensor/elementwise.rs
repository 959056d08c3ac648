use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
enum Layout {
    Same,
    LeftScalar,
    RightScalar,
}

fn layout(a: &Tensor, b: &Tensor, op: &str) -> Result<Layout> {
    if a.shape() == b.shape() {
        Ok(Layout::Same)
    } else if a.numel() == 1 && (b.numel() != 1 || a.rank() <= b.rank()) {
        // Both single-element: the higher-rank shape wins.
        Ok(Layout::LeftScalar)
    } else if b.numel() == 1 {
        Ok(Layout::RightScalar)
    } else {
        Err(Error::shape(format!(
            "{op}: shapes {:?} and {:?} differ and neither is a scalar",
            a.shape(),
            b.shape()
        )))
    }
}

/// Partial derivatives of a binary kernel at `(a, b)` with output `y`.
type Partials = fn(f64, f64, f64) -> (f64, f64);

fn binary(
    a: &Tensor,
    b: &Tensor,
    name: &'static str,
    f: fn(f64, f64) -> f64,
    df: Partials,
) -> Result<Tensor> {
    let lay = layout(a, b, name)?;
    let (shape, data): (Vec<usize>, Vec<f64>) = match lay {
        Layout::Same => (
            a.shape().to_vec(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        ),
        Layout::LeftScalar => {
            let x = a.data()[0];
            (b.shape().to_vec(), b.data().iter().map(|&y| f(x, y)).collect())
        }
        Layout::RightScalar => {
            let y = b.data()[0];
            (a.shape().to_vec(), a.data().iter().map(|&x| f(x, y)).collect())
        }
    };
    Ok(Tensor::from_op(
        data,
        shape,
        name,
        vec![a.clone(), b.clone()],
        move |ctx| {
            let (xa, xb) = (ctx.input(0), ctx.input(1));
            let n = ctx.grad.len();
            let pick = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
            let mut ga = ctx.needs(0).then(|| vec![0.0; xa.len()]);
            let mut gb = ctx.needs(1).then(|| vec![0.0; xb.len()]);
            for i in 0..n {
                let (da, db) = df(pick(xa, i), pick(xb, i), ctx.output[i]);
                let g = ctx.grad[i];
                if let Some(ga) = ga.as_mut() {
                    match lay {
                        Layout::LeftScalar => ga[0] += g * da,
                        _ => ga[i] += g * da,
                    }
                }
                if let Some(gb) = gb.as_mut() {
                    match lay {
                        Layout::RightScalar => gb[0] += g * db,
                        _ => gb[i] += g * db,
                    }
                }
            }
            vec![ga, gb]
        },
    ))
}

fn unary(a: &Tensor, name: &'static str, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().map(|&x| f(x)).collect();
    Tensor::from_op(data, a.shape().to_vec(), name, vec![a.clone()], move |ctx| {
        let g = ctx
            .grad
            .iter()
            .zip(ctx.input(0))
            .zip(ctx.output)
            .map(|((&g, &x), &y)| g * df(x, y))
            .collect();
        vec![Some(g)]
    })
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

thread_local! {
    static KINK_LOG: std::cell::RefCell<Option<Vec<u64>>> = const { std::cell::RefCell::new(None) };
}

/// Records a fingerprint of every ReLU sign pattern evaluated on this
/// thread while `f` runs. Finite-difference checks use it to discard
/// perturbations that cross a kink.
pub fn record_relu_patterns<T>(f: impl FnOnce() -> T) -> (T, Vec<u64>) {
    KINK_LOG.with(|k| *k.borrow_mut() = Some(Vec::new()));
    let out = f();
    let log = KINK_LOG.with(|k| k.borrow_mut().take()).unwrap_or_default();
    (out, log)
}

fn log_relu_pattern(data: &[f64]) {
    KINK_LOG.with(|k| {
        if let Some(log) = k.borrow_mut().as_mut() {
            // FNV-1a over the sign bits.
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            for &x in data {
                h ^= (x > 0.0) as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
            log.push(h);
        }
    });
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, "add", |a, b| a + b, |_, _, _| (1.0, 1.0))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, "sub", |a, b| a - b, |_, _, _| (1.0, -1.0))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, "mul", |a, b| a * b, |a, b, _| (b, a))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, "div", |a, b| a / b, |_, b, y| (1.0 / b, -y / b))
    }

    /// `self ^ other` elementwise, with a tensor exponent (base must be > 0
    /// where the exponent's gradient is needed).
    pub fn pow(&self, exponent: &Tensor) -> Result<Tensor> {
        binary(
            self,
            exponent,
            "pow",
            f64::powf,
            |a, b, y| (b * a.powf(b - 1.0), y * a.ln()),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary(self, "add_scalar", move |x| x + c, |_, _| 1.0)
    }

    /// `c - self`.
    pub fn rsub_scalar(&self, c: f64) -> Tensor {
        unary(self, "rsub_scalar", move |x| c - x, |_, _| -1.0)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|&x| c * x).collect();
        Tensor::from_op(data, self.shape().to_vec(), "scale", vec![self.clone()], move |ctx| {
            vec![Some(ctx.grad.iter().map(|g| c * g).collect())]
        })
    }

    pub fn powf(&self, p: f64) -> Tensor {
        let data = self.data().iter().map(|&x| x.powf(p)).collect();
        Tensor::from_op(data, self.shape().to_vec(), "powf", vec![self.clone()], move |ctx| {
            let g = ctx
                .grad
                .iter()
                .zip(ctx.input(0))
                .map(|(&g, &x)| g * p * x.powf(p - 1.0))
                .collect();
            vec![Some(g)]
        })
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn exp(&self) -> Tensor {
        unary(self, "exp", f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Tensor {
        unary(self, "log", f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Tensor {
        unary(self, "sqrt", f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(self, "sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Tensor {
        unary(self, "tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn cos(&self) -> Tensor {
        unary(self, "cos", f64::cos, |x, _| -x.sin())
    }

    pub fn relu(&self) -> Tensor {
        log_relu_pattern(self.data());
        unary(self, "relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self) -> Tensor {
        unary(self, "gelu", gelu, |x, _| gelu_grad(x))
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![s], Vec::new(), "sum", vec![self.clone()], move |ctx| {
            vec![Some(vec![ctx.grad[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(Tensor::scalar(0.0).sigmoid().item().unwrap(), 0.5);
    }

    #[test]
    fn exp_log_inverse() {
        let y = Tensor::scalar(3.0).log().exp().item().unwrap();
        assert!(close(y, 3.0, 1e-12));
    }

    #[test]
    fn sigmoid_derivative_at_zero_matches_finite_difference() {
        let x = Tensor::param(vec![0.0], &[]).unwrap();
        x.sigmoid().backward().unwrap();
        let g = x.grad().unwrap()[0];
        assert!(close(g, 0.25, 1e-15));
        let h = 1e-6;
        let fd = (sigmoid(h) - sigmoid(-h)) / (2.0 * h);
        assert!(close(g, fd, 1e-7), "{g} vs {fd}");
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        let t = Tensor::vector(vec![-800.0, 800.0]).sigmoid();
        assert_eq!(t.data(), &[0.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 2]);
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");
    }

    #[test]
    fn scalar_broadcast_both_sides() {
        let c = Tensor::param(vec![2.0], &[]).unwrap();
        let v = Tensor::param(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let out = c.sub(&v).unwrap();
        assert_eq!(out.data(), &[1.0, 0.0, -1.0]);
        out.sum().backward().unwrap();
        assert_eq!(c.grad().unwrap(), vec![3.0]);
        assert_eq!(v.grad().unwrap(), vec![-1.0; 3]);

        let d = Tensor::param(vec![4.0], &[1]).unwrap();
        let w = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let q = w.div(&d).unwrap();
        assert_eq!(q.data(), &[0.25, 0.5]);
        q.sum().backward().unwrap();
        assert!(close(d.grad().unwrap()[0], -3.0 / 16.0, 1e-15));
    }

    #[test]
    fn single_element_operands_keep_the_higher_rank() {
        let s = Tensor::scalar(2.0);
        let m = Tensor::new(vec![5.0], &[1, 1]).unwrap();
        assert_eq!(s.sub(&m).unwrap().shape(), &[1, 1]);
        assert_eq!(m.sub(&s).unwrap().shape(), &[1, 1]);
        assert_eq!(m.mul(&Tensor::new(vec![1.0], &[1]).unwrap()).unwrap().shape(), &[1, 1]);
    }

    #[test]
    fn relu_patterns_recorded_only_inside_scope() {
        let x = Tensor::vector(vec![-1.0, 2.0]);
        let _ = x.relu();
        let (_, log) = record_relu_patterns(|| {
            x.relu();
            x.neg().relu();
        });
        assert_eq!(log.len(), 2);
        assert_ne!(log[0], log[1]);
    }
}

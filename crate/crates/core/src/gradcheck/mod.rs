//! Central finite-difference verification of backward rules.
//!
//! A check evaluates a scalar function of several input tensors once with
//! gradients recorded, then perturbs each input element by `±h` and compares
//! `(f(x+h) − f(x−h)) / 2h` against the recorded gradient. An element passes
//! when its absolute error is below `abs_tol` or its relative error
//! `|a − n| / max(|a|, |n|)` is below `rel_tol`.
//!
//! Perturbations that flip the sign pattern of any ReLU evaluated inside the
//! function straddle a kink where the derivative is undefined; those elements
//! are counted in `kinks_skipped` instead of being compared.

mod suite;

use crate::error::Result;
use crate::tensor::{record_relu_patterns, Tensor};

pub use suite::{run_suite, SuiteConfig, SuiteReport};

/// Gradient magnitude below which relative error is not reported.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub h: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            rel_tol: 1e-4,
            abs_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    /// Worst relative error among elements whose gradient magnitude is at
    /// least [`REL_FLOOR`]; smaller gradients are judged by `abs_tol` alone.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub failures: usize,
    pub kinks_skipped: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }

    /// Folds another report for the same operation into this one.
    pub fn merge(&mut self, other: &GradCheckReport) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        self.checked += other.checked;
        self.failures += other.failures;
        self.kinks_skipped += other.kinks_skipped;
    }
}

/// Compares one analytic/numeric pair under `cfg`; returns
/// `(passed, abs_error, rel_error)`.
pub fn compare(analytic: f64, numeric: f64, cfg: &GradCheckConfig) -> (bool, f64, f64) {
    let abs = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    let rel = if scale > 0.0 { abs / scale } else { 0.0 };
    (abs <= cfg.abs_tol || rel <= cfg.rel_tol, abs, rel)
}

/// Checks `f` with respect to every element of every input.
pub fn check<F>(
    name: &str,
    inputs: &[(Vec<f64>, Vec<usize>)],
    f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    check_selected(name, inputs, None, f, cfg)
}

/// As [`check`], but restricted to `(input, element)` pairs in `select`
/// when given.
pub fn check_selected<F>(
    name: &str,
    inputs: &[(Vec<f64>, Vec<usize>)],
    select: Option<&[(usize, usize)]>,
    f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(v, s)| Tensor::param(v.clone(), s))
        .collect::<Result<_>>()?;
    let (out, base_pattern) = record_relu_patterns(|| f(&leaves));
    out?.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut values: Vec<Vec<f64>> = inputs.iter().map(|(v, _)| v.clone()).collect();
    let eval = |values: &[Vec<f64>]| -> Result<(f64, Vec<u64>)> {
        let consts: Vec<Tensor> = values
            .iter()
            .zip(inputs)
            .map(|(v, (_, s))| Tensor::new(v.clone(), s))
            .collect::<Result<_>>()?;
        let (out, pattern) = record_relu_patterns(|| f(&consts));
        Ok((out?.item()?, pattern))
    };

    let all: Vec<(usize, usize)>;
    let targets = match select {
        Some(s) => s,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, (v, _))| (0..v.len()).map(move |j| (i, j)))
                .collect();
            &all
        }
    };

    let mut report = GradCheckReport {
        name: name.to_string(),
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        failures: 0,
        kinks_skipped: 0,
    };
    for &(i, j) in targets {
        let orig = values[i][j];
        values[i][j] = orig + cfg.h;
        let (plus, pat_plus) = eval(&values)?;
        values[i][j] = orig - cfg.h;
        let (minus, pat_minus) = eval(&values)?;
        values[i][j] = orig;
        if pat_plus != base_pattern || pat_minus != base_pattern {
            report.kinks_skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * cfg.h);
        let (ok, abs, rel) = compare(analytic[i][j], numeric, cfg);
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max(abs);
        if analytic[i][j].abs().max(numeric.abs()) >= REL_FLOOR {
            report.max_rel_error = report.max_rel_error.max(rel);
        }
        if !ok {
            report.failures += 1;
            log::debug!(
                "{name}: input {i} element {j}: analytic {} numeric {numeric}",
                analytic[i][j]
            );
        }
    }
    Ok(report)
}

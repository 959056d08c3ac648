use crate::bayes::PredictMode;
use crate::data::ImageSample;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::SplitMix64;

const EVAL_STREAM: u64 = 0xE7A1;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// `(correct, total)` per class.
    pub per_class: Vec<(usize, usize)>,
    pub mean_ce: f64,
    /// Mean entropy (nats) of the predictive softmax.
    pub mean_entropy: f64,
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Top-1 accuracy, per-class accuracy, cross-entropy and predictive
/// entropy. Ties go to the lowest class index. Monte Carlo prediction
/// draws sample `i`'s noise from a stream keyed by `(seed, i)`.
pub fn evaluate(model: &Model, samples: &[ImageSample], mode: PredictMode, seed: u64) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let classes = model.config().classes;
    let mut per_class = vec![(0usize, 0usize); classes];
    let (mut correct, mut ce, mut ent) = (0usize, 0.0, 0.0);
    for (i, s) in samples.iter().enumerate() {
        if s.label >= classes {
            return Err(Error::Data(format!("{}: label {} ≥ class count {classes}", s.id, s.label)));
        }
        let mut rng = SplitMix64::keyed(seed, &[EVAL_STREAM, i as u64]);
        let z = model.predict(&s.tensor(), mode, &mut rng)?;
        let logp = log_softmax(&z);
        let pred = (0..classes).fold(0, |best, c| if z[c] > z[best] { c } else { best });
        let hit = pred == s.label;
        correct += usize::from(hit);
        per_class[s.label].0 += usize::from(hit);
        per_class[s.label].1 += 1;
        ce -= logp[s.label];
        ent -= logp.iter().map(|&lp| if lp.is_finite() { lp.exp() * lp } else { 0.0 }).sum::<f64>();
    }
    let n = samples.len() as f64;
    Ok(EvalReport {
        correct,
        total: samples.len(),
        accuracy: correct as f64 / n,
        per_class,
        mean_ce: ce / n,
        mean_entropy: ent / n,
    })
}

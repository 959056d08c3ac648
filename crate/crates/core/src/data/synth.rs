//! Synthetic corpus whose classes differ only in which normalized-frequency
//! interval carries signal.
//!
//! Each sample is built in DCT space: Gaussian noise on every coefficient
//! plus `±amplitude` on the coefficients whose frequency index falls in the
//! class interval. The inverse DCT is rescaled to `[0, 1]` per image.
//! With [`SignMode::Fixed`] every class has one sign pattern; with
//! [`SignMode::Random`] signs are redrawn per sample, so only the energy
//! distribution across frequencies identifies the class.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{write_ppm, ImageSample};
use crate::config::{parse_pairs, parse_value};
use crate::dct::{idct2_plane, DctPlan};
use crate::error::{Error, Result};
use crate::freq::FrequencyIndexMap;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignMode {
    Fixed,
    Random,
}

impl SignMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fixed" => Some(SignMode::Fixed),
            "random" => Some(SignMode::Random),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SignMode::Fixed => "fixed",
            SignMode::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub intervals: Vec<(f64, f64)>,
    pub amplitude: f64,
    pub noise_std: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub image_size: usize,
    pub sign_mode: SignMode,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            intervals: vec![(0.0, 0.2), (0.4, 0.6), (0.8, 1.0)],
            amplitude: 1.0,
            noise_std: 0.25,
            train_per_class: 40,
            val_per_class: 10,
            test_per_class: 10,
            image_size: 32,
            sign_mode: SignMode::Fixed,
            seed: 0,
        }
    }
}

const SPLITS: [&str; 3] = ["train", "val", "test"];
const SIGN_STREAM: u64 = 0x5157;

impl SynthSpec {
    pub fn classes(&self) -> usize {
        self.intervals.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.intervals.len() < 2 {
            return Err(Error::Config("synthetic spec needs at least 2 classes".into()));
        }
        for (c, &(a, b)) in self.intervals.iter().enumerate() {
            if !(0.0 <= a && a <= b && b <= 1.0) {
                return Err(Error::Config(format!("class {c} interval [{a}, {b}] is not inside [0, 1]")));
            }
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Config(format!("amplitude must be ≥ 0, got {}", self.amplitude)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be ≥ 0, got {}", self.noise_std)));
        }
        if self.image_size == 0 || self.train_per_class == 0 {
            return Err(Error::Config("image_size and train_per_class must be ≥ 1".into()));
        }
        // Identical intervals are only told apart by a fixed, class-specific
        // sign pattern, which needs a nonzero amplitude.
        if self.amplitude == 0.0 || self.sign_mode == SignMode::Random {
            for i in 0..self.classes() {
                for j in i + 1..self.classes() {
                    if self.intervals[i] == self.intervals[j] {
                        return Err(Error::Config(format!(
                            "classes {i} and {j} share interval {:?} and cannot be distinguished",
                            self.intervals[i]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// `class_00`, `class_01`, ... (zero padded so lexicographic order is
    /// label order).
    pub fn class_names(&self) -> Vec<String> {
        let width = (self.classes() - 1).to_string().len().max(2);
        (0..self.classes()).map(|c| format!("class_{c:0width$}")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SynthSpec::default();
        let mut classes = None;
        for (key, value, line) in parse_pairs(text)? {
            let ctx = |e: Error| Error::Config(format!("line {line}: {key}: {e}"));
            match key.as_str() {
                "classes" => classes = Some(parse_value::<usize>(&value).map_err(ctx)?),
                "intervals" => {
                    spec.intervals = value
                        .split(',')
                        .map(|iv| {
                            let (a, b) = iv
                                .trim()
                                .split_once(':')
                                .ok_or_else(|| Error::Config(format!("line {line}: interval `{iv}` is not a:b")))?;
                            Ok((parse_value(a).map_err(ctx)?, parse_value(b).map_err(ctx)?))
                        })
                        .collect::<Result<_>>()?
                }
                "amplitude" => spec.amplitude = parse_value(&value).map_err(ctx)?,
                "noise_std" => spec.noise_std = parse_value(&value).map_err(ctx)?,
                "train_per_class" => spec.train_per_class = parse_value(&value).map_err(ctx)?,
                "val_per_class" => spec.val_per_class = parse_value(&value).map_err(ctx)?,
                "test_per_class" => spec.test_per_class = parse_value(&value).map_err(ctx)?,
                "image_size" => spec.image_size = parse_value(&value).map_err(ctx)?,
                "seed" => spec.seed = parse_value(&value).map_err(ctx)?,
                "sign_mode" => {
                    spec.sign_mode = SignMode::parse(&value)
                        .ok_or_else(|| Error::Config(format!("line {line}: sign_mode must be fixed or random")))?
                }
                _ => return Err(Error::Config(format!("line {line}: unknown synthetic spec key `{key}`"))),
            }
        }
        if let Some(n) = classes {
            if n != spec.intervals.len() {
                return Err(Error::Config(format!(
                    "classes = {n} but {} intervals were given",
                    spec.intervals.len()
                )));
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let ivs: Vec<String> = self.intervals.iter().map(|(a, b)| format!("{a}:{b}")).collect();
        let _ = writeln!(s, "classes = {}", self.classes());
        let _ = writeln!(s, "intervals = {}", ivs.join(", "));
        let _ = writeln!(s, "amplitude = {}", self.amplitude);
        let _ = writeln!(s, "noise_std = {}", self.noise_std);
        let _ = writeln!(s, "train_per_class = {}", self.train_per_class);
        let _ = writeln!(s, "val_per_class = {}", self.val_per_class);
        let _ = writeln!(s, "test_per_class = {}", self.test_per_class);
        let _ = writeln!(s, "image_size = {}", self.image_size);
        let _ = writeln!(s, "sign_mode = {}", self.sign_mode.as_str());
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub classes: Vec<String>,
    pub train: Vec<ImageSample>,
    pub val: Vec<ImageSample>,
    pub test: Vec<ImageSample>,
}

impl SynthCorpus {
    pub fn split(&self, name: &str) -> Option<&[ImageSample]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

fn rescale_unit(px: &mut [f64]) {
    let lo = px.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range > 0.0 {
        px.iter_mut().for_each(|v| *v = (*v - lo) / range);
    } else {
        px.iter_mut().for_each(|v| *v = 0.5);
    }
}

fn random_sign(rng: &mut SplitMix64) -> f64 {
    if rng.next_u64() >> 63 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// The DCT-space recipe for one sample, before the inverse transform.
fn coefficients(spec: &SynthSpec, f: &FrequencyIndexMap, class: usize, rng: &mut SplitMix64) -> Vec<f64> {
    let n = spec.image_size * spec.image_size;
    let (a, b) = spec.intervals[class];
    let mut signs = SplitMix64::keyed(spec.seed, &[SIGN_STREAM, class as u64]);
    let mut coeffs = Vec::with_capacity(3 * n);
    for _ in 0..ImageSample::CHANNELS {
        for &fv in f.values() {
            let mut v = spec.noise_std * rng.normal();
            if (a..=b).contains(&fv) {
                let sign = match spec.sign_mode {
                    SignMode::Fixed => random_sign(&mut signs),
                    SignMode::Random => random_sign(rng),
                };
                v += spec.amplitude * sign;
            }
            coeffs.push(v);
        }
    }
    coeffs
}

/// Draws every split. Sample `(split, class, i)` has its own keyed stream,
/// so splits never share a generator state.
pub fn generate_synth(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let s = spec.image_size;
    let plan = DctPlan::cached(s, s)?;
    let f = FrequencyIndexMap::new(s, s)?;
    let classes = spec.class_names();
    let counts = [spec.train_per_class, spec.val_per_class, spec.test_per_class];
    let mut splits: Vec<Vec<ImageSample>> = Vec::with_capacity(3);
    for (si, (&split, &count)) in SPLITS.iter().zip(&counts).enumerate() {
        let mut out = Vec::with_capacity(count * classes.len());
        for (c, name) in classes.iter().enumerate() {
            for i in 0..count {
                let mut rng = SplitMix64::keyed(spec.seed, &[si as u64, c as u64, i as u64]);
                let coeffs = coefficients(spec, &f, c, &mut rng);
                let mut px: Vec<f64> = coeffs.chunks_exact(s * s).flat_map(|p| idct2_plane(&plan, p)).collect();
                rescale_unit(&mut px);
                out.push(ImageSample { pixels: px, size: s, label: c, id: format!("{split}/{name}/{i:03}") });
            }
        }
        splits.push(out);
    }
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(SynthCorpus { classes, train, val, test })
}

/// Writes `out/<split>/<class>/NNN.ppm` plus `out/spec.txt`. Empty splits
/// get no directory.
pub fn write_synth(corpus: &SynthCorpus, spec: &SynthSpec, out: &Path) -> Result<()> {
    for split in SPLITS {
        let samples = corpus.split(split).expect("known split");
        if samples.is_empty() {
            continue;
        }
        for class in &corpus.classes {
            let dir = out.join(split).join(class);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        for sample in samples {
            let path = out.join(format!("{}.ppm", sample.id));
            write_ppm(&path, &sample.pixels, sample.size)?;
        }
    }
    let path = out.join("spec.txt");
    fs::write(&path, spec.to_text()).map_err(|e| Error::io(&path, e))
}

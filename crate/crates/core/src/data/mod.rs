//! Image corpora, augmentation and the synthetic band-discriminative
//! dataset.
//!
//! A corpus is a directory with one subdirectory per class; classes are
//! numbered in lexicographic order of their directory names and samples
//! in lexicographic order of file names.

pub mod augment;
pub mod ppm;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment_spatial, augment_spectral, AugmentConfig};
pub use synth::{generate_synth, write_synth, SignMode, SynthCorpus, SynthSpec};

/// One RGB image in `[0, 1]`, planar `[3×S×S]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub pixels: Vec<f64>,
    pub size: usize,
    pub label: usize,
    pub id: String,
}

impl ImageSample {
    pub const CHANNELS: usize = 3;

    pub fn tensor(&self) -> Tensor {
        Tensor::new(self.pixels.clone(), &[Self::CHANNELS, self.size, self.size]).expect("sample shape")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub samples: Vec<ImageSample>,
    pub classes: Vec<String>,
    /// Files that could not be decoded.
    pub skipped: usize,
}

/// Bilinear resampling of one `h×w` plane with pixel centres aligned.
pub fn resize_plane(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let coord = |o: usize, out: usize, inp: usize| {
        let x = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(inp - 1);
        (i0, i1, x - i0 as f64)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let (y0, y1, fy) = coord(oy, oh, h);
        for ox in 0..ow {
            let (x0, x1, fx) = coord(ox, ow, w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Resizes planar `[3×h×w]` pixels to `[3×s×s]`.
pub fn resize_rgb(planar: &[f64], h: usize, w: usize, s: usize) -> Vec<f64> {
    planar
        .chunks_exact(h * w)
        .flat_map(|plane| resize_plane(plane, h, w, s, s))
        .collect()
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Loads every decodable image under `root/<class>/`, resized to `s×s`.
pub fn load_corpus(root: &Path, s: usize) -> Result<Corpus> {
    if s == 0 {
        return Err(Error::Config("image size must be ≥ 1".into()));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Data(format!("{} contains no class directories", root.display())));
    }
    let mut samples = Vec::new();
    let mut classes = Vec::new();
    let mut skipped = 0;
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let before = samples.len();
        for file in sorted_entries(dir)?.into_iter().filter(|p| p.is_file()) {
            let decoded = fs::read(&file)
                .map_err(|e| Error::io(&file, e))
                .and_then(|bytes| ppm::decode(&bytes));
            match decoded {
                Ok(img) => {
                    let rgb = img.to_planar_rgb();
                    samples.push(ImageSample {
                        pixels: resize_rgb(&rgb, img.height, img.width, s),
                        size: s,
                        label,
                        id: format!("{name}/{}", file.file_name().unwrap_or_default().to_string_lossy()),
                    });
                }
                Err(e) => {
                    warn!("skipping {}: {e}", file.display());
                    skipped += 1;
                }
            }
        }
        if samples.len() == before {
            return Err(Error::Data(format!("class directory {} has no readable images", dir.display())));
        }
        classes.push(name);
    }
    Ok(Corpus { samples, classes, skipped })
}

/// Writes planar `[3×S×S]` pixels as an 8-bit P6 file.
pub fn write_ppm(path: &Path, sample: &[f64], size: usize) -> Result<()> {
    fs::write(path, ppm::encode_rgb8(size, size, sample)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_resizes_to_constant() {
        let src = vec![0.37; 5 * 7];
        for (oh, ow) in [(1, 1), (3, 9), (16, 16), (32, 5)] {
            for v in resize_plane(&src, 5, 7, oh, ow) {
                assert!((v - 0.37).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resize_identity_and_interpolation() {
        let src: Vec<f64> = (0..4).map(f64::from).collect();
        assert_eq!(resize_plane(&src, 2, 2, 2, 2), src);
        let up = resize_plane(&[0.0, 1.0], 1, 2, 1, 4);
        assert_eq!(up, vec![0.0, 0.25, 0.75, 1.0]);
    }

    fn write(path: &Path, bytes: &[u8]) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, bytes).unwrap();
    }

    #[test]
    fn corpus_enumeration_and_skips() {
        let dir = tempfile::tempdir().unwrap();
        let img = ppm::encode_rgb8(2, 2, &[0.5; 12]);
        write(&dir.path().join("b/2.ppm"), &img);
        write(&dir.path().join("b/1.ppm"), &img);
        write(&dir.path().join("b/3.ppm"), &img);
        write(&dir.path().join("a/x.ppm"), &img);
        write(&dir.path().join("a/y.ppm"), &img);
        write(&dir.path().join("a/broken.ppm"), b"P6\n9 9\n255\n");
        write(&dir.path().join("notes.txt"), b"ignored");
        let c = load_corpus(dir.path(), 4).unwrap();
        assert_eq!(c.classes, vec!["a", "b"]);
        assert_eq!(c.samples.len(), 5);
        assert_eq!(c.skipped, 1);
        let ids: Vec<&str> = c.samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, vec!["a/x.ppm", "a/y.ppm", "b/1.ppm", "b/2.ppm", "b/3.ppm"]);
        assert_eq!(c.samples[2].label, 1);
        assert_eq!(c.samples[0].pixels.len(), 48);
        assert_eq!(load_corpus(dir.path(), 4).unwrap(), c);
    }

    #[test]
    fn empty_class_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        write(&dir.path().join("a/x.ppm"), &ppm::encode_rgb8(1, 1, &[0.0; 3]));
        fs::create_dir_all(dir.path().join("empty")).unwrap();
        let err = load_corpus(dir.path(), 2).unwrap_err();
        assert!(matches!(&err, Error::Data(m) if m.contains("empty")), "{err}");
        assert!(matches!(load_corpus(&dir.path().join("missing"), 2), Err(Error::Io { .. })));
    }
}

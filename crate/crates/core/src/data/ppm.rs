//! Binary netpbm images: P6 (RGB) and P5 (grayscale), maxval 1..=65535.
//! Samples wider than one byte are big-endian.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Netpbm {
    pub width: usize,
    pub height: usize,
    /// 3 for P6, 1 for P5.
    pub channels: usize,
    pub maxval: u16,
    /// Interleaved samples, row-major.
    pub samples: Vec<u16>,
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format { offset: self.pos as u64, msg: msg.into() }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format { offset: start as u64, msg: format!("{what} out of range") })
    }
}

pub fn decode(bytes: &[u8]) -> Result<Netpbm> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(Error::Format { offset: 0, msg: "not a binary PPM/PGM (expected P6 or P5)".into() }),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(h.err(format!("degenerate size {width}×{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(h.err(format!("maxval {maxval} outside 1..=65535")));
    }
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(h.err("expected one whitespace byte after maxval"));
    }
    h.pos += 1;
    let wide = maxval > 255;
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| h.err("image too large"))?;
    let need = count * if wide { 2 } else { 1 };
    let body = &bytes[h.pos..];
    if body.len() < need {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            msg: format!("truncated pixel data: need {need} bytes, have {}", body.len()),
        });
    }
    let samples: Vec<u16> = if wide {
        body[..need].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
    } else {
        body[..need].iter().map(|&b| u16::from(b)).collect()
    };
    if let Some(i) = samples.iter().position(|&s| s as usize > maxval) {
        let off = h.pos + if wide { 2 * i } else { i };
        return Err(Error::Format { offset: off as u64, msg: format!("sample exceeds maxval {maxval}") });
    }
    Ok(Netpbm { width, height, channels, maxval: maxval as u16, samples })
}

impl Netpbm {
    /// Planar `[3×H×W]` values in `[0, 1]`; grayscale is replicated.
    pub fn to_planar_rgb(&self) -> Vec<f64> {
        let n = self.width * self.height;
        let scale = f64::from(self.maxval);
        let mut out = vec![0.0; 3 * n];
        for p in 0..n {
            for c in 0..3 {
                let s = if self.channels == 3 { self.samples[3 * p + c] } else { self.samples[p] };
                out[c * n + p] = f64::from(s) / scale;
            }
        }
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval > 255 {
            for s in &self.samples {
                out.extend_from_slice(&s.to_be_bytes());
            }
        } else {
            out.extend(self.samples.iter().map(|&s| s as u8));
        }
        out
    }
}

/// 8-bit P6 bytes for planar `[3×H×W]` values, clamped to `[0, 1]`.
pub fn encode_rgb8(width: usize, height: usize, planar: &[f64]) -> Vec<u8> {
    let n = width * height;
    assert_eq!(planar.len(), 3 * n, "planar RGB length");
    let mut samples = Vec::with_capacity(3 * n);
    for p in 0..n {
        for c in 0..3 {
            samples.push((planar[c * n + p].clamp(0.0, 1.0) * 255.0).round() as u16);
        }
    }
    Netpbm { width, height, channels: 3, maxval: 255, samples }.encode()
}

/// 8-bit P5 bytes for a single plane, clamped to `[0, 1]`.
pub fn encode_gray8(width: usize, height: usize, plane: &[f64]) -> Vec<u8> {
    let samples = plane.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u16).collect();
    Netpbm { width, height, channels: 1, maxval: 255, samples }.encode()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_two_by_two_rgb() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255]);
        let img = decode(&bytes).unwrap();
        let rgb = img.to_planar_rgb();
        assert_eq!(&rgb[0..4], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(&rgb[4..8], &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(&rgb[8..12], &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn header_comments_and_wide_samples() {
        let mut bytes = b"P5 # gray\n# another\n1 2 1000\n".to_vec();
        bytes.extend_from_slice(&[0x03, 0xE8, 0x01, 0xF4]);
        let img = decode(&bytes).unwrap();
        assert_eq!(img.samples, vec![1000, 500]);
        assert_eq!(img.to_planar_rgb()[1], 0.5);
        assert_eq!(decode(&img.encode()).unwrap(), img);
    }

    #[test]
    fn round_trip_eight_bit() {
        let img = Netpbm { width: 3, height: 1, channels: 3, maxval: 255, samples: (0..9).map(|i| i * 20).collect() };
        assert_eq!(decode(&img.encode()).unwrap(), img);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(decode(b"P3\n1 1\n255\n"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode(b"P6\n2 2\n255\n\x00\x01"), Err(Error::Format { .. })));
        assert!(decode(b"P6\n0 2\n255\n").is_err());
        assert!(decode(b"P6\n1 1\n70000\n").is_err());
        assert!(decode(b"P5\n1 1\n10\n\x0b").is_err());
        assert!(decode(b"P6\nx").is_err());
    }

    #[test]
    fn encoder_clamps() {
        let bytes = encode_rgb8(1, 1, &[-0.5, 0.5, 2.0]);
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
    }
}

//! 8-bit PGM (P5 binary, P2 ASCII on read) and the label masks stored in it.

use std::path::Path;

use crate::error::{Error, Result};

/// Label value excluded from every metric.
pub const IGNORE_LABEL: u8 = 255;

/// `height × width` labels, row-major. Predictions and ground truth share
/// this type; binary masks use 0/1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

/// Ground truth: 0 is background, 255 is ignored.
pub type GroundTruthMask = LabelMask;

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(
                "label mask",
                (height, width),
                (labels.len(), 1),
            ));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Foreground (any label other than 0) becomes 1; ignore stays 255.
    pub fn to_binary(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            labels: self
                .labels
                .iter()
                .map(|&l| match l {
                    0 => 0,
                    IGNORE_LABEL => IGNORE_LABEL,
                    _ => 1,
                })
                .collect(),
        }
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        write_pgm(self.width, self.height, &self.labels)
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let (w, h, data) = read_pgm(bytes)?;
        Self::new(h, w, data)
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_pgm())?;
        Ok(())
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_pgm(&std::fs::read(path)?)
    }
}

pub fn write_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

struct Header<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("PGM", format!("expected a number at byte {start}")))
    }
}

/// Returns `(width, height, pixels)`. Accepts P5 and P2 with maxval ≤ 255.
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.len() < 2 || !(bytes[..2] == *b"P5" || bytes[..2] == *b"P2") {
        return Err(Error::format("PGM", "expected P5 or P2 magic"));
    }
    let binary = bytes[1] == b'5';
    let mut h = Header { buf: bytes, pos: 2 };
    let width = h.number()?;
    let height = h.number()?;
    let maxval = h.number()?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format("PGM", format!("unsupported maxval {maxval}")));
    }
    let n = width * height;
    let pixels = if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = h.pos + 1;
        let raster = bytes
            .get(start..start + n)
            .ok_or_else(|| Error::format("PGM", "raster is truncated"))?;
        raster.to_vec()
    } else {
        (0..n)
            .map(|_| {
                let v = h.number()?;
                u8::try_from(v)
                    .ok()
                    .filter(|&v| v as usize <= maxval)
                    .ok_or_else(|| Error::format("PGM", format!("sample {v} exceeds maxval")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok((width, height, pixels))
}

/// Per-map min-max scaling of scores to 0..=255 for display. A constant map
/// becomes all zeros.
pub fn scores_to_gray(scores: &[f64]) -> Vec<u8> {
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    scores
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - lo) / range * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

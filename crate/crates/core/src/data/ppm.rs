//! Binary P6 PPM, 8 bits per channel.

use std::path::Path;

use crate::error::{Result, TarError};
use crate::tensor::Tensor;

fn quantize(v: f32) -> u8 {
    (((f64::from(v).clamp(-1.0, 1.0) + 1.0) / 2.0) * 255.0).round() as u8
}

fn dequantize(b: u8) -> f32 {
    (f64::from(b) / 255.0 * 2.0 - 1.0) as f32
}

/// Encode a `[3, H, W]` image.
pub fn write_ppm(img: &Tensor<f32>) -> Result<Vec<u8>> {
    if img.rank() != 3 || img.shape()[0] != 3 {
        return Err(TarError::contract(format!("ppm needs a [3, H, W] image, got {:?}", img.shape())));
    }
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let d = img.data();
    out.reserve(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            out.push(quantize(d[c * plane + i]));
        }
    }
    Ok(out)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
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
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(TarError::format(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| TarError::format(start, format!("{what} out of range")))
    }
}

/// Decode a P6 image with maxval 255.
pub fn read_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(TarError::format(0, "not a binary PPM (missing P6 magic)"));
    }
    let mut hd = Header { bytes, pos: 2 };
    let w = hd.number("width")?;
    let h = hd.number("height")?;
    let maxval_at = hd.pos;
    let maxval = hd.number("maxval")?;
    if maxval != 255 {
        return Err(TarError::format(maxval_at, format!("unsupported maxval {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(TarError::format(3, format!("empty image {w}x{h}")));
    }
    match bytes.get(hd.pos) {
        Some(b) if b.is_ascii_whitespace() => hd.pos += 1,
        _ => return Err(TarError::format(hd.pos, "expected whitespace after maxval")),
    }
    let plane = w
        .checked_mul(h)
        .filter(|p| p.checked_mul(3).is_some())
        .ok_or_else(|| TarError::format(3, "image dimensions overflow"))?;
    let payload = &bytes[hd.pos..];
    if payload.len() < 3 * plane {
        return Err(TarError::format(
            bytes.len(),
            format!("truncated payload: {} of {} bytes", payload.len(), 3 * plane),
        ));
    }
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            data[c * plane + i] = dequantize(payload[3 * i + c]);
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

pub fn save_ppm(img: &Tensor<f32>, path: &Path) -> Result<()> {
    let bytes = write_ppm(img)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| TarError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| TarError::io(path, e))
}

pub fn load_ppm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| TarError::io(path, e))?;
    read_ppm(&bytes)
}

use serde::{Deserialize, Serialize};

use crate::error::{Result, TarError};
use crate::tensor::Tensor;

fn in_unit_space(img: &Tensor<f32>, f: impl Fn(f64) -> f64) -> Tensor<f32> {
    img.map(|v| {
        let p = (f64::from(v) + 1.0) / 2.0;
        (2.0 * f(p).clamp(0.0, 1.0) - 1.0) as f32
    })
}

/// `p' = clamp(p + delta, 0, 1)` in `[0, 1]` space.
pub fn adjust_brightness(img: &Tensor<f32>, delta: f64) -> Tensor<f32> {
    if delta == 0.0 {
        return img.clone();
    }
    in_unit_space(img, |p| p + delta)
}

/// `p' = clamp((p - 0.5) * factor + 0.5, 0, 1)` in `[0, 1]` space.
pub fn adjust_contrast(img: &Tensor<f32>, factor: f64) -> Result<Tensor<f32>> {
    if !(factor > 0.0) {
        return Err(TarError::contract(format!("contrast factor must be positive, got {factor}")));
    }
    if factor == 1.0 {
        return Ok(img.clone());
    }
    Ok(in_unit_space(img, |p| (p - 0.5) * factor + 0.5))
}

/// Brightness shift followed by contrast scaling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Adjustment {
    pub brightness: f64,
    pub contrast: f64,
}

impl Default for Adjustment {
    fn default() -> Self {
        Adjustment {
            brightness: 0.0,
            contrast: 1.0,
        }
    }
}

impl Adjustment {
    pub fn is_identity(&self) -> bool {
        self.brightness == 0.0 && self.contrast == 1.0
    }
}

pub fn adjust_image(img: &Tensor<f32>, adj: &Adjustment) -> Result<Tensor<f32>> {
    adjust_contrast(&adjust_brightness(img, adj.brightness), adj.contrast)
}

use crate::autograd::Graph;
use crate::error::{Result, TarError};
use crate::model::{Mode, ModelParams, Session};
use crate::tensor::Tensor;

/// Output of the first decoder stage.
pub const DEFAULT_CAM_LAYER: &str = "dec.s0";
const CAM_EPS: f64 = 1e-12;

/// `S × S` activation map in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub values: Tensor<f32>,
    pub layer: String,
}

impl Heatmap {
    /// Colour-mapped `[3, S, S]` image in `[-1, 1]`.
    pub fn to_image(&self) -> Tensor<f32> {
        let (h, w) = (self.values.shape()[0], self.values.shape()[1]);
        let plane = h * w;
        let mut data = vec![0.0f32; 3 * plane];
        for (i, &v) in self.values.data().iter().enumerate() {
            let rgb = colormap(f64::from(v));
            for c in 0..3 {
                data[c * plane + i] = (2.0 * rgb[c] - 1.0) as f32;
            }
        }
        Tensor::from_vec(&[3, h, w], data).expect("heatmap shape")
    }
}

/// Blue at 0, yellow at 0.5, red at 1, linear in between. RGB in `[0, 1]`.
pub fn colormap(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    if t <= 0.5 {
        let u = t / 0.5;
        [u, u, 1.0 - u]
    } else {
        let u = (t - 0.5) / 0.5;
        [1.0, 1.0 - u, 0.0]
    }
}

/// Channel mean of absolute activations at a decoder stage for one
/// `[3, S, S]` image, min-max normalized and upsampled to `S × S` by
/// nearest neighbour.
pub fn cam_map(model: &ModelParams<f32>, img: &Tensor<f32>, layer: &str) -> Result<Heatmap> {
    let valid = model.decoder_layers();
    if !valid.iter().any(|l| l == layer) {
        return Err(TarError::config(format!(
            "unknown layer {layer:?}; valid layers: {}",
            valid.join(", ")
        )));
    }
    let s = model.config.input_size;
    if img.shape() != [model.config.in_channels, s, s] {
        return Err(TarError::contract(format!(
            "cam expects an image [{}, {s}, {s}], got {:?}",
            model.config.in_channels,
            img.shape()
        )));
    }
    let mut g = Graph::new();
    let mut session = Session::new(model, Mode::Infer);
    let x = g.input(img.clone().reshape(&[1, model.config.in_channels, s, s])?);
    let h = session.encode(&mut g, x)?;
    session.decode(&mut g, h)?;
    let v = session.tap(layer).expect("decoder stage taps are recorded");
    let act = g.value(v);
    let (_, c, lh, lw) = act.dims4()?;
    let plane = lh * lw;
    let mut m = vec![0.0f64; plane];
    for ch in 0..c {
        for (i, a) in act.data()[ch * plane..(ch + 1) * plane].iter().enumerate() {
            m[i] += f64::from(a.abs());
        }
    }
    m.iter_mut().for_each(|v| *v /= c as f64);
    let m = min_max_normalize(&m);
    let mut out = Vec::with_capacity(s * s);
    for y in 0..s {
        for x in 0..s {
            out.push(m[(y * lh / s) * lw + x * lw / s] as f32);
        }
    }
    Ok(Heatmap {
        values: Tensor::from_vec(&[s, s], out)?,
        layer: layer.to_string(),
    })
}

/// `(v - min) / (max - min + 1e-12)`.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().map(|v| (v - lo) / (hi - lo + CAM_EPS)).collect()
}

/// `(1 - alpha) * img + alpha * colormap(heat)`.
pub fn overlay(img: &Tensor<f32>, heat: &Heatmap, alpha: f64) -> Result<Tensor<f32>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(TarError::contract(format!("overlay alpha {alpha} outside [0, 1]")));
    }
    let colored = heat.to_image();
    if img.shape() != colored.shape() {
        return Err(TarError::contract(format!(
            "overlay: image {:?} and heatmap {:?} differ in size",
            img.shape(),
            heat.values.shape()
        )));
    }
    let a = alpha as f32;
    img.zip_map(&colored, |p, q| (1.0 - a) * p + a * q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_anchors() {
        assert_eq!(colormap(0.0), [0.0, 0.0, 1.0]);
        assert_eq!(colormap(0.5), [1.0, 1.0, 0.0]);
        assert_eq!(colormap(1.0), [1.0, 0.0, 0.0]);
        assert_eq!(colormap(0.25), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn overlay_endpoints() {
        let img = Tensor::from_vec(&[3, 1, 2], vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap();
        let heat = Heatmap {
            values: Tensor::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap(),
            layer: "x".into(),
        };
        assert_eq!(overlay(&img, &heat, 0.0).unwrap(), img);
        assert_eq!(overlay(&img, &heat, 1.0).unwrap(), heat.to_image());
        assert!(overlay(&img, &heat, 1.5).is_err());
        let small = Tensor::zeros(&[3, 1, 1]);
        assert!(overlay(&small, &heat, 0.5).is_err());
    }
}

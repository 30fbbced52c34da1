use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Result, TarError};
use crate::model::Label;
use crate::tensor::{Scalar, Tensor};

/// Weight of the reconstruction term in the combined loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda: 0.1 }
    }
}

impl LossWeights {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(TarError::config(format!("lambda {lambda} must be non-negative")));
        }
        Ok(LossWeights { lambda })
    }
}

/// `Σ_m |A_m2 − l_m + 1| + Σ_m |A_m1 + l_m − 2|` with `l ∈ {1, 2}`.
pub fn activation_loss(batch: &[(f64, f64, Label)]) -> f64 {
    batch
        .iter()
        .map(|&(a1, a2, l)| {
            let l = f64::from(l.code());
            (a2 - l + 1.0).abs() + (a1 + l - 2.0).abs()
        })
        .sum()
}

/// Mean absolute error between an image batch and its reconstruction.
pub fn reconstruction_loss<T: Scalar>(x: &Tensor<T>, recon: &Tensor<T>) -> Result<f64> {
    x.expect_same_shape(recon, "reconstruction_loss")?;
    let n = x.numel().max(1) as f64;
    Ok(x
        .data()
        .iter()
        .zip(recon.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
        .sum::<f64>()
        / n)
}

pub fn total_loss(recon: f64, activ: f64, weights: LossWeights) -> f64 {
    weights.lambda * recon + activ
}

/// Activation loss on a `[B, 2]` node of per-half activations.
pub fn activation_loss_var<T: Scalar>(g: &mut Graph<T>, act: Var, labels: &[Label]) -> Result<Var> {
    let shape = g.value(act).shape();
    if shape != [labels.len(), 2] {
        return Err(TarError::contract(format!(
            "activation loss: activations {shape:?} for {} labels",
            labels.len()
        )));
    }
    let target: Vec<T> = labels
        .iter()
        .flat_map(|l| {
            let (t1, t2) = l.target();
            [T::of(t1), T::of(t2)]
        })
        .collect();
    let target = Tensor::from_vec(&[labels.len(), 2], target)?;
    let diff = g.sub_const(act, &target)?;
    Ok(g.l1_sum(diff))
}

pub fn reconstruction_loss_var<T: Scalar>(g: &mut Graph<T>, x: Var, recon: Var) -> Result<Var> {
    let n = g.value(x).numel().max(1);
    let d = g.sub(recon, x)?;
    let s = g.l1_sum(d);
    Ok(g.scale(s, 1.0 / n as f64))
}

pub fn total_loss_var<T: Scalar>(g: &mut Graph<T>, recon: Var, activ: Var, weights: LossWeights) -> Result<Var> {
    let r = g.scale(recon, weights.lambda);
    g.add(r, activ)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_loss_hand_values() {
        assert_eq!(activation_loss(&[(1.0, 0.0, Label::Real)]), 0.0);
        assert_eq!(activation_loss(&[(0.0, 1.0, Label::Fake)]), 0.0);
        assert_eq!(activation_loss(&[(0.0, 0.0, Label::Real)]), 1.0);
        assert_eq!(activation_loss(&[(0.5, 0.5, Label::Fake)]), 1.0);
    }

    #[test]
    fn graph_activation_loss_matches_scalar() {
        let rows = [(0.2, 0.9, Label::Fake), (0.7, 0.1, Label::Real), (0.0, 0.0, Label::Real)];
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = rows.iter().flat_map(|r| [r.0, r.1]).collect();
        let a = g.variable(Tensor::from_vec(&[3, 2], data).unwrap());
        let labels: Vec<_> = rows.iter().map(|r| r.2).collect();
        let l = activation_loss_var(&mut g, a, &labels).unwrap();
        assert!((g.value(l).item().unwrap() - activation_loss(&rows)).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_loss_basics() {
        let x = Tensor::<f64>::full(&[1, 1, 1, 1], 0.5);
        let y = Tensor::<f64>::full(&[1, 1, 1, 1], 0.25);
        assert_eq!(reconstruction_loss(&x, &x).unwrap(), 0.0);
        assert_eq!(reconstruction_loss(&x, &y).unwrap(), 0.25);
        assert!(reconstruction_loss(&x, &Tensor::zeros(&[1, 1, 1, 2])).is_err());
    }

    #[test]
    fn total_loss_arithmetic() {
        let w = LossWeights::default();
        assert!((total_loss(2.0, 0.3, w) - 0.5).abs() < 1e-15);
        assert_eq!(total_loss(2.0, 0.3, LossWeights { lambda: 0.0 }), 0.3);
        assert!((total_loss(1.0, 0.0, w) - 0.1).abs() < 1e-15);
        assert!(LossWeights::new(-1.0).is_err());
    }
}

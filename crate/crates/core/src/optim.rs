use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TarError};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T: Scalar> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T: Scalar = f32> {
    pub config: OptimizerConfig,
    pub step: u64,
    pub moments: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Apply one update from the gradients currently loaded in `params`,
    /// then clear them.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if let Some((name, _)) = params.iter().find(|(_, p)| !p.grad_ready) {
            return Err(TarError::contract(format!(
                "optimizer step without gradient for {name}; run backward first"
            )));
        }
        self.step += 1;
        let c = &self.config;
        let lr = T::of(c.lr);
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in names {
            let p = params.get_mut(&name).expect("name from store");
            match c.kind {
                OptimizerKind::Sgd => {
                    let d = p.value.data_mut();
                    for (w, &g) in d.iter_mut().zip(p.grad.data()) {
                        *w = *w - lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let mo = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                        m: Tensor::zeros(p.value.shape()),
                        v: Tensor::zeros(p.value.shape()),
                    });
                    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
                    let bc1 = T::of(1.0 - c.beta1.powi(self.step as i32));
                    let bc2 = T::of(1.0 - c.beta2.powi(self.step as i32));
                    let eps = T::of(c.eps);
                    let g = p.grad.data();
                    let m = mo.m.data_mut();
                    let v = mo.v.data_mut();
                    for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                        m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                        v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        *w = *w - lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        params.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64, g: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::full(&[1], v));
        let p = s.get_mut("w").unwrap();
        p.grad = Tensor::full(&[1], g);
        p.grad_ready = true;
        s
    }

    #[test]
    fn sgd_update_rule() {
        let mut s = store(5.0, 1.0);
        let mut opt = Optimizer::new(OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: 0.1,
            ..Default::default()
        });
        opt.step(&mut s).unwrap();
        assert!((s.value("w").unwrap().data()[0] - 4.9).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut s = store(5.0, 0.0);
            let mut opt = Optimizer::new(OptimizerConfig { kind, ..Default::default() });
            opt.step(&mut s).unwrap();
            assert_eq!(s.value("w").unwrap().data()[0], 5.0);
        }
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        // hand-rolled first step: m = (1-b1) g, v = (1-b2) g^2, bias-corrected
        // ratio m̂/√v̂ = g/|g| up to eps.
        for g in [1e-3, 0.5, 250.0, -7.0] {
            let mut s = store(1.0, g);
            let cfg = OptimizerConfig::default();
            let m = (1.0 - cfg.beta1) * g / (1.0 - cfg.beta1);
            let v = (1.0 - cfg.beta2) * g * g / (1.0 - cfg.beta2);
            let expected = 1.0 - cfg.lr * m / (v.sqrt() + cfg.eps);
            let mut opt = Optimizer::new(cfg.clone());
            opt.step(&mut s).unwrap();
            let w = s.value("w").unwrap().data()[0];
            assert!((w - expected).abs() < 1e-15);
            assert!(((1.0 - w).abs() - cfg.lr).abs() < cfg.lr * 1e-4);
        }
    }

    #[test]
    fn step_without_backward_is_an_error() {
        let mut s = ParamStore::<f32>::new();
        s.insert("w", Tensor::zeros(&[3]));
        let mut opt = Optimizer::new(OptimizerConfig::default());
        assert!(opt.step(&mut s).is_err());
    }
}

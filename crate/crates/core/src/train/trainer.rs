use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{activation_loss_var, reconstruction_loss_var, total_loss_var, LossWeights};
use crate::autograd::Graph;
use crate::data::{to_batch, ImageSample};
use crate::error::{Result, TarError};
use crate::model::{classify_pair, forward_train, Label, Mode, ModelParams, Session};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::tensor::ops::BN_MOMENTUM;
use crate::tensor::Scalar;

/// Which latent the activation loss is measured on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationSource {
    /// The encoder output before label masking.
    #[default]
    Raw,
    /// The label-masked latent fed to the decoder.
    Facilitated,
}

/// Arithmetic used for the training passes. Weights are stored as `f32`
/// either way.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub activation_source: ActivationSource,
    /// Stop after this many epochs without a lower mean total loss.
    pub early_stop_patience: Option<usize>,
    pub lr_multiplier: f64,
    pub bn_momentum: f64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerConfig::default(),
            batch_size: 16,
            epochs: 20,
            seed: 0,
            weights: LossWeights::default(),
            activation_source: ActivationSource::Raw,
            early_stop_patience: None,
            lr_multiplier: 1.0,
            bn_momentum: BN_MOMENTUM,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.batch_size < 2 {
            bad.push(format!("batch_size must be at least 2 (got {})", self.batch_size));
        }
        if self.epochs == 0 {
            bad.push("epochs must be at least 1".to_string());
        }
        if !(self.optimizer.lr > 0.0) {
            bad.push(format!("lr must be positive (got {})", self.optimizer.lr));
        }
        if !(self.lr_multiplier > 0.0) {
            bad.push(format!("lr_multiplier must be positive (got {})", self.lr_multiplier));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            bad.push(format!("bn_momentum must be in (0, 1] (got {})", self.bn_momentum));
        }
        if !(self.weights.lambda >= 0.0) {
            bad.push(format!("lambda must be non-negative (got {})", self.weights.lambda));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(TarError::config(bad.join("; ")))
        }
    }

    pub fn make_optimizer<T: Scalar>(&self) -> Optimizer<T> {
        let mut oc = self.optimizer.clone();
        oc.lr *= self.lr_multiplier;
        Optimizer::new(oc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_total: f64,
    pub l_activ: f64,
    pub l_recon: f64,
    pub train_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,l_total,l_activ,l_recon,train_acc\n");
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.epoch, r.l_total, r.l_activ, r.l_recon, r.train_acc
            ));
        }
        s
    }

    pub fn first(&self) -> Option<&EpochRecord> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

fn check_labels(samples: &[ImageSample]) -> Result<()> {
    let real = samples.iter().filter(|s| s.label == Label::Real).count();
    if real == 0 || real == samples.len() {
        return Err(TarError::config(format!(
            "training set needs both labels ({real} real, {} fake)",
            samples.len() - real
        )));
    }
    Ok(())
}

/// Run `cfg.epochs` passes over `samples`, updating `model` in place.
/// Batches come from a seeded shuffle per epoch; a trailing batch of one
/// sample is dropped because batch statistics need two.
pub fn train_epochs<T: Scalar>(
    model: &mut ModelParams<T>,
    optimizer: &mut Optimizer<T>,
    samples: &[ImageSample],
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    check_labels(samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = History::default();
    let mut best = f64::INFINITY;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut activ, mut recon) = (0.0, 0.0, 0.0);
        let (mut correct, mut seen, mut steps) = (0usize, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&ImageSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (x, labels) = to_batch::<T>(&batch)?;
            let mut g = Graph::new();
            let mut session = Session::new(&*model, Mode::Train);
            let out = forward_train(&mut g, &mut session, &x, &labels)?;
            let act = match cfg.activation_source {
                ActivationSource::Raw => out.act_raw,
                ActivationSource::Facilitated => out.act_fac,
            };
            let la = activation_loss_var(&mut g, act, &labels)?;
            let lr = reconstruction_loss_var(&mut g, out.input, out.recon)?;
            let lt = total_loss_var(&mut g, lr, la, cfg.weights)?;
            let (vt, va, vr) = (g.value(lt).item()?, g.value(la).item()?, g.value(lr).item()?);
            if !vt.is_finite() {
                return Err(TarError::Numeric(format!(
                    "non-finite loss {vt} at epoch {epoch}, step {}",
                    steps + 1
                )));
            }
            let a = g.value(out.act_raw).data();
            for (m, l) in labels.iter().enumerate() {
                if classify_pair(a[2 * m].as_f64(), a[2 * m + 1].as_f64()) == *l {
                    correct += 1;
                }
            }
            seen += labels.len();
            let stats = session.take_stats();
            g.backward(lt)?;
            model.params.load_grads(&g)?;
            optimizer.step(&mut model.params)?;
            model.apply_bn_stats(&stats, cfg.bn_momentum)?;
            total += vt.as_f64();
            activ += va.as_f64();
            recon += vr.as_f64();
            steps += 1;
        }
        if steps == 0 {
            return Err(TarError::config("training set has fewer than two samples"));
        }
        if !model.all_finite() {
            return Err(TarError::Numeric(format!("non-finite parameters after epoch {epoch}")));
        }
        let n = steps as f64;
        let rec = EpochRecord {
            epoch,
            l_total: total / n,
            l_activ: activ / n,
            l_recon: recon / n,
            train_acc: correct as f64 / seen as f64,
        };
        let improved = rec.l_total < best;
        history.epochs.push(rec);
        if let Some(patience) = cfg.early_stop_patience {
            if improved {
                best = history.epochs[epoch - 1].l_total;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }
    Ok(history)
}

/// Train a copy of `model` on one base domain with a fresh optimizer.
pub fn train_base(
    model: &ModelParams<f32>,
    samples: &[ImageSample],
    cfg: &TrainConfig,
) -> Result<(ModelParams<f32>, History)> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => {
            let mut m = model.clone();
            let mut opt = cfg.make_optimizer();
            let h = train_epochs(&mut m, &mut opt, samples, cfg)?;
            Ok((m, h))
        }
        Precision::F64 => {
            let mut m = model.cast::<f64>();
            let mut opt = cfg.make_optimizer();
            let h = train_epochs(&mut m, &mut opt, samples, cfg)?;
            Ok((m.cast(), h))
        }
    }
}

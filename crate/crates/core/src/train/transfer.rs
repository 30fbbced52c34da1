use serde::{Deserialize, Serialize};

use super::trainer::{train_base, TrainConfig};
use crate::data::{FakeKind, ImageSample, SplitDataset};
use crate::error::{Result, TarError};
use crate::eval::evaluate;
use crate::model::{Label, ModelParams};

/// One fine-tuning step of a transfer sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferStage {
    pub target: FakeKind,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferPlan {
    /// Domain the starting model was trained on.
    pub source: FakeKind,
    pub stages: Vec<TransferStage>,
    /// Few-shot images per class in each stage.
    pub shots_per_class: usize,
    /// Accept few-shot sets of a different size.
    pub allow_count_mismatch: bool,
}

impl TransferPlan {
    pub fn new(source: FakeKind, targets: &[FakeKind], config: TrainConfig) -> Self {
        TransferPlan {
            source,
            stages: targets
                .iter()
                .map(|&target| TransferStage {
                    target,
                    config: config.clone(),
                })
                .collect(),
            shots_per_class: 50,
            allow_count_mismatch: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(TarError::config("transfer plan has no stages"));
        }
        let mut prev = self.source;
        for s in &self.stages {
            if s.target == self.source || s.target == prev {
                return Err(TarError::config(format!(
                    "transfer stage target {} repeats an earlier domain",
                    s.target
                )));
            }
            prev = s.target;
        }
        Ok(())
    }

    /// Row names: `a→b`, `a→b→c`, ...
    pub fn stage_names(&self) -> Vec<String> {
        let mut name = self.source.name().to_string();
        self.stages
            .iter()
            .map(|s| {
                name = format!("{name}→{}", s.target);
                name.clone()
            })
            .collect()
    }
}

/// Test accuracy on every domain of a dataset after one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub name: String,
    pub base: Option<FakeKind>,
    pub domains: Vec<FakeKind>,
    pub accuracy: Vec<f64>,
}

impl Snapshot {
    pub fn measure(model: &ModelParams<f32>, name: &str, base: Option<FakeKind>, data: &SplitDataset) -> Result<Self> {
        let mut accuracy = Vec::with_capacity(data.domains.len());
        for d in &data.domains {
            accuracy.push(evaluate(model, &d.test)?.accuracy);
        }
        Ok(Snapshot {
            name: name.to_string(),
            base,
            domains: data.kinds(),
            accuracy,
        })
    }

    pub fn accuracy_on(&self, kind: FakeKind) -> Option<f64> {
        self.domains.iter().position(|k| *k == kind).map(|i| self.accuracy[i])
    }

    pub fn mean_accuracy(&self) -> f64 {
        self.accuracy.iter().sum::<f64>() / self.accuracy.len().max(1) as f64
    }
}

/// Fine-tune a copy of `model` on a small target-domain set. All weights
/// stay trainable and the optimizer starts fresh. With
/// `expected_per_class` set, the set must hold exactly that many images of
/// each label.
pub fn transfer_few_shot(
    model: &ModelParams<f32>,
    target_set: &[ImageSample],
    cfg: &TrainConfig,
    expected_per_class: Option<usize>,
) -> Result<ModelParams<f32>> {
    if let Some(n) = expected_per_class {
        let real = target_set.iter().filter(|s| s.label == Label::Real).count();
        let fake = target_set.len() - real;
        if real != n || fake != n {
            return Err(TarError::config(format!(
                "few-shot set has {real} real and {fake} fake images, plan expects {n}:{n}"
            )));
        }
    }
    if cfg.epochs == 0 {
        return Ok(model.clone());
    }
    Ok(train_base(model, target_set, cfg)?.0)
}

/// Apply each stage of `plan` in order, measuring all domains after each.
pub fn sequence_transfer(
    model: &ModelParams<f32>,
    plan: &TransferPlan,
    data: &SplitDataset,
) -> Result<(ModelParams<f32>, Vec<Snapshot>)> {
    sequence_transfer_each(model, plan, data, |_, _, _| Ok(()))
}

/// As [`sequence_transfer`], calling `on_stage(index, model, snapshot)`
/// after every stage.
pub fn sequence_transfer_each<F>(
    model: &ModelParams<f32>,
    plan: &TransferPlan,
    data: &SplitDataset,
    mut on_stage: F,
) -> Result<(ModelParams<f32>, Vec<Snapshot>)>
where
    F: FnMut(usize, &ModelParams<f32>, &Snapshot) -> Result<()>,
{
    plan.validate()?;
    let expected = (!plan.allow_count_mismatch).then_some(plan.shots_per_class);
    let mut current = model.clone();
    let mut snapshots = Vec::with_capacity(plan.stages.len());
    for (i, (stage, name)) in plan.stages.iter().zip(plan.stage_names()).enumerate() {
        let set = &data.domain(stage.target)?.fewshot;
        current = transfer_few_shot(&current, set, &stage.config, expected)?;
        let snap = Snapshot::measure(&current, &name, Some(plan.source), data)?;
        on_stage(i, &current, &snap)?;
        snapshots.push(snap);
    }
    Ok((current, snapshots))
}

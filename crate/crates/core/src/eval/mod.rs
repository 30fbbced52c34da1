//! Accuracy evaluation, accuracy tables and activation heatmaps.

mod cam;
mod matrix;

pub use cam::{cam_map, colormap, min_max_normalize, overlay, Heatmap, DEFAULT_CAM_LAYER};
pub use matrix::{transfer_table, zero_shot_matrix, AccuracyMatrix, MatrixRow};

use serde::{Deserialize, Serialize};

use crate::data::{adjust_image, to_batch, Adjustment, ImageSample};
use crate::error::{Result, TarError};
use crate::model::{classify_pair, encode, per_class_activation, Label, ModelParams};
use crate::parallel;

const EVAL_CHUNK: usize = 32;

/// Per-sample audit record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: u64,
    pub a1: f64,
    pub a2: f64,
    pub prediction: Label,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub records: Vec<EvalRecord>,
}

impl Evaluation {
    pub fn records_csv(&self) -> String {
        let mut s = String::from("id,a1,a2,prediction,label\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{:.9},{:.9},{},{}\n",
                r.id,
                r.a1,
                r.a2,
                r.prediction.name(),
                r.label.name()
            ));
        }
        s
    }
}

/// Inference-mode accuracy of the activation rule on `samples`.
pub fn evaluate(model: &ModelParams<f32>, samples: &[ImageSample]) -> Result<Evaluation> {
    evaluate_adjusted(model, samples, &Adjustment::default())
}

/// As [`evaluate`], applying a brightness/contrast adjustment to every
/// image first.
pub fn evaluate_adjusted(model: &ModelParams<f32>, samples: &[ImageSample], adj: &Adjustment) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(TarError::config("cannot evaluate on an empty set"));
    }
    let chunks: Vec<&[ImageSample]> = samples.chunks(EVAL_CHUNK).collect();
    let parts = parallel::map_range(chunks.len(), |i| -> Result<Vec<EvalRecord>> {
        let chunk = chunks[i];
        let adjusted;
        let refs: Vec<&ImageSample> = if adj.is_identity() {
            chunk.iter().collect()
        } else {
            adjusted = chunk
                .iter()
                .map(|s| {
                    Ok(ImageSample {
                        pixels: adjust_image(&s.pixels, adj)?,
                        ..s.clone()
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            adjusted.iter().collect()
        };
        let (x, labels) = to_batch::<f32>(&refs)?;
        let h = encode(model, &x)?;
        Ok(per_class_activation(&h)
            .into_iter()
            .zip(refs.iter().zip(labels))
            .map(|((a1, a2), (s, label))| EvalRecord {
                id: s.id,
                a1,
                a2,
                prediction: classify_pair(a1, a2),
                label,
            })
            .collect())
    });
    let mut records = Vec::with_capacity(samples.len());
    for p in parts {
        records.extend(p?);
    }
    let correct = records.iter().filter(|r| r.prediction == r.label).count();
    let total = records.len();
    Ok(Evaluation {
        correct,
        total,
        accuracy: correct as f64 / total as f64,
        records,
    })
}

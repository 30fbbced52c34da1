use serde::{Deserialize, Serialize};

use crate::error::{Result, TarError};
use crate::model::Label;
use crate::tensor::{Scalar, Tensor};

/// Synthetic manipulation method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FakeKind {
    /// Central region of another image pasted with a feathered seam.
    BlendSwap,
    /// Same paste with a hard seam.
    SharpSwap,
    /// Smooth local displacement of the central region.
    LocalWarp,
}

impl FakeKind {
    pub const ALL: [FakeKind; 3] = [FakeKind::BlendSwap, FakeKind::SharpSwap, FakeKind::LocalWarp];

    pub fn name(self) -> &'static str {
        match self {
            FakeKind::BlendSwap => "blendswap",
            FakeKind::SharpSwap => "sharpswap",
            FakeKind::LocalWarp => "localwarp",
        }
    }

    pub fn code(self) -> u64 {
        match self {
            FakeKind::BlendSwap => 1,
            FakeKind::SharpSwap => 2,
            FakeKind::LocalWarp => 3,
        }
    }
}

impl std::str::FromStr for FakeKind {
    type Err = TarError;

    fn from_str(s: &str) -> Result<Self> {
        FakeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                TarError::config(format!(
                    "unknown domain {s:?}; known domains: blendswap, sharpswap, localwarp"
                ))
            })
    }
}

impl std::fmt::Display for FakeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Generation method of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    Real,
    Fake(FakeKind),
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Real => "real",
            Domain::Fake(k) => k.name(),
        }
    }

    pub fn label(self) -> Label {
        match self {
            Domain::Real => Label::Real,
            Domain::Fake(_) => Label::Fake,
        }
    }
}

/// One `[3, S, S]` image in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub pixels: Tensor<f32>,
    pub label: Label,
    pub domain: Domain,
    pub id: u64,
}

impl ImageSample {
    pub fn new(pixels: Tensor<f32>, domain: Domain, id: u64) -> Result<Self> {
        if pixels.rank() != 3 || pixels.shape()[0] != 3 {
            return Err(TarError::contract(format!(
                "image must be [3, S, S], got {:?}",
                pixels.shape()
            )));
        }
        if pixels.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(TarError::contract(format!("image {id} has pixels outside [-1, 1]")));
        }
        Ok(ImageSample {
            pixels,
            label: domain.label(),
            domain,
            id,
        })
    }

    pub fn size(&self) -> usize {
        self.pixels.shape()[1]
    }
}

/// Stack samples into a `[B, 3, S, S]` batch.
pub fn to_batch<T: Scalar>(samples: &[&ImageSample]) -> Result<(Tensor<T>, Vec<Label>)> {
    let refs: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.pixels).collect();
    let x = Tensor::stack(&refs)?;
    Ok((x.cast(), samples.iter().map(|s| s.label).collect()))
}

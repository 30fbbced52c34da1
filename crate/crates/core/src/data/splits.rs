use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sample::{FakeKind, ImageSample};
use super::synth::DomainCorpus;
use crate::error::{Result, TarError};

/// Dataset role of a split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Base training set (D1).
    Train,
    /// Few-shot transfer set (D2).
    FewShot,
    /// Held-out test set (D3).
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::FewShot, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::FewShot => "fewshot",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = TarError;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| TarError::config(format!("unknown split {s:?}; expected train, fewshot or test")))
    }
}

/// Per-class counts for each role.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_per_class: usize,
    pub fewshot_per_class: usize,
    pub test_per_class: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_per_class: 1000,
            fewshot_per_class: 50,
            test_per_class: 200,
        }
    }
}

impl SplitSpec {
    pub fn per_class(&self) -> usize {
        self.train_per_class + self.fewshot_per_class + self.test_per_class
    }
}

/// The three roles of one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSplits {
    pub kind: FakeKind,
    pub train: Vec<ImageSample>,
    pub fewshot: Vec<ImageSample>,
    pub test: Vec<ImageSample>,
}

impl DomainSplits {
    pub fn get(&self, split: Split) -> &[ImageSample] {
        match split {
            Split::Train => &self.train,
            Split::FewShot => &self.fewshot,
            Split::Test => &self.test,
        }
    }
}

/// Splits for several domains sharing one image size.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub size: usize,
    pub domains: Vec<DomainSplits>,
}

impl SplitDataset {
    /// Generate and split every domain in `kinds`.
    pub fn generate(kinds: &[FakeKind], spec: &SplitSpec, size: usize, seed: u64) -> Result<Self> {
        let mut domains = Vec::with_capacity(kinds.len());
        for &kind in kinds {
            let corpus = DomainCorpus::generate(kind, spec.per_class(), size, seed)?;
            domains.push(make_splits(&corpus, spec, seed)?);
        }
        Ok(SplitDataset { size, domains })
    }

    pub fn domain(&self, kind: FakeKind) -> Result<&DomainSplits> {
        self.domains.iter().find(|d| d.kind == kind).ok_or_else(|| {
            let have: Vec<&str> = self.domains.iter().map(|d| d.kind.name()).collect();
            TarError::config(format!("domain {kind} not in dataset (have: {})", have.join(", ")))
        })
    }

    pub fn kinds(&self) -> Vec<FakeKind> {
        self.domains.iter().map(|d| d.kind).collect()
    }
}

/// Assign each class of `corpus` to train/few-shot/test by a seeded shuffle.
/// Within a split, reals come first, then fakes.
pub fn make_splits(corpus: &DomainCorpus, spec: &SplitSpec, seed: u64) -> Result<DomainSplits> {
    let need = spec.per_class();
    for (name, have) in [("real", corpus.real.len()), ("fake", corpus.fake.len())] {
        if have < need {
            return Err(TarError::config(format!(
                "domain {}: {have} {name} samples, splits need {need} ({} train + {} few-shot + {} test)",
                corpus.kind, spec.train_per_class, spec.fewshot_per_class, spec.test_per_class
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ corpus.kind.code().wrapping_mul(0x5851_F42D_4C95_7F2D));
    let mut out = DomainSplits {
        kind: corpus.kind,
        train: Vec::new(),
        fewshot: Vec::new(),
        test: Vec::new(),
    };
    for class in [&corpus.real, &corpus.fake] {
        let mut order: Vec<usize> = (0..class.len()).collect();
        order.shuffle(&mut rng);
        let mut it = order.into_iter().map(|i| class[i].clone());
        out.train.extend(it.by_ref().take(spec.train_per_class));
        out.fewshot.extend(it.by_ref().take(spec.fewshot_per_class));
        out.test.extend(it.by_ref().take(spec.test_per_class));
    }
    Ok(out)
}

use serde::{Deserialize, Serialize};

use crate::error::{Result, TarError};
use crate::tensor::{Scalar, Tensor};

/// Ground-truth or predicted class, encoded 1 (real) / 2 (fake).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn code(self) -> u8 {
        match self {
            Label::Real => 1,
            Label::Fake => 2,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            1 => Ok(Label::Real),
            2 => Ok(Label::Fake),
            _ => Err(TarError::contract(format!("label code {c} is not 1 (real) or 2 (fake)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }

    /// Target `(A1, A2)` the activation loss pulls towards.
    pub fn target(self) -> (f64, f64) {
        match self {
            Label::Real => (1.0, 0.0),
            Label::Fake => (0.0, 1.0),
        }
    }
}

impl std::str::FromStr for Label {
    type Err = TarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" | "1" => Ok(Label::Real),
            "fake" | "2" => Ok(Label::Fake),
            _ => Err(TarError::config(format!("unknown label {s:?}"))),
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Encoder output `[B, 2N, M, M]`: channels `0..N` form the real half,
/// `N..2N` the fake half.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTensor<T: Scalar = f32> {
    h: Tensor<T>,
    half: usize,
}

impl<T: Scalar> LatentTensor<T> {
    pub fn new(h: Tensor<T>) -> Result<Self> {
        let (_, c, _, _) = h.dims4()?;
        if c == 0 || c % 2 != 0 {
            return Err(TarError::contract(format!(
                "latent needs an even positive channel count, got shape {:?}",
                h.shape()
            )));
        }
        Ok(LatentTensor { half: c / 2, h })
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.h
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.h
    }

    pub fn batch(&self) -> usize {
        self.h.shape()[0]
    }

    pub fn half_channels(&self) -> usize {
        self.half
    }

    fn half_slice(&self, which: Label) -> Tensor<T> {
        let (b, c, m, m2) = self.h.dims4().expect("rank-4 latent");
        let plane = m * m2;
        let start = match which {
            Label::Real => 0,
            Label::Fake => self.half,
        };
        let mut out = Vec::with_capacity(b * self.half * plane);
        for bi in 0..b {
            let off = (bi * c + start) * plane;
            out.extend_from_slice(&self.h.data()[off..off + self.half * plane]);
        }
        Tensor::from_vec(&[b, self.half, m, m2], out).expect("half shape")
    }

    /// Real half `H1`.
    pub fn h1(&self) -> Tensor<T> {
        self.half_slice(Label::Real)
    }

    /// Fake half `H2`.
    pub fn h2(&self) -> Tensor<T> {
        self.half_slice(Label::Fake)
    }

    pub fn scaled(&self, k: T) -> Self {
        LatentTensor {
            h: self.h.map(|v| v * k),
            half: self.half,
        }
    }
}

/// Keep the half matching each sample's label and zero the other.
pub fn facilitate<T: Scalar>(h: &LatentTensor<T>, labels: &[Label]) -> Result<LatentTensor<T>> {
    let (b, c, m, m2) = h.h.dims4()?;
    if labels.len() != b {
        return Err(TarError::contract(format!(
            "facilitate: {} labels for a batch of {b}",
            labels.len()
        )));
    }
    let mut out = h.h.clone();
    let per = c * m * m2;
    let half = h.half * m * m2;
    for (bi, label) in labels.iter().enumerate() {
        let sample = &mut out.data_mut()[bi * per..(bi + 1) * per];
        let zeroed = match label {
            Label::Real => &mut sample[half..],
            Label::Fake => &mut sample[..half],
        };
        zeroed.iter_mut().for_each(|v| *v = T::zero());
    }
    Ok(LatentTensor { h: out, half: h.half })
}

/// Mean absolute activation `(A1, A2)` of each half, per sample.
pub fn per_class_activation<T: Scalar>(h: &LatentTensor<T>) -> Vec<(f64, f64)> {
    let (b, c, m, m2) = h.h.dims4().expect("rank-4 latent");
    let per = c * m * m2;
    let half = h.half * m * m2;
    (0..b)
        .map(|bi| {
            let s = &h.h.data()[bi * per..(bi + 1) * per];
            let mean_abs = |xs: &[T]| xs.iter().map(|v| v.as_f64().abs()).sum::<f64>() / half as f64;
            (mean_abs(&s[..half]), mean_abs(&s[half..]))
        })
        .collect()
}

/// Fake iff the fake-half activation strictly exceeds the real-half one.
pub fn classify_pair(a1: f64, a2: f64) -> Label {
    if a2 > a1 {
        Label::Fake
    } else {
        Label::Real
    }
}

/// Classify raw (unmasked) encoder outputs.
pub fn classify<T: Scalar>(h: &LatentTensor<T>) -> Vec<Label> {
    per_class_activation(h)
        .into_iter()
        .map(|(a1, a2)| classify_pair(a1, a2))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn latent(seed: u64) -> LatentTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LatentTensor::new(Tensor::uniform(&[3, 8, 2, 2], -1.0, 1.0, &mut rng)).unwrap()
    }

    #[test]
    fn facilitate_real_zeroes_fake_half() {
        let h = latent(1);
        let f = facilitate(&h, &[Label::Real; 3]).unwrap();
        assert!(f.h2().data().iter().all(|&v| v == 0.0));
        assert_eq!(f.h1(), h.h1());
    }

    #[test]
    fn facilitate_fake_zeroes_real_half() {
        let h = latent(2);
        let f = facilitate(&h, &[Label::Fake; 3]).unwrap();
        assert!(f.h1().data().iter().all(|&v| v == 0.0));
        assert_eq!(f.h2(), h.h2());
    }

    #[test]
    fn facilitate_is_idempotent_and_complete() {
        let h = latent(3);
        let labels = [Label::Real, Label::Fake, Label::Real];
        let once = facilitate(&h, &labels).unwrap();
        assert_eq!(facilitate(&once, &labels).unwrap(), once);
        let flipped: Vec<_> = labels
            .iter()
            .map(|l| if *l == Label::Real { Label::Fake } else { Label::Real })
            .collect();
        let other = facilitate(&h, &flipped).unwrap();
        let sum = once.tensor().zip_map(other.tensor(), |a, b| a + b).unwrap();
        assert_eq!(&sum, h.tensor());
    }

    #[test]
    fn activation_of_simple_halves() {
        let z = LatentTensor::new(Tensor::<f64>::zeros(&[1, 4, 2, 2])).unwrap();
        assert_eq!(per_class_activation(&z), vec![(0.0, 0.0)]);
        let mut t = Tensor::<f64>::zeros(&[1, 4, 2, 2]);
        t.data_mut()[..8].iter_mut().for_each(|v| *v = 1.0);
        let h = LatentTensor::new(t).unwrap();
        assert_eq!(per_class_activation(&h), vec![(1.0, 0.0)]);
    }

    #[test]
    fn classification_rule() {
        assert_eq!(classify_pair(0.7, 0.3), Label::Real);
        assert_eq!(classify_pair(0.3, 0.7), Label::Fake);
        assert_eq!(classify_pair(0.5, 0.5), Label::Real);
    }

    #[test]
    fn label_codes() {
        assert_eq!(Label::Real.code(), 1);
        assert_eq!(Label::Fake.code(), 2);
        assert!(Label::from_code(3).is_err());
    }
}

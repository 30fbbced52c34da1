//! Eager (non-recording) versions of the differentiable primitives, with
//! the argument validation shared by the autograd graph.

use super::kernels::{self, ConvGeom};
use super::{Scalar, Tensor};
use crate::error::{Result, TarError};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Check conv arguments and compute the output geometry.
pub fn conv_geom<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<ConvGeom> {
    let (_, cin, h, wd) = x.dims4()?;
    let [cout, wcin, kh, kw] = w.shape()[..] else {
        return Err(TarError::contract(format!(
            "conv2d weight must be [Cout,Cin,Kh,Kw], got {:?}",
            w.shape()
        )));
    };
    if cin != wcin {
        return Err(TarError::contract(format!(
            "conv2d: input {:?} has {cin} channels but weight {:?} expects {wcin}",
            x.shape(),
            w.shape()
        )));
    }
    if stride == 0 {
        return Err(TarError::contract("conv2d: stride must be positive"));
    }
    if h + 2 * pad < kh || wd + 2 * pad < kw {
        return Err(TarError::contract(format!(
            "conv2d: kernel {kh}x{kw} larger than padded input {:?} (pad {pad})",
            x.shape()
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(TarError::contract(format!(
                "conv2d: bias shape {:?} does not match {cout} output channels",
                b.shape()
            )));
        }
    }
    Ok(ConvGeom::new(cin, h, wd, kh, kw, stride, pad))
}

pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = conv_geom(x, w, bias, stride, pad)?;
    Ok(kernels::conv2d_forward(x, w, bias, &g))
}

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnState<T = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BnState<T> {
    pub fn new(channels: usize) -> Self {
        BnState {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    /// Exponential moving average toward the given batch statistics.
    /// `batch_var` is the biased variance over `count` elements; the
    /// running estimate stores the unbiased one.
    pub fn update(&mut self, batch_mean: &[T], batch_var: &[T], count: usize, momentum: f64) {
        let m = T::of(momentum);
        let keep = T::one() - m;
        let unbias = T::of(count as f64 / (count as f64 - 1.0).max(1.0));
        for c in 0..self.mean.len() {
            self.mean[c] = keep * self.mean[c] + m * batch_mean[c];
            self.var[c] = keep * self.var[c] + m * batch_var[c] * unbias;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

pub(crate) fn check_bn<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, train: bool) -> Result<usize> {
    let (b, c, h, w) = x.dims4()?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TarError::contract(format!(
            "batchnorm: gamma {:?} / beta {:?} must be [{c}] for input {:?}",
            gamma.shape(),
            beta.shape(),
            x.shape()
        )));
    }
    let per_channel = b * h * w;
    if train && per_channel < 2 {
        return Err(TarError::contract(format!(
            "batchnorm: degenerate variance, only {per_channel} element per channel in training mode"
        )));
    }
    Ok(per_channel)
}

pub(crate) fn inv_std<T: Scalar>(var: &[T], eps: f64) -> Vec<T> {
    var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect()
}

/// Batch normalization over `(batch, h, w)` per channel. Training mode
/// normalizes with batch statistics and updates `state`; inference mode
/// uses `state` as is.
pub fn batchnorm2d<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &mut BnState<T>,
    mode: BnMode,
    eps: f64,
    momentum: f64,
) -> Result<Tensor<T>> {
    let count = check_bn(x, gamma, beta, mode == BnMode::Train)?;
    if !(0.0..1.0).contains(&momentum) || momentum == 0.0 {
        return Err(TarError::contract(format!("batchnorm: momentum {momentum} not in (0,1)")));
    }
    let (mean, var) = match mode {
        BnMode::Train => {
            let (mean, var) = kernels::channel_stats(x);
            state.update(&mean, &var, count, momentum);
            (mean, var)
        }
        BnMode::Infer => (state.mean.clone(), state.var.clone()),
    };
    let inv = inv_std(&var, eps);
    Ok(kernels::bn_apply(x, &mean, &inv, gamma.data(), beta.data()).0)
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: f64) -> Result<Tensor<T>> {
    if slope < 0.0 {
        return Err(TarError::contract(format!("leaky_relu: negative slope {slope}")));
    }
    let s = T::of(slope);
    Ok(x.map(|v| if v >= T::zero() { v } else { s * v }))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v >= T::zero() { v } else { T::zero() })
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, |x, y| x + y)
}

pub fn upsample_nearest2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.dims4()?;
    Ok(kernels::upsample2x(x))
}

/// Mean over each 2×2 block. Requires even spatial extents.
pub fn avg_pool2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TarError::contract(format!("avg_pool2x: odd spatial size {:?}", x.shape())));
    }
    Ok(kernels::sum_pool2x(x).map(|v| v * T::of(0.25)))
}

pub fn l1_sum<T: Scalar>(x: &Tensor<T>) -> T {
    x.data().iter().map(|v| v.abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor::<f64>::uniform(&[2, 1, 4, 5], -1.0, 1.0, &mut rng(0));
        let w = Tensor::ones(&[1, 1, 1, 1]);
        let b = Tensor::zeros(&[1]);
        assert_eq!(conv2d(&x, &w, Some(&b), 1, 0).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_constant_field() {
        let c = 0.75;
        let x = Tensor::<f64>::full(&[1, 1, 5, 5], c);
        let w = Tensor::ones(&[1, 1, 3, 3]);
        let y = conv2d(&x, &w, Some(&Tensor::zeros(&[1])), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 9.0 * c));
    }

    #[test]
    fn conv_channel_mismatch_names_both_shapes() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[3, 4, 3, 3]);
        let err = conv2d(&x, &w, None, 1, 1).unwrap_err().to_string();
        assert!(err.contains("[1, 2, 4, 4]") && err.contains("[3, 4, 3, 3]"), "{err}");
    }

    #[test]
    fn conv_kernel_larger_than_input_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let w = Tensor::<f32>::zeros(&[1, 1, 5, 5]);
        assert!(conv2d(&x, &w, None, 1, 0).is_err());
        assert!(conv2d(&x, &w, None, 1, 2).is_ok());
    }

    #[test]
    fn batchnorm_standardizes_in_train_mode() {
        let x = Tensor::<f64>::uniform(&[4, 3, 6, 6], -3.0, 5.0, &mut rng(3));
        let mut st = BnState::new(3);
        let y = batchnorm2d(&x, &Tensor::ones(&[3]), &Tensor::zeros(&[3]), &mut st, BnMode::Train, BN_EPS, BN_MOMENTUM).unwrap();
        let (mean, var) = kernels::channel_stats(&y);
        for c in 0..3 {
            assert!(mean[c].abs() < 1e-12);
            assert!((var[c] - 1.0).abs() < 1e-3, "var {}", var[c]);
        }
        // running stats moved 10% toward the batch statistics
        assert!(st.mean.iter().all(|m| m.abs() > 0.0));
    }

    #[test]
    fn batchnorm_affine_on_standardized_input() {
        let x = Tensor::<f64>::uniform(&[4, 2, 3, 3], -1.0, 1.0, &mut rng(4));
        let mut st = BnState::new(2);
        let z = batchnorm2d(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), &mut st, BnMode::Train, BN_EPS, BN_MOMENTUM).unwrap();
        let mut st2 = BnState::new(2);
        let y = batchnorm2d(&z, &Tensor::full(&[2], 2.0), &Tensor::full(&[2], 3.0), &mut st2, BnMode::Train, BN_EPS, BN_MOMENTUM).unwrap();
        for (a, b) in y.data().iter().zip(z.data()) {
            assert!((a - (2.0 * b + 3.0)).abs() < 1e-4);
        }
    }

    #[test]
    fn batchnorm_degenerate_variance_is_an_error() {
        let x = Tensor::<f32>::zeros(&[1, 2, 1, 1]);
        let mut st = BnState::new(2);
        let r = batchnorm2d(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), &mut st, BnMode::Train, BN_EPS, BN_MOMENTUM);
        assert!(r.is_err());
        // inference mode has no such restriction
        assert!(batchnorm2d(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), &mut st, BnMode::Infer, BN_EPS, BN_MOMENTUM).is_ok());
    }

    #[test]
    fn leaky_relu_values() {
        let x = Tensor::<f64>::from_vec(&[3], vec![-1.0, 2.0, 0.0]).unwrap();
        let y = leaky_relu(&x, 1e-7).unwrap();
        assert_eq!(y.data(), &[-1e-7, 2.0, 0.0]);
        assert_eq!(leaky_relu(&x, 0.0).unwrap(), relu(&x));
        assert!(leaky_relu(&x, -0.1).is_err());
    }

    #[test]
    fn upsample_replicates_blocks() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample_nearest2x(&x).unwrap();
        assert_eq!(
            y.data(),
            &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
    }

    #[test]
    fn add_and_tanh_basics() {
        let x = Tensor::<f32>::from_vec(&[2], vec![0.5, -1.0]).unwrap();
        assert_eq!(add(&x, &Tensor::zeros(&[2])).unwrap(), x);
        assert!(add(&x, &Tensor::zeros(&[3])).is_err());
        assert_eq!(tanh(&Tensor::<f32>::zeros(&[1])).data(), &[0.0]);
    }

    #[test]
    fn l1_sum_basics() {
        assert_eq!(l1_sum(&Tensor::<f64>::zeros(&[4])), 0.0);
        let x = Tensor::<f64>::from_vec(&[3], vec![1.0, -2.0, 3.0]).unwrap();
        assert_eq!(l1_sum(&x), 6.0);
    }
}

//! Forward and backward kernels on raw tensors. Shapes are validated by the
//! callers in [`super::ops`] and [`crate::autograd`].

use super::{gemm, Scalar, Tensor};
use crate::parallel;

/// Geometry of one 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Self {
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        ConvGeom { cin, h, w, kh, kw, stride, pad, ho, wo }
    }

    fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    /// A 1×1, stride-1, unpadded conv reads the input directly as its column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let n = g.col_cols();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    let out = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    if ih < 0 || ih >= g.h as isize {
                        out.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, o) in out.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        *o = if iw < 0 || iw >= g.w as isize {
                            T::zero()
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let n = g.col_cols();
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * n..(row + 1) * n];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for ow in 0..g.wo {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst[iw as usize] = dst[iw as usize] + src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Conv forward, parallel over the batch. `w` is `[cout, cin, kh, kw]`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Tensor<T> {
    let batch = x.shape()[0];
    let cout = w.shape()[0];
    let (rows, n) = (g.col_rows(), g.col_cols());
    let in_per = g.cin * g.h * g.w;
    let out_per = cout * n;
    let mut out = vec![T::zero(); batch * out_per];
    let xd = x.data();
    let wd = w.data();
    parallel::for_each_chunk_mut(&mut out, out_per, |b, dst| {
        let xs = &xd[b * in_per..(b + 1) * in_per];
        if g.is_pointwise() {
            gemm(cout, rows, n, wd, false, xs, false, T::zero(), dst);
        } else {
            let mut cols = vec![T::zero(); rows * n];
            im2col(xs, g, &mut cols);
            gemm(cout, rows, n, wd, false, &cols, false, T::zero(), dst);
        }
        if let Some(bias) = bias {
            for (co, plane) in dst.chunks_mut(n).enumerate() {
                let bv = bias.data()[co];
                plane.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    });
    Tensor::from_vec(&[batch, cout, g.ho, g.wo], out).expect("conv output shape")
}

/// Gradients of a convolution: `(d input, d weight, d bias)`. The input
/// gradient is skipped when `need_input` is false. Per-sample weight
/// gradients are summed in batch order.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    g: &ConvGeom,
    need_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let batch = x.shape()[0];
    let cout = w.shape()[0];
    let (rows, n) = (g.col_rows(), g.col_cols());
    let in_per = g.cin * g.h * g.w;
    let out_per = cout * n;
    let xd = x.data();
    let wd = w.data();
    let gyd = gy.data();

    let parts = parallel::map_range(batch, |b| {
        let xs = &xd[b * in_per..(b + 1) * in_per];
        let gys = &gyd[b * out_per..(b + 1) * out_per];
        let mut gw = vec![T::zero(); cout * rows];
        let gx = if g.is_pointwise() {
            gemm(cout, n, rows, gys, false, xs, true, T::zero(), &mut gw);
            need_input.then(|| {
                let mut gx = vec![T::zero(); in_per];
                gemm(rows, cout, n, wd, true, gys, false, T::zero(), &mut gx);
                gx
            })
        } else {
            let mut cols = vec![T::zero(); rows * n];
            im2col(xs, g, &mut cols);
            gemm(cout, n, rows, gys, false, &cols, true, T::zero(), &mut gw);
            need_input.then(|| {
                gemm(rows, cout, n, wd, true, gys, false, T::zero(), &mut cols);
                let mut gx = vec![T::zero(); in_per];
                col2im_add(&cols, g, &mut gx);
                gx
            })
        };
        let gb: Vec<T> = gys.chunks(n).map(|p| p.iter().copied().sum()).collect();
        (gx, gw, gb)
    });

    let mut gw_total = vec![T::zero(); cout * rows];
    let mut gb_total = vec![T::zero(); cout];
    let mut gx_total = need_input.then(|| Vec::with_capacity(batch * in_per));
    for (gx, gw, gb) in parts {
        gw_total.iter_mut().zip(&gw).for_each(|(a, &b)| *a = *a + b);
        gb_total.iter_mut().zip(&gb).for_each(|(a, &b)| *a = *a + b);
        if let (Some(total), Some(gx)) = (gx_total.as_mut(), gx) {
            total.extend_from_slice(&gx);
        }
    }
    (
        gx_total.map(|d| Tensor::from_vec(x.shape(), d).expect("conv dx shape")),
        Tensor::from_vec(w.shape(), gw_total).expect("conv dw shape"),
        Tensor::from_vec(&[cout], gb_total).expect("conv db shape"),
    )
}

/// Batch statistics per channel over `(batch, h, w)`: `(mean, biased var)`.
pub fn channel_stats<T: Scalar>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let (b, c, h, w) = x.dims4().expect("rank-4");
    let hw = h * w;
    let count = T::of((b * hw) as f64);
    let d = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for bi in 0..b {
            let off = (bi * c + ch) * hw;
            s = s + d[off..off + hw].iter().copied().sum::<T>();
        }
        let m = s / count;
        let mut ss = T::zero();
        for bi in 0..b {
            let off = (bi * c + ch) * hw;
            ss = ss + d[off..off + hw].iter().map(|&v| (v - m) * (v - m)).sum::<T>();
        }
        mean[ch] = m;
        var[ch] = ss / count;
    }
    (mean, var)
}

/// `y = gamma·(x − mean)·inv_std + beta` per channel; returns `(y, xhat)`.
pub fn bn_apply<T: Scalar>(
    x: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
) -> (Tensor<T>, Tensor<T>) {
    let (b, c, h, w) = x.dims4().expect("rank-4");
    let hw = h * w;
    let mut y = x.clone();
    let mut xhat = x.clone();
    let yd = y.data_mut();
    let xh = xhat.data_mut();
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * hw;
            for i in off..off + hw {
                let n = (xh[i] - mean[ch]) * inv_std[ch];
                xh[i] = n;
                yd[i] = gamma[ch] * n + beta[ch];
            }
        }
    }
    (y, xhat)
}

/// Backward of batch normalization.
///
/// With `batch_stats` the mean and variance are functions of `x` (training);
/// otherwise they are constants (inference). Returns `(dx, dgamma, dbeta)`.
pub fn bn_backward<T: Scalar>(
    gy: &Tensor<T>,
    xhat: &Tensor<T>,
    gamma: &[T],
    inv_std: &[T],
    batch_stats: bool,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let (b, c, h, w) = gy.dims4().expect("rank-4");
    let hw = h * w;
    let count = T::of((b * hw) as f64);
    let g = gy.data();
    let xh = xhat.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (mut sg, mut sgx) = (T::zero(), T::zero());
        for bi in 0..b {
            let off = (bi * c + ch) * hw;
            for i in off..off + hw {
                sg = sg + g[i];
                sgx = sgx + g[i] * xh[i];
            }
        }
        dbeta[ch] = sg;
        dgamma[ch] = sgx;
    }
    let mut dx = gy.clone();
    let d = dx.data_mut();
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * hw;
            let k = gamma[ch] * inv_std[ch];
            for i in off..off + hw {
                d[i] = if batch_stats {
                    k / count * (count * g[i] - dbeta[ch] - xh[i] * dgamma[ch])
                } else {
                    k * g[i]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn upsample2x<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = x.dims4().expect("rank-4");
    let (h2, w2) = (2 * h, 2 * w);
    let src = x.data();
    let mut out = vec![T::zero(); b * c * h2 * w2];
    for p in 0..b * c {
        let s = &src[p * h * w..(p + 1) * h * w];
        let d = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
        for i in 0..h2 {
            for j in 0..w2 {
                d[i * w2 + j] = s[(i / 2) * w + j / 2];
            }
        }
    }
    Tensor::from_vec(&[b, c, h2, w2], out).expect("upsample shape")
}

/// Sum over each 2×2 block; the adjoint of [`upsample2x`].
pub fn sum_pool2x<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = x.dims4().expect("rank-4");
    let (h2, w2) = (h / 2, w / 2);
    let src = x.data();
    let mut out = vec![T::zero(); b * c * h2 * w2];
    for p in 0..b * c {
        let s = &src[p * h * w..(p + 1) * h * w];
        let d = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
        for i in 0..h2 {
            for j in 0..w2 {
                d[i * w2 + j] = s[2 * i * w + 2 * j]
                    + s[2 * i * w + 2 * j + 1]
                    + s[(2 * i + 1) * w + 2 * j]
                    + s[(2 * i + 1) * w + 2 * j + 1];
            }
        }
    }
    Tensor::from_vec(&[b, c, h2, w2], out).expect("pool shape")
}

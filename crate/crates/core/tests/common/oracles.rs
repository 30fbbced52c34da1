//! Brute-force reference implementations, written without the library's
//! kernels.

use tar_core::autograd::Graph;
use tar_core::data::ImageSample;
use tar_core::eval::{cam_map, evaluate};
use tar_core::model::{per_class_activation, LatentTensor, Mode, ModelParams, Session};
use tar_core::tensor::ops::{batchnorm2d, conv2d, l1_sum, BnMode, BnState, BN_EPS, BN_MOMENTUM};
use tar_core::train::reconstruction_loss;
use tar_core::Tensor;

use super::{rand_t, rng};

fn at(t: &Tensor<f64>, i: [usize; 4]) -> f64 {
    let s = t.shape();
    t.data()[((i[0] * s[1] + i[1]) * s[2] + i[2]) * s[3] + i[3]]
}

pub fn conv_direct(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Vec::with_capacity(n * cout * oh * ow);
    for bi in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += at(x, [bi, ci, iy as usize, ix as usize]) * at(w, [co, ci, ky, kx]);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::from_vec(&[n, cout, oh, ow], out).unwrap()
}

/// Worst elementwise gap between `conv2d` and the direct sum, over a
/// 1×2×5×5 input and 3×2×3×3 kernel at several strides and paddings.
pub fn conv_oracle_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = rand_t(&[1, 2, 5, 5], &mut r);
    let w = rand_t(&[3, 2, 3, 3], &mut r);
    let b = rand_t(&[3], &mut r);
    let mut worst = 0.0f64;
    for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 0)] {
        let fast = conv2d(&x, &w, Some(&b), stride, pad).unwrap();
        let slow = conv_direct(&x, &w, &b, stride, pad);
        worst = worst.max(fast.max_abs_diff(&slow).unwrap());
    }
    worst
}

/// Training-mode batch norm on 4×3×6×6 against two-pass statistics,
/// including the running-stat update.
pub fn bn_oracle_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = rand_t(&[4, 3, 6, 6], &mut r).map(|v| 2.0 * v + 0.5);
    let gamma = rand_t(&[3], &mut r);
    let beta = rand_t(&[3], &mut r);
    let mut state = BnState::new(3);
    let y = batchnorm2d(&x, &gamma, &beta, &mut state, BnMode::Train, BN_EPS, BN_MOMENTUM).unwrap();

    let n = 4 * 36;
    let mut worst = 0.0f64;
    for c in 0..3 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|b| (0..6).flat_map(move |i| (0..6).map(move |j| [b, c, i, j])))
            .map(|i| at(&x, i))
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        for b in 0..4 {
            for i in 0..6 {
                for j in 0..6 {
                    let want = gamma.data()[c] * (at(&x, [b, c, i, j]) - mean) / (var + BN_EPS).sqrt() + beta.data()[c];
                    worst = worst.max((at(&y, [b, c, i, j]) - want).abs());
                }
            }
        }
        let run_mean = BN_MOMENTUM * mean;
        let run_var = (1.0 - BN_MOMENTUM) + BN_MOMENTUM * var * n as f64 / (n - 1) as f64;
        worst = worst.max((state.mean[c] - run_mean).abs());
        worst = worst.max((state.var[c] - run_var).abs());
    }
    worst
}

/// `per_class_activation` against a plain sum of absolute values per half.
pub fn norm_oracle_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (b, half, m) = (3, 4, 3);
    let h = rand_t(&[b, 2 * half, m, m], &mut r);
    let got = per_class_activation(&LatentTensor::new(h.clone()).unwrap());
    let k = (half * m * m) as f64;
    let mut worst = 0.0f64;
    for (bi, &(a1, a2)) in got.iter().enumerate() {
        let mut s = [0.0f64; 2];
        for ch in 0..2 * half {
            for i in 0..m {
                for j in 0..m {
                    s[ch / half] += at(&h, [bi, ch, i, j]).abs();
                }
            }
        }
        worst = worst.max((a1 - s[0] / k).abs()).max((a2 - s[1] / k).abs());
    }
    worst
}

/// `l1_sum` equals a left-to-right accumulation of absolute values.
pub fn l1_oracle_exact(seed: u64) -> bool {
    let t = rand_t(&[2, 3, 4, 5], &mut rng(seed));
    let mut acc = 0.0f64;
    for v in t.data() {
        acc += v.abs();
    }
    l1_sum(&t) == acc
}

pub fn recon_oracle_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = rand_t(&[2, 3, 4, 4], &mut r);
    let y = rand_t(&[2, 3, 4, 4], &mut r);
    let mut acc = 0.0;
    for i in 0..x.numel() {
        acc += (x.data()[i] - y.data()[i]).abs();
    }
    (reconstruction_loss(&x, &y).unwrap() - acc / x.numel() as f64).abs()
}

/// Gap between `evaluate`'s accuracy and a recount from its own records,
/// plus a check that records follow the sample order and labels and that
/// each prediction follows the strict `A2 > A1` rule.
pub fn eval_recount_error(model: &ModelParams<f32>, samples: &[ImageSample]) -> f64 {
    let ev = evaluate(model, samples).unwrap();
    assert_eq!(ev.records.len(), samples.len());
    let mut correct = 0usize;
    for (rec, s) in ev.records.iter().zip(samples) {
        assert_eq!((rec.id, rec.label), (s.id, s.label));
        let fake = rec.a2 > rec.a1;
        assert_eq!(rec.prediction == tar_core::model::Label::Fake, fake);
        if rec.prediction == rec.label {
            correct += 1;
        }
    }
    assert_eq!(correct, ev.correct);
    (ev.accuracy - correct as f64 / samples.len() as f64).abs()
}

/// `cam_map` against mean-abs over channels, min-max normalization and
/// nearest upsampling done by hand.
pub fn cam_oracle_error(model: &ModelParams<f32>, img: &Tensor<f32>, layer: &str) -> f64 {
    let heat = cam_map(model, img, layer).unwrap();
    let s = model.config.input_size;
    let mut g = Graph::new();
    let mut sess = Session::new(model, Mode::Infer);
    let x = g.input(img.clone().reshape(&[1, 3, s, s]).unwrap());
    let h = sess.encode(&mut g, x).unwrap();
    sess.decode(&mut g, h).unwrap();
    let act = g.value(sess.tap(layer).unwrap()).cast::<f64>();
    let (c, lh, lw) = (act.shape()[1], act.shape()[2], act.shape()[3]);
    let mut m = vec![vec![0.0f64; lw]; lh];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..c).map(|ch| at(&act, [0, ch, i, j]).abs()).sum::<f64>() / c as f64;
        }
    }
    let lo = m.iter().flatten().copied().fold(f64::MAX, f64::min);
    let hi = m.iter().flatten().copied().fold(f64::MIN, f64::max);
    let mut worst = 0.0f64;
    for y in 0..s {
        for x in 0..s {
            let want = (m[y * lh / s][x * lw / s] - lo) / (hi - lo + 1e-12);
            worst = worst.max((f64::from(heat.values.data()[y * s + x]) - want).abs());
        }
    }
    worst
}

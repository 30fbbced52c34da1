//! Procedural stand-ins for face images and three manipulation methods.
//!
//! A "real" image is a smooth two-colour background with an elliptical
//! face: shaded skin tone, a fine oriented texture, two eyes and a mouth,
//! plus mild pixel noise. Fakes are derived from a host real image.
//! Swaps paste the central region of a different real image after
//! degrading it the way a low-resolution face synthesizer would: the
//! blended swap box-blurs the donor and feathers the seam, the sharp swap
//! down/up-samples the donor in 2×2 blocks and keeps a hard seam. Warps
//! swirl the central region in place. Every sample is a pure function of
//! `(seed, id)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sample::{Domain, FakeKind, ImageSample};
use crate::error::{Result, TarError};
use crate::parallel;
use crate::tensor::Tensor;

/// Semi-axes of the swapped region, as fractions of the image size.
const SWAP_RX: f64 = 0.21;
const SWAP_RY: f64 = 0.25;
/// Half-width of the feathering band of a blended swap, in units of the
/// normalized ellipse radius.
const FEATHER: f64 = 0.45;
/// Radius of the swirl, as a fraction of the image size.
const WARP_R: f64 = 0.25;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rng_for(seed: u64, stream: u64, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed ^ stream.rotate_left(32)) ^ id))
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// RGB canvas in `[0, 1]`, channel-major.
struct Canvas {
    s: usize,
    px: Vec<f64>,
}

impl Canvas {
    fn new(s: usize) -> Self {
        Canvas { s, px: vec![0.0; 3 * s * s] }
    }

    fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.px[(c * self.s + y) * self.s + x]
    }

    fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let s = self.s;
        self.px[(c * s + y) * s + x] = v;
    }

    fn blend(&mut self, y: usize, x: usize, rgb: [f64; 3], alpha: f64) {
        for (c, v) in rgb.iter().enumerate() {
            let old = self.get(c, y, x);
            self.set(c, y, x, old + alpha * (v - old));
        }
    }

    fn into_tensor(self) -> Tensor<f32> {
        let s = self.s;
        let data = self
            .px
            .into_iter()
            .map(|p| (2.0 * p.clamp(0.0, 1.0) - 1.0) as f32)
            .collect();
        Tensor::from_vec(&[3, s, s], data).expect("canvas shape")
    }

    fn from_tensor(t: &Tensor<f32>) -> Self {
        let s = t.shape()[1];
        Canvas {
            s,
            px: t.data().iter().map(|&v| (f64::from(v) + 1.0) / 2.0).collect(),
        }
    }
}

/// Anti-aliased coverage of an axis-aligned ellipse at a pixel centre.
fn ellipse_cover(x: f64, y: f64, cx: f64, cy: f64, a: f64, b: f64) -> f64 {
    let d = (((x - cx) / a).powi(2) + ((y - cy) / b).powi(2)).sqrt();
    ((1.0 - d) * a.min(b) + 0.5).clamp(0.0, 1.0)
}

fn render_real(seed: u64, id: u64, s: usize) -> Tensor<f32> {
    let mut rng = rng_for(seed, 0, id);
    let sf = s as f64;
    let mut cv = Canvas::new(s);

    let c0: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.1..0.9));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.1..0.9));
    let bg_dir = rng.gen_range(0.0..std::f64::consts::TAU);
    let cx = sf / 2.0 + rng.gen_range(-sf / 24.0..sf / 24.0);
    let cy = sf / 2.0 + rng.gen_range(-sf / 24.0..sf / 24.0);
    let a = sf * rng.gen_range(0.30..0.36);
    let b = sf * rng.gen_range(0.37..0.44);
    let tone = rng.gen_range(0.5..0.9);
    let skin = [tone, tone * rng.gen_range(0.68..0.85), tone * rng.gen_range(0.52..0.72)];
    let light_dir = rng.gen_range(0.0..std::f64::consts::TAU);
    let light = rng.gen_range(0.0..0.15);
    let tex_angle = rng.gen_range(0.0..std::f64::consts::PI);
    let tex_freq = rng.gen_range(0.16..0.26);
    let tex_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let tex_amp = rng.gen_range(0.035..0.06);
    let eye_r = sf * rng.gen_range(0.035..0.05);
    let eye_dx = a * rng.gen_range(0.34..0.42);
    let eye_dy = b * rng.gen_range(0.18..0.26);
    let eye_tone = rng.gen_range(0.08..0.2);
    let mouth_dy = b * rng.gen_range(0.45..0.55);
    let mouth_a = a * rng.gen_range(0.28..0.4);
    let mouth_b = b * rng.gen_range(0.05..0.08);
    let noise_sigma = 0.012;

    for y in 0..s {
        for x in 0..s {
            let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = ((xf - sf / 2.0) * bg_dir.cos() + (yf - sf / 2.0) * bg_dir.sin()) / sf + 0.5;
            for c in 0..3 {
                cv.set(c, y, x, c0[c] + (c1[c] - c0[c]) * t.clamp(0.0, 1.0));
            }
            let cover = ellipse_cover(xf, yf, cx, cy, a, b);
            if cover > 0.0 {
                let shade = 1.0
                    + light * ((xf - cx) / a * light_dir.cos() + (yf - cy) / b * light_dir.sin());
                let tex = tex_amp
                    * (std::f64::consts::TAU * tex_freq * (xf * tex_angle.cos() + yf * tex_angle.sin())
                        + tex_phase)
                        .sin();
                let rgb = skin.map(|v| v * shade + tex);
                cv.blend(y, x, rgb, cover);
            }
            for ex in [cx - eye_dx, cx + eye_dx] {
                let e = ellipse_cover(xf, yf, ex, cy - eye_dy, eye_r * 1.3, eye_r);
                if e > 0.0 {
                    cv.blend(y, x, [eye_tone, eye_tone * 0.9, eye_tone * 0.8], e);
                }
            }
            let m = ellipse_cover(xf, yf, cx, cy + mouth_dy, mouth_a, mouth_b);
            if m > 0.0 {
                cv.blend(y, x, [tone * 0.55, tone * 0.22, tone * 0.22], m);
            }
        }
    }
    for p in cv.px.iter_mut() {
        *p += noise_sigma * gaussian(&mut rng);
    }
    cv.into_tensor()
}

/// Real samples with ids `ids`, deterministic per `(seed, id)`.
pub fn gen_real_ids(seed: u64, ids: &[u64], size: usize) -> Vec<ImageSample> {
    parallel::map_range(ids.len(), |i| {
        ImageSample::new(render_real(seed, ids[i], size), Domain::Real, ids[i]).expect("rendered image is valid")
    })
}

/// `n` real samples with ids `0..n`.
pub fn gen_real(seed: u64, n: usize, size: usize) -> Vec<ImageSample> {
    let ids: Vec<u64> = (0..n as u64).collect();
    gen_real_ids(seed, &ids, size)
}

/// Normalized distance from the swap-region centre.
fn swap_radius(x: usize, y: usize, s: usize) -> f64 {
    let sf = s as f64;
    let dx = (x as f64 + 0.5 - sf / 2.0) / (SWAP_RX * sf);
    let dy = (y as f64 + 0.5 - sf / 2.0) / (SWAP_RY * sf);
    (dx * dx + dy * dy).sqrt()
}

fn swap_alpha(kind: FakeKind, d: f64) -> f64 {
    match kind {
        FakeKind::SharpSwap => f64::from(u8::from(d <= 1.0)),
        _ => {
            let t = ((1.0 + FEATHER - d) / (2.0 * FEATHER)).clamp(0.0, 1.0);
            t * t * (3.0 - 2.0 * t)
        }
    }
}

/// 3×3 box blur with edge clamping.
fn box_blur(t: &Tensor<f32>) -> Tensor<f32> {
    let s = t.shape()[1];
    let d = t.data();
    let mut out = vec![0.0f32; d.len()];
    for c in 0..3 {
        for y in 0..s {
            for x in 0..s {
                let mut acc = 0.0;
                for dy in [-1i64, 0, 1] {
                    for dx in [-1i64, 0, 1] {
                        let yy = (y as i64 + dy).clamp(0, s as i64 - 1) as usize;
                        let xx = (x as i64 + dx).clamp(0, s as i64 - 1) as usize;
                        acc += d[(c * s + yy) * s + xx];
                    }
                }
                out[(c * s + y) * s + x] = acc / 9.0;
            }
        }
    }
    Tensor::from_vec(t.shape(), out).expect("blur shape")
}

/// 2×2 block average, repeated back to full size.
fn blocky(t: &Tensor<f32>) -> Tensor<f32> {
    let s = t.shape()[1];
    let d = t.data();
    let mut out = vec![0.0f32; d.len()];
    for c in 0..3 {
        for y in 0..s {
            for x in 0..s {
                let (y0, x0) = (y & !1, x & !1);
                let (y1, x1) = ((y0 + 1).min(s - 1), (x0 + 1).min(s - 1));
                let at = |yy: usize, xx: usize| d[(c * s + yy) * s + xx];
                out[(c * s + y) * s + x] = (at(y0, x0) + at(y0, x1) + at(y1, x0) + at(y1, x1)) / 4.0;
            }
        }
    }
    Tensor::from_vec(t.shape(), out).expect("blocky shape")
}

fn swap(host: &Tensor<f32>, donor: &Tensor<f32>, kind: FakeKind) -> Tensor<f32> {
    let s = host.shape()[1];
    let mut out = host.clone();
    let donor = match kind {
        FakeKind::SharpSwap => blocky(donor),
        _ => box_blur(donor),
    };
    let (h, d) = (host.data(), donor.data());
    let o = out.data_mut();
    for y in 0..s {
        for x in 0..s {
            let alpha = swap_alpha(kind, swap_radius(x, y, s)) as f32;
            if alpha == 0.0 {
                continue;
            }
            for c in 0..3 {
                let i = (c * s + y) * s + x;
                o[i] = h[i] + alpha * (d[i] - h[i]);
            }
        }
    }
    out
}

fn warp(host: &Tensor<f32>, angle: f64) -> Tensor<f32> {
    let s = host.shape()[1];
    let sf = s as f64;
    let radius = WARP_R * sf;
    let src = Canvas::from_tensor(host);
    let mut dst = Canvas::from_tensor(host);
    let c = sf / 2.0;
    for y in 0..s {
        for x in 0..s {
            let (dx, dy) = (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
            let r = (dx * dx + dy * dy).sqrt() / radius;
            if r >= 1.0 {
                continue;
            }
            let th = angle * (1.0 - r) * (1.0 - r);
            let (sn, cs) = th.sin_cos();
            let sx = (c + cs * dx - sn * dy - 0.5).round().clamp(0.0, sf - 1.0) as usize;
            let sy = (c + sn * dx + cs * dy - 0.5).round().clamp(0.0, sf - 1.0) as usize;
            for ch in 0..3 {
                dst.set(ch, y, x, src.get(ch, sy, sx));
            }
        }
    }
    let data = dst.px.into_iter().map(|p| (2.0 * p - 1.0) as f32).collect();
    Tensor::from_vec(&[3, s, s], data).expect("warp shape")
}

/// One fake per host in `real_pool`, keeping the host's id. Swaps take
/// their donor from a different pool entry chosen by the seeded generator.
pub fn gen_fake(kind: FakeKind, real_pool: &[ImageSample], seed: u64) -> Result<Vec<ImageSample>> {
    if real_pool.is_empty() {
        return Err(TarError::config("gen_fake: empty real pool"));
    }
    if kind != FakeKind::LocalWarp && real_pool.len() < 2 {
        return Err(TarError::config("gen_fake: swaps need at least two real images"));
    }
    let n = real_pool.len();
    let out = parallel::map_range(n, |i| {
        let host = &real_pool[i];
        let mut rng = rng_for(seed, kind.code(), host.id);
        let pixels = match kind {
            FakeKind::LocalWarp => {
                let mag = rng.gen_range(1.6..2.4);
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                warp(&host.pixels, sign * mag)
            }
            _ => {
                let j = (i + 1 + rng.gen_range(0..n - 1)) % n;
                swap(&host.pixels, &real_pool[j].pixels, kind)
            }
        };
        ImageSample::new(pixels, Domain::Fake(kind), host.id)
    });
    out.into_iter().collect()
}

/// Mean gradient magnitude over the pixels on the rim of the swap region.
pub fn seam_gradient(img: &Tensor<f32>) -> f64 {
    let s = img.shape()[1];
    let d = img.data();
    let (mut total, mut count) = (0.0, 0usize);
    for y in 1..s - 1 {
        for x in 1..s - 1 {
            let r = swap_radius(x, y, s);
            if (r - 1.0).abs() > 0.08 {
                continue;
            }
            for c in 0..3 {
                let at = |yy: usize, xx: usize| f64::from(d[(c * s + yy) * s + xx]);
                let gx = (at(y, x + 1) - at(y, x - 1)) / 2.0;
                let gy = (at(y + 1, x) - at(y - 1, x)) / 2.0;
                total += (gx * gx + gy * gy).sqrt();
                count += 1;
            }
        }
    }
    total / count.max(1) as f64
}

/// L¹ distance between the normalized 32-bin per-channel histograms of
/// two images (0 = identical, 2 = disjoint).
pub fn histogram_l1(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    const BINS: usize = 32;
    let hist = |t: &Tensor<f32>| {
        let mut h = vec![0.0; 3 * BINS];
        let per = t.numel() / 3;
        for (i, &v) in t.data().iter().enumerate() {
            let bin = ((((v + 1.0) / 2.0) * BINS as f32) as usize).min(BINS - 1);
            h[(i / per) * BINS + bin] += 1.0 / (3.0 * per as f64);
        }
        h
    };
    hist(a).iter().zip(hist(b)).map(|(p, q)| (p - q).abs()).sum()
}

/// All samples of one real/fake domain pair before splitting.
#[derive(Clone, Debug)]
pub struct DomainCorpus {
    pub kind: FakeKind,
    pub real: Vec<ImageSample>,
    pub fake: Vec<ImageSample>,
}

impl DomainCorpus {
    /// Reals and fake hosts draw from disjoint id ranges, offset per
    /// domain, so ids are unique across the whole corpus.
    pub fn generate(kind: FakeKind, per_class: usize, size: usize, seed: u64) -> Result<Self> {
        let base = kind.code() * 10_000_000;
        let real_ids: Vec<u64> = (0..per_class as u64).map(|i| base + i).collect();
        let host_ids: Vec<u64> = (0..per_class as u64).map(|i| base + 5_000_000 + i).collect();
        let real = gen_real_ids(seed, &real_ids, size);
        let hosts = gen_real_ids(seed, &host_ids, size);
        let fake = gen_fake(kind, &hosts, seed)?;
        Ok(DomainCorpus { kind, real, fake })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_generation_is_deterministic_and_bounded() {
        let a = gen_real(5, 4, 32);
        let b = gen_real(5, 4, 32);
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.pixels.data().iter().all(|v| (-1.0..=1.0).contains(v))));
        assert_ne!(a[0].pixels, a[1].pixels);
        assert!(gen_real(5, 0, 32).is_empty());
    }

    #[test]
    fn empty_pool_is_an_error() {
        assert!(gen_fake(FakeKind::BlendSwap, &[], 1).is_err());
    }

    #[test]
    fn swaps_only_touch_the_central_region() {
        let pool = gen_real(11, 6, 48);
        for kind in [FakeKind::SharpSwap, FakeKind::BlendSwap] {
            let fakes = gen_fake(kind, &pool, 3).unwrap();
            for (f, h) in fakes.iter().zip(&pool) {
                let reach = if kind == FakeKind::SharpSwap { 1.0 } else { 1.0 + FEATHER };
                let mut changed_inside = false;
                for y in 0..48 {
                    for x in 0..48 {
                        let r = swap_radius(x, y, 48);
                        for c in 0..3 {
                            let i = (c * 48 + y) * 48 + x;
                            if r > reach {
                                assert_eq!(f.pixels.data()[i], h.pixels.data()[i]);
                            } else if r < 0.5 && f.pixels.data()[i] != h.pixels.data()[i] {
                                changed_inside = true;
                            }
                        }
                    }
                }
                assert!(changed_inside);
                assert_eq!(f.label, crate::model::Label::Fake);
            }
        }
    }
}

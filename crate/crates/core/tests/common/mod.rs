#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tar_core::autograd::{Graph, Var};
use tar_core::gradcheck::{grad_check_params, GradCheckReport};
use tar_core::model::{forward_train, ArchConfig, Label, Mode, ModelParams, Session, Variant};
use tar_core::params::ParamStore;
use tar_core::train::{activation_loss_var, reconstruction_loss_var, total_loss_var, LossWeights};
use tar_core::data::{DomainCorpus, FakeKind, ImageSample};
use tar_core::Tensor;

pub mod oracles;

pub const GRAD_EPS: f64 = 5e-4;
pub const GRAD_TOL: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// `Σ y ⊙ r` for a fixed random `r`, so every output coordinate matters.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> tar_core::Result<Var> {
    let r = rand_t(g.value(y).shape(), &mut rng(seed ^ 0xabcdef));
    let m = g.mask(y, r)?;
    Ok(g.sum(m))
}

fn check(
    store: ParamStore<f64>,
    seed: u64,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> tar_core::Result<Var>,
) -> GradCheckReport {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    grad_check_params(
        |g, s| {
            let vars: Vec<Var> = names
                .iter()
                .map(|n| g.param(n, s.value(n).unwrap().clone()))
                .collect();
            let y = f(g, &vars)?;
            project(g, y, seed)
        },
        &store,
        GRAD_EPS,
        usize::MAX,
        &mut rng(seed),
    )
    .unwrap()
}

fn store(items: &[(&str, Tensor<f64>)]) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    // names sort in declaration order so `vars[i]` lines up
    for (i, (n, t)) in items.iter().enumerate() {
        s.insert(format!("{i}{n}"), t.clone());
    }
    s
}

/// Finite-difference reports for each primitive at one seed.
pub fn primitive_checks(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let mut r = rng(seed);
    let mut out = Vec::new();

    let st = store(&[
        ("x", rand_t(&[2, 3, 5, 5], &mut r)),
        ("w", rand_t(&[4, 3, 3, 3], &mut r)),
        ("b", rand_t(&[4], &mut r)),
    ]);
    let stride = 1 + (seed % 2) as usize;
    out.push(("conv2d", check(st, seed, |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, 1))));

    let st = store(&[
        ("x", rand_t(&[3, 2, 3, 3], &mut r)),
        ("gamma", rand_t(&[2], &mut r)),
        ("beta", rand_t(&[2], &mut r)),
    ]);
    out.push((
        "batchnorm2d",
        check(st, seed, |g, v| Ok(g.batch_norm(v[0], v[1], v[2], None, 1e-5)?.0)),
    ));

    let st = store(&[("x", rand_t(&[2, 3, 4, 4], &mut r))]);
    out.push(("leaky_relu", check(st, seed, |g, v| g.leaky_relu(v[0], 0.1))));

    let st = store(&[("x", rand_t(&[2, 3, 4, 4], &mut r).map(|v| 2.0 * v))]);
    out.push(("tanh", check(st, seed, |g, v| Ok(g.tanh(v[0])))));

    let st = store(&[("a", rand_t(&[2, 3, 4], &mut r)), ("b", rand_t(&[2, 3, 4], &mut r))]);
    out.push(("add", check(st, seed, |g, v| g.add(v[0], v[1]))));

    let st = store(&[("x", rand_t(&[2, 3, 3, 4], &mut r))]);
    out.push(("upsample", check(st, seed, |g, v| g.upsample2x(v[0]))));

    let st = store(&[("x", rand_t(&[2, 3, 4], &mut r))]);
    out.push(("l1_sum", check(st, seed, |g, v| Ok(g.l1_sum(v[0])))));
    out
}

/// Combined loss of a model on a random labelled batch, checked
/// over every parameter tensor (`per_param` coordinates each).
pub fn full_model_check(config: &ArchConfig, seed: u64, per_param: usize, eps: f64) -> GradCheckReport {
    let config = config.clone();
    let base = ModelParams::<f32>::new(config.clone(), Variant::Full, seed)
        .unwrap()
        .cast::<f64>();
    let mut r = rng(seed);
    // random affine parameters keep batch-norm away from its symmetric point
    let mut model = base.clone();
    for name in base.params.names() {
        if name.ends_with(".gamma") || name.ends_with(".beta") || name.ends_with(".b") {
            let shape = base.params.value(name).unwrap().shape().to_vec();
            model
                .params
                .set_value(name, Tensor::uniform(&shape, 0.5, 1.5, &mut r))
                .unwrap();
        }
    }
    let s = config.input_size;
    let x = rand_t(&[3, config.in_channels, s, s], &mut r);
    let labels: Vec<Label> = (0..3)
        .map(|i| if (i + seed as usize).is_multiple_of(2) { Label::Real } else { Label::Fake })
        .collect();
    let weights = LossWeights::default();
    let template = model.clone();
    grad_check_params(
        |g, store| {
            let mut m = template.clone();
            m.params = store.clone();
            let mut session = Session::new(&m, Mode::Train);
            let out = forward_train(g, &mut session, &x, &labels)?;
            let la = activation_loss_var(g, out.act_raw, &labels)?;
            let lr = reconstruction_loss_var(g, out.input, out.recon)?;
            total_loss_var(g, lr, la, weights)
        },
        &model.params,
        eps,
        per_param,
        &mut rng(seed.wrapping_add(1)),
    )
    .unwrap()
}

/// Reals followed by fakes of one synthetic domain.
pub fn corpus_samples(kind: FakeKind, per_class: usize, size: usize, seed: u64) -> Vec<ImageSample> {
    let c = DomainCorpus::generate(kind, per_class, size, seed).unwrap();
    c.real.into_iter().chain(c.fake).collect()
}

/// Over `trials` fresh models of `variant` (one seed each) fed a uniform
/// random image: how many gave `A1 = A2 = 0`, and the mean fraction of
/// latent elements that are exactly zero.
pub fn zero_activation_stats(config: &ArchConfig, variant: Variant, trials: u64, seed: u64) -> (usize, f64) {
    use tar_core::model::{ablation_variant, encode, per_class_activation};
    let mut r = rng(seed);
    let s = config.input_size;
    let mut both_zero = 0;
    let mut zero_frac = 0.0;
    for t in 0..trials {
        let m = ablation_variant(config.clone(), variant, seed.wrapping_add(t)).unwrap();
        let x = Tensor::<f32>::uniform(&[1, config.in_channels, s, s], -1.0, 1.0, &mut r);
        let h = encode(&m, &x).unwrap();
        let (a1, a2) = per_class_activation(&h)[0];
        if a1 == 0.0 && a2 == 0.0 {
            both_zero += 1;
        }
        let d = h.tensor().data();
        zero_frac += d.iter().filter(|v| **v == 0.0).count() as f64 / d.len() as f64;
    }
    (both_zero, zero_frac / trials as f64)
}

//! Central finite-difference oracle for analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates whose ±ε probes straddled a rectifier or absolute-value
    /// kink, where a finite difference does not estimate the derivative.
    pub skipped_kinks: usize,
    /// Denominator floor used: [`GRAD_FLOOR`] times `max(1, |L|)`.
    pub floor: f64,
    /// Compared coordinates whose gradient magnitude is under the floor.
    pub below_floor: usize,
    /// Description of the worst coordinate.
    pub worst: String,
}

impl GradCheckReport {
    fn new(loss: f64) -> Self {
        GradCheckReport {
            floor: GRAD_FLOOR * loss.abs().max(1.0),
            ..Default::default()
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, what: impl FnOnce() -> String) {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(self.floor);
        self.checked += 1;
        if analytic.abs().max(numeric.abs()) < self.floor {
            self.below_floor += 1;
        }
        if err >= self.max_rel_error {
            self.max_rel_error = err;
            self.worst = format!("{} (analytic {analytic:e}, numeric {numeric:e})", what());
        }
    }
}

/// Denominator floor of the reported relative error, relative to the loss
/// scale `max(1, |L|)`. Gradients smaller than this are below what the
/// difference quotient resolves (its rounding noise is about
/// `ε_mach·|L| / eps`), so their error is measured against the floor
/// instead of their own size.
pub const GRAD_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, 1e-12)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Probe offsets, in units of the step.
const STENCIL: [f64; 4] = [-2.0, -1.0, 1.0, 2.0];

/// Fourth-order central difference from probes at `x + k·h`, `k ∈ STENCIL`.
fn stencil(f: [f64; 4], h: f64) -> f64 {
    (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * h)
}

fn eval_loss<F>(f: &F, x: &Tensor<f64>) -> Result<(f64, u64)>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.variable(x.clone());
    let l = f(&mut g, v)?;
    Ok((g.value(l).item()?, g.kink_signature()))
}

/// Compare the analytic gradient of `f` at `x` with a fourth-order
/// central difference of step `eps` on every coordinate.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.variable(x.clone());
    let l = f(&mut g, v)?;
    let base_sig = g.kink_signature();
    let mut report = GradCheckReport::new(g.value(l).item()?);
    g.backward(l)?;
    let analytic = g
        .grad(v)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    for i in 0..x.numel() {
        let mut probes = [0.0; 4];
        let mut straddles = false;
        for (p, k) in probes.iter_mut().zip(STENCIL) {
            let mut xp = x.clone();
            xp.data_mut()[i] += k * eps;
            let (v, sig) = eval_loss(&f, &xp)?;
            *p = v;
            straddles |= sig != base_sig;
        }
        if straddles {
            report.skipped_kinks += 1;
            continue;
        }
        report.record(analytic.data()[i], stencil(probes, eps), || format!("x[{i}]"));
    }
    Ok(report)
}

fn eval_params<F>(f: &F, store: &ParamStore<f64>) -> Result<(f64, u64)>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let l = f(&mut g, store)?;
    Ok((g.value(l).item()?, g.kink_signature()))
}

/// Finite-difference check over the parameters of a model. `f` must
/// register the store's parameters on the graph with [`Graph::param`].
/// At most `per_param` randomly chosen coordinates of each parameter
/// tensor are probed.
pub fn grad_check_params<F, R>(
    f: F,
    store: &ParamStore<f64>,
    eps: f64,
    per_param: usize,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
    R: Rng + ?Sized,
{
    let mut g = Graph::new();
    let l = f(&mut g, store)?;
    let base_sig = g.kink_signature();
    let mut report = GradCheckReport::new(g.value(l).item()?);
    g.backward(l)?;
    let analytic: Vec<(String, Tensor<f64>)> = g
        .param_grads()
        .map(|(n, t)| (n.to_string(), t))
        .collect();

    let mut probe = store.clone();
    for (name, grad) in &analytic {
        let n = grad.numel();
        let picks: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            let mut v = sample(rng, n, per_param).into_vec();
            v.sort_unstable();
            v
        };
        let original = store.value(name)?.clone();
        for i in picks {
            let mut probes = [0.0; 4];
            let mut straddles = false;
            for (p, k) in probes.iter_mut().zip(STENCIL) {
                let mut t = original.clone();
                t.data_mut()[i] = original.data()[i] + k * eps;
                probe.set_value(name, t)?;
                let (v, sig) = eval_params(&f, &probe)?;
                *p = v;
                straddles |= sig != base_sig;
            }
            probe.set_value(name, original.clone())?;
            if straddles {
                report.skipped_kinks += 1;
                continue;
            }
            report.record(grad.data()[i], stencil(probes, eps), || format!("{name}[{i}]"));
        }
    }
    Ok(report)
}

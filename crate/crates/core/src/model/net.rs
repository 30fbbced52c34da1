use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{count_conv_layers, ArchConfig, Variant};
use super::latent::{Label, LatentTensor};
use crate::autograd::{BatchStats, Graph, Var};
use crate::error::{Result, TarError};
use crate::params::ParamStore;
use crate::tensor::ops::{BnState, BN_EPS};
use crate::tensor::{Scalar, Tensor};

/// Whether batch norms use batch statistics (and report them) or their
/// running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// One residual repeat in the plan shared by initialization and forward.
#[derive(Clone, Debug)]
struct Block {
    prefix: String,
    cin: usize,
    cout: usize,
    stride: usize,
    projection: bool,
    upsample_before: bool,
    /// Name of the stage output tap emitted after this block, if it ends a stage.
    stage_end: Option<String>,
}

fn plan(config: &ArchConfig, variant: Variant) -> (Vec<Block>, Vec<Block>) {
    let mut enc = Vec::new();
    let mut cin = config.in_channels;
    for (s, &c) in config.encoder_channels.iter().enumerate() {
        for r in 0..config.repeats {
            let (bin, stride) = if r == 0 { (cin, 2) } else { (c, 1) };
            enc.push(Block {
                prefix: format!("enc.s{s}.r{r}"),
                cin: bin,
                cout: c,
                stride,
                projection: variant.residual() && (bin != c || stride != 1),
                upsample_before: false,
                stage_end: (r + 1 == config.repeats).then(|| format!("enc.s{s}")),
            });
        }
        cin = c;
    }
    let mut dec = Vec::new();
    cin = config.latent_depth();
    for (s, &c) in config.decoder_channels.iter().enumerate() {
        for r in 0..config.repeats {
            let bin = if r == 0 { cin } else { c };
            dec.push(Block {
                prefix: format!("dec.s{s}.r{r}"),
                cin: bin,
                cout: c,
                stride: 1,
                projection: variant.residual() && bin != c,
                upsample_before: r == 0,
                stage_end: (r + 1 == config.repeats).then(|| format!("dec.s{s}")),
            });
        }
        cin = c;
    }
    (enc, dec)
}

/// Every learnable tensor plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar = f32> {
    pub config: ArchConfig,
    pub variant: Variant,
    pub params: ParamStore<T>,
    pub bn: BTreeMap<String, BnState<T>>,
}

/// Running-statistics update produced by one training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BnStatsUpdate<T> {
    pub layer: String,
    pub stats: BatchStats<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Fan-in scaled uniform conv weights, zero biases, unit/zero
    /// batch-norm affine parameters. Deterministic in `seed`.
    pub fn new(config: ArchConfig, variant: Variant, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut bn = BTreeMap::new();
        let k = config.kernel;
        let mut conv = |name: &str, cin: usize, cout: usize, kk: usize, bias: bool, rng: &mut ChaCha8Rng| {
            let bound = (6.0 / (cin * kk * kk) as f64).sqrt();
            params.insert(format!("{name}.w"), Tensor::uniform(&[cout, cin, kk, kk], -bound, bound, rng));
            if bias {
                params.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
            }
        };
        let mut norms = Vec::new();
        let (enc, dec) = plan(&config, variant);
        let mut last = 0;
        for (i, b) in enc.iter().chain(&dec).enumerate() {
            if i == enc.len() {
                conv("enc.final", last, config.latent_depth(), k, true, &mut rng);
            }
            conv(&format!("{}.conv1", b.prefix), b.cin, b.cout, k, false, &mut rng);
            conv(&format!("{}.conv2", b.prefix), b.cout, b.cout, k, false, &mut rng);
            norms.push((format!("{}.bn1", b.prefix), b.cout));
            norms.push((format!("{}.bn2", b.prefix), b.cout));
            if b.projection {
                conv(&format!("{}.proj", b.prefix), b.cin, b.cout, 1, false, &mut rng);
                norms.push((format!("{}.proj_bn", b.prefix), b.cout));
            }
            last = b.cout;
        }
        conv("dec.final", last, config.in_channels, k, true, &mut rng);
        for (name, c) in norms {
            params.insert(format!("{name}.gamma"), Tensor::ones(&[c]));
            params.insert(format!("{name}.beta"), Tensor::zeros(&[c]));
            bn.insert(name, BnState::new(c));
        }
        Ok(ModelParams {
            config,
            variant,
            params,
            bn,
        })
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            variant: self.variant,
            params: self.params.cast(),
            bn: self
                .bn
                .iter()
                .map(|(k, s)| {
                    let c = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect();
                    (k.clone(), BnState { mean: c(&s.mean), var: c(&s.var) })
                })
                .collect(),
        }
    }

    pub fn apply_bn_stats(&mut self, updates: &[BnStatsUpdate<T>], momentum: f64) -> Result<()> {
        for u in updates {
            let st = self
                .bn
                .get_mut(&u.layer)
                .ok_or_else(|| TarError::contract(format!("no batch-norm layer {}", u.layer)))?;
            st.update(&u.stats.mean, &u.stats.var, u.stats.count, momentum);
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.all_finite()
            && self
                .bn
                .values()
                .all(|s| s.mean.iter().chain(&s.var).all(|v| v.is_finite()))
    }

    /// Stage outputs that can be visualized, in forward order.
    pub fn decoder_layers(&self) -> Vec<String> {
        (0..self.config.decoder_channels.len())
            .map(|s| format!("dec.s{s}"))
            .collect()
    }

    pub fn conv_layers(&self) -> usize {
        count_conv_layers(&self.config, self.variant)
    }

    /// Human-readable layer table with output shapes and conv count.
    pub fn summary(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "variant: {}", self.variant.name());
        let _ = writeln!(s, "{:<18} {:<28} {:>14}", "layer", "op", "output (CxHxW)");
        let _ = writeln!(
            s,
            "{:<18} {:<28} {:>14}",
            "input",
            "",
            format!("{}x{}x{}", c.in_channels, c.input_size, c.input_size)
        );
        let (enc, dec) = plan(c, self.variant);
        let mut size = c.input_size;
        for b in &enc {
            size /= b.stride;
            let op = format!(
                "residual {}->{} s{}{}",
                b.cin,
                b.cout,
                b.stride,
                if b.projection { " +proj" } else { "" }
            );
            let _ = writeln!(s, "{:<18} {:<28} {:>14}", b.prefix, op, format!("{}x{size}x{size}", b.cout));
        }
        size /= 2;
        let act = if self.variant == Variant::ReluNoResidual { "relu" } else { "leaky" };
        let _ = writeln!(
            s,
            "{:<18} {:<28} {:>14}",
            "enc.final",
            format!("conv3x3 s2 + {act}"),
            format!("{}x{size}x{size}", c.latent_depth())
        );
        for b in &dec {
            if b.upsample_before {
                size *= 2;
            }
            let op = format!(
                "{}residual {}->{}{}",
                if b.upsample_before { "up2x + " } else { "" },
                b.cin,
                b.cout,
                if b.projection { " +proj" } else { "" }
            );
            let _ = writeln!(s, "{:<18} {:<28} {:>14}", b.prefix, op, format!("{}x{size}x{size}", b.cout));
        }
        let _ = writeln!(
            s,
            "{:<18} {:<28} {:>14}",
            "dec.final",
            "conv3x3 + tanh",
            format!("{}x{size}x{size}", c.in_channels)
        );
        let _ = writeln!(
            s,
            "latent: {m}x{m}x{d} (real half {n} channels, fake half {n} channels)",
            m = c.latent_size(),
            d = c.latent_depth(),
            n = c.latent_half
        );
        let _ = writeln!(s, "conv layers: {} (reference figure: 45)", self.conv_layers());
        let _ = writeln!(s, "parameters: {} scalars in {} tensors", self.params.num_scalars(), self.params.len());
        s
    }
}

pub fn build_model(config: ArchConfig, seed: u64) -> Result<ModelParams<f32>> {
    ModelParams::new(config, Variant::Full, seed)
}

/// Build one of the ablation topologies.
pub fn ablation_variant(config: ArchConfig, variant: Variant, seed: u64) -> Result<ModelParams<f32>> {
    ModelParams::new(config, variant, seed)
}

/// Records one forward pass of a model onto a graph.
pub struct Session<'m, T: Scalar> {
    model: &'m ModelParams<T>,
    mode: Mode,
    bound: HashMap<String, Var>,
    stats: Vec<BnStatsUpdate<T>>,
    taps: Vec<(String, Var)>,
}

impl<'m, T: Scalar> Session<'m, T> {
    pub fn new(model: &'m ModelParams<T>, mode: Mode) -> Self {
        Session {
            model,
            mode,
            bound: HashMap::new(),
            stats: Vec::new(),
            taps: Vec::new(),
        }
    }

    fn param(&mut self, g: &mut Graph<T>, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let t = self.model.params.value(name)?.clone();
        let v = g.param(name, t);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    fn conv(&mut self, g: &mut Graph<T>, name: &str, x: Var, stride: usize, bias: bool) -> Result<Var> {
        let w = self.param(g, &format!("{name}.w"))?;
        let b = if bias { Some(self.param(g, &format!("{name}.b"))?) } else { None };
        let k = g.value(w).shape()[2];
        g.conv2d(x, w, b, stride, k / 2)
    }

    fn bn(&mut self, g: &mut Graph<T>, name: &str, x: Var) -> Result<Var> {
        let gamma = self.param(g, &format!("{name}.gamma"))?;
        let beta = self.param(g, &format!("{name}.beta"))?;
        let running = match self.mode {
            Mode::Train => None,
            Mode::Infer => Some(
                self.model
                    .bn
                    .get(name)
                    .ok_or_else(|| TarError::contract(format!("no running stats for {name}")))?,
            ),
        };
        let (y, stats) = g.batch_norm(x, gamma, beta, running, BN_EPS)?;
        if let Some(stats) = stats {
            self.stats.push(BnStatsUpdate {
                layer: name.to_string(),
                stats,
            });
        }
        Ok(y)
    }

    fn block(&mut self, g: &mut Graph<T>, b: &Block, x: Var) -> Result<Var> {
        let p = &b.prefix;
        let y = self.conv(g, &format!("{p}.conv1"), x, b.stride, false)?;
        let y = self.bn(g, &format!("{p}.bn1"), y)?;
        let y = g.relu(y);
        let y = self.conv(g, &format!("{p}.conv2"), y, 1, false)?;
        let mut y = self.bn(g, &format!("{p}.bn2"), y)?;
        if self.model.variant.residual() {
            let shortcut = if b.projection {
                let s = self.conv(g, &format!("{p}.proj"), x, b.stride, false)?;
                self.bn(g, &format!("{p}.proj_bn"), s)?
            } else {
                x
            };
            y = g.add(y, shortcut)?;
        }
        Ok(g.relu(y))
    }

    /// Encoder: residual stages, then a stride-2 conv and the final
    /// (leaky) rectifier. Returns the raw latent `[B, 2N, M, M]`.
    pub fn encode(&mut self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let c = &self.model.config;
        let shape = g.value(x).shape().to_vec();
        let s = c.input_size;
        if shape.len() != 4 || shape[1] != c.in_channels || shape[2] != s || shape[3] != s {
            return Err(TarError::contract(format!(
                "encoder expects input [B, {}, {s}, {s}], got {shape:?}",
                c.in_channels
            )));
        }
        let (enc, _) = plan(c, self.model.variant);
        let mut h = x;
        for b in &enc {
            h = self.block(g, b, h)?;
            if let Some(tap) = &b.stage_end {
                self.taps.push((tap.clone(), h));
            }
        }
        let pre = self.conv(g, "enc.final", h, 2, true)?;
        let slope = match self.model.variant {
            Variant::ReluNoResidual => 0.0,
            _ => self.model.config.leaky_slope,
        };
        let h = g.leaky_relu(pre, slope)?;
        self.taps.push(("latent".to_string(), h));
        Ok(h)
    }

    /// Decoder: before each stage a 2× nearest-neighbour upsampling, then
    /// stride-1 residual repeats, then a conv with `tanh` output.
    pub fn decode(&mut self, g: &mut Graph<T>, h: Var) -> Result<Var> {
        let c = &self.model.config;
        let want = [c.latent_depth(), c.latent_size(), c.latent_size()];
        let shape = g.value(h).shape().to_vec();
        if shape.len() != 4 || shape[1..] != want {
            return Err(TarError::contract(format!(
                "decoder expects latent [B, {}, {}, {}], got {shape:?}",
                want[0], want[1], want[2]
            )));
        }
        let (_, dec) = plan(c, self.model.variant);
        let mut y = h;
        for b in &dec {
            if b.upsample_before {
                y = g.upsample2x(y)?;
            }
            y = self.block(g, b, y)?;
            if let Some(tap) = &b.stage_end {
                self.taps.push((tap.clone(), y));
            }
        }
        let y = self.conv(g, "dec.final", y, 1, true)?;
        Ok(g.tanh(y))
    }

    /// Batch statistics collected so far (training mode only).
    pub fn take_stats(&mut self) -> Vec<BnStatsUpdate<T>> {
        std::mem::take(&mut self.stats)
    }

    /// Intermediate stage outputs by name (`enc.sK`, `latent`, `dec.sK`).
    pub fn tap(&self, name: &str) -> Option<Var> {
        self.taps.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Constant mask implementing the label-driven latent selection.
pub fn facilitate_mask<T: Scalar>(labels: &[Label], half: usize, m: usize) -> Tensor<T> {
    let plane = half * m * m;
    let mut data = Vec::with_capacity(labels.len() * 2 * plane);
    for l in labels {
        let (keep_real, keep_fake) = match l {
            Label::Real => (T::one(), T::zero()),
            Label::Fake => (T::zero(), T::one()),
        };
        data.extend(std::iter::repeat_n(keep_real, plane));
        data.extend(std::iter::repeat_n(keep_fake, plane));
    }
    Tensor::from_vec(&[labels.len(), 2 * half, m, m], data).expect("mask shape")
}

/// Graph handles produced by one training forward pass.
#[derive(Clone, Copy, Debug)]
pub struct TrainOutputs {
    pub input: Var,
    /// Reconstruction of the facilitated latent, `[B, 3, S, S]`.
    pub recon: Var,
    pub h_raw: Var,
    pub h_fac: Var,
    /// `[B, 2]` mean absolute activations `(A1, A2)` of the facilitated latent.
    pub act_fac: Var,
    /// `[B, 2]` activations of the raw latent.
    pub act_raw: Var,
}

/// Encode, mask by label, decode the masked latent, and measure both the
/// raw and masked half activations, all on one tape.
pub fn forward_train<T: Scalar>(
    g: &mut Graph<T>,
    session: &mut Session<'_, T>,
    x: &Tensor<T>,
    labels: &[Label],
) -> Result<TrainOutputs> {
    let batch = x.shape().first().copied().unwrap_or(0);
    if labels.len() != batch {
        return Err(TarError::contract(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let input = g.input(x.clone());
    let h_raw = session.encode(g, input)?;
    let c = &session.model.config;
    let mask = facilitate_mask(labels, c.latent_half, c.latent_size());
    let h_fac = g.mask(h_raw, mask)?;
    let recon = session.decode(g, h_fac)?;
    let act_fac = g.group_mean_abs(h_fac, 2)?;
    let act_raw = g.group_mean_abs(h_raw, 2)?;
    Ok(TrainOutputs {
        input,
        recon,
        h_raw,
        h_fac,
        act_fac,
        act_raw,
    })
}

/// Inference-mode encoding (running batch-norm statistics).
pub fn encode<T: Scalar>(model: &ModelParams<T>, x: &Tensor<T>) -> Result<LatentTensor<T>> {
    let mut g = Graph::new();
    let mut s = Session::new(model, Mode::Infer);
    let xv = g.input(x.clone());
    let h = s.encode(&mut g, xv)?;
    LatentTensor::new(g.value(h).clone())
}

/// Inference-mode reconstruction from a latent.
pub fn decode<T: Scalar>(model: &ModelParams<T>, h: &LatentTensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let mut s = Session::new(model, Mode::Infer);
    let hv = g.input(h.tensor().clone());
    let y = s.decode(&mut g, hv)?;
    Ok(g.value(y).clone())
}

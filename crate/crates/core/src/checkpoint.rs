//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! "TARC" | u32 version (1)
//! config:  u32 input_size, u32 in_channels,
//!          u32 n + n×u32 encoder channels, u32 n + n×u32 decoder channels,
//!          u32 repeats, u32 latent_half, f64 leaky_slope, u32 kernel,
//!          u8 variant
//! params:  u32 count, then per tensor: u32 name length, name bytes,
//!          u32 rank, rank×u32 extents, f32 data
//! bn:      u32 count, then per layer: name, u32 channels, f32 mean, f32 var
//! optim:   u8 present; if 1: u8 kind, f64 lr, beta1, beta2, eps, u64 step,
//!          u32 count, then per tensor: name, u32 length, f32 m, f32 v
//! u32 CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Tables are written in name order, so equal models give equal bytes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Result, TarError};
use crate::model::{ArchConfig, ModelParams, Variant};
use crate::optim::{Moments, Optimizer, OptimizerConfig, OptimizerKind};
use crate::tensor::ops::BnState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TARC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams<f32>,
    pub optimizer: Option<Optimizer<f32>>,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend(u32::try_from(v).expect("checkpoint field exceeds u32").to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend(v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend(v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend(x.to_le_bytes());
        }
    }
    fn name(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend(s.as_bytes());
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.b.len());
        match end {
            Some(end) => {
                let s = &self.b[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(TarError::format(self.pos, format!("truncated checkpoint reading {what}"))),
        }
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| TarError::format(self.pos, format!("{what}: length overflow")))?;
        let b = self.take(bytes, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
    fn name(&mut self) -> Result<String> {
        let at = self.pos;
        let n = self.u32("name length")?;
        let b = self.take(n, "name")?;
        String::from_utf8(b.to_vec()).map_err(|_| TarError::format(at, "name is not UTF-8"))
    }
}

fn write_config(w: &mut Writer, c: &ArchConfig, variant: Variant) {
    w.u32(c.input_size);
    w.u32(c.in_channels);
    for list in [&c.encoder_channels, &c.decoder_channels] {
        w.u32(list.len());
        list.iter().for_each(|&v| w.u32(v));
    }
    w.u32(c.repeats);
    w.u32(c.latent_half);
    w.f64(c.leaky_slope);
    w.u32(c.kernel);
    w.u8(variant.code());
}

fn read_config(r: &mut Reader) -> Result<(ArchConfig, Variant)> {
    let input_size = r.u32("input size")?;
    let in_channels = r.u32("input channels")?;
    let mut lists = Vec::new();
    for what in ["encoder channels", "decoder channels"] {
        let n = r.u32(what)?;
        if n > 64 {
            return Err(TarError::format(r.pos - 4, format!("{what}: implausible stage count {n}")));
        }
        lists.push((0..n).map(|_| r.u32(what)).collect::<Result<Vec<_>>>()?);
    }
    let decoder_channels = lists.pop().expect("two lists");
    let encoder_channels = lists.pop().expect("two lists");
    let config = ArchConfig {
        input_size,
        in_channels,
        encoder_channels,
        decoder_channels,
        repeats: r.u32("repeats")?,
        latent_half: r.u32("latent half")?,
        leaky_slope: r.f64("leaky slope")?,
        kernel: r.u32("kernel")?,
    };
    let at = r.pos;
    let code = r.u8("variant")?;
    let variant = Variant::from_code(code).ok_or_else(|| TarError::format(at, format!("unknown variant code {code}")))?;
    Ok((config, variant))
}

/// Serialize a model and, optionally, optimizer state.
pub fn encode_checkpoint(model: &ModelParams<f32>, optimizer: Option<&Optimizer<f32>>) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend(MAGIC);
    w.u32(VERSION as usize);
    write_config(&mut w, &model.config, model.variant);
    w.u32(model.params.len());
    for (name, p) in model.params.iter() {
        w.name(name);
        w.u32(p.value.rank());
        p.value.shape().iter().for_each(|&d| w.u32(d));
        w.f32s(p.value.data());
    }
    w.u32(model.bn.len());
    for (name, s) in &model.bn {
        w.name(name);
        w.u32(s.mean.len());
        w.f32s(&s.mean);
        w.f32s(&s.var);
    }
    match optimizer {
        None => w.u8(0),
        Some(o) => {
            w.u8(1);
            w.u8(match o.config.kind {
                OptimizerKind::Adam => 0,
                OptimizerKind::Sgd => 1,
            });
            for v in [o.config.lr, o.config.beta1, o.config.beta2, o.config.eps] {
                w.f64(v);
            }
            w.u64(o.step);
            w.u32(o.moments.len());
            for (name, m) in &o.moments {
                w.name(name);
                w.u32(m.m.numel());
                w.f32s(m.m.data());
                w.f32s(m.v.data());
            }
        }
    }
    let crc = crc32fast::hash(&w.0);
    w.0.extend(crc.to_le_bytes());
    w.0
}

/// Parse and validate a checkpoint. Parameter names and shapes must match
/// the architecture recorded in the header.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(TarError::format(0, "not a checkpoint (missing TARC magic)"));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let mut r = Reader { b: body, pos: 4 };
    let version = r.u32("version")? as u32;
    if version != VERSION {
        return Err(TarError::format(
            4,
            format!("unsupported checkpoint version {version} (this build reads version {VERSION})"),
        ));
    }
    let actual = crc32fast::hash(body);
    if actual != stored {
        return Err(TarError::format(
            bytes.len() - 4,
            format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}"),
        ));
    }
    let (config, variant) = read_config(&mut r)?;
    let at = r.pos;
    let mut model = ModelParams::<f32>::new(config, variant, 0)
        .map_err(|e| TarError::format(at, format!("invalid architecture: {e}")))?;

    let at = r.pos;
    let n = r.u32("parameter count")?;
    if n != model.params.len() {
        return Err(TarError::format(
            at,
            format!("{n} parameter tensors, architecture has {}", model.params.len()),
        ));
    }
    for _ in 0..n {
        let at = r.pos;
        let name = r.name()?;
        let rank = r.u32("rank")?;
        if rank > 8 {
            return Err(TarError::format(at, format!("{name}: implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32("extent")).collect::<Result<Vec<_>>>()?;
        let expect = model
            .params
            .get(&name)
            .ok_or_else(|| TarError::format(at, format!("unexpected parameter {name}")))?;
        if expect.value.shape() != shape.as_slice() {
            return Err(TarError::format(
                at,
                format!("{name}: shape {shape:?}, architecture expects {:?}", expect.value.shape()),
            ));
        }
        let data = r.f32s(shape.iter().product(), &name)?;
        model.params.set_value(&name, Tensor::from_vec(&shape, data)?)?;
    }

    let at = r.pos;
    let n = r.u32("batch-norm count")?;
    if n != model.bn.len() {
        return Err(TarError::format(at, format!("{n} batch-norm layers, architecture has {}", model.bn.len())));
    }
    for _ in 0..n {
        let at = r.pos;
        let name = r.name()?;
        let c = r.u32("channels")?;
        let want = model.bn.get(&name).map(|s| s.mean.len());
        if want != Some(c) {
            return Err(TarError::format(at, format!("batch-norm layer {name} with {c} channels does not fit")));
        }
        let mean = r.f32s(c, &name)?;
        let var = r.f32s(c, &name)?;
        model.bn.insert(name, BnState { mean, var });
    }

    let optimizer = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let at = r.pos;
            let kind = match r.u8("optimizer kind")? {
                0 => OptimizerKind::Adam,
                1 => OptimizerKind::Sgd,
                k => return Err(TarError::format(at, format!("unknown optimizer kind {k}"))),
            };
            let config = OptimizerConfig {
                kind,
                lr: r.f64("lr")?,
                beta1: r.f64("beta1")?,
                beta2: r.f64("beta2")?,
                eps: r.f64("eps")?,
            };
            let step = r.u64("step")?;
            let n = r.u32("moment count")?;
            let mut moments = BTreeMap::new();
            for _ in 0..n {
                let at = r.pos;
                let name = r.name()?;
                let len = r.u32("moment length")?;
                let shape = model
                    .params
                    .get(&name)
                    .filter(|p| p.value.numel() == len)
                    .map(|p| p.value.shape().to_vec())
                    .ok_or_else(|| TarError::format(at, format!("moments for {name} do not fit the model")))?;
                let m = Tensor::from_vec(&shape, r.f32s(len, &name)?)?;
                let v = Tensor::from_vec(&shape, r.f32s(len, &name)?)?;
                moments.insert(name, Moments { m, v });
            }
            Some(Optimizer { config, step, moments })
        }
        f => return Err(TarError::format(r.pos - 1, format!("bad optimizer flag {f}"))),
    };
    if r.pos != body.len() {
        return Err(TarError::format(r.pos, format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(Checkpoint { model, optimizer })
}

/// Write atomically: a sibling temporary file is renamed over `path`.
pub fn save_checkpoint(path: &Path, model: &ModelParams<f32>, optimizer: Option<&Optimizer<f32>>) -> Result<()> {
    let bytes = encode_checkpoint(model, optimizer);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| TarError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| TarError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| TarError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| TarError::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Whether the trailing CRC matches the contents.
pub fn crc_ok(bytes: &[u8]) -> bool {
    bytes.len() >= 4 && {
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        crc32fast::hash(body).to_le_bytes() == tail
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let model = ModelParams::<f32>::new(ArchConfig::micro(), Variant::Full, 3).unwrap();
        let bytes = encode_checkpoint(&model, None);
        assert!(crc_ok(&bytes));
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(encode_checkpoint(&back.model, None), bytes);
    }

    #[test]
    fn corruption_and_future_versions_are_rejected() {
        let model = ModelParams::<f32>::new(ArchConfig::micro(), Variant::Full, 3).unwrap();
        let bytes = encode_checkpoint(&model, None);
        let mut bad = bytes.clone();
        bad[40] ^= 1;
        let err = decode_checkpoint(&bad).unwrap_err().to_string();
        assert!(err.contains("CRC"), "{err}");
        let mut future = bytes.clone();
        future[4] = 2;
        let err = decode_checkpoint(&future).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
        assert!(decode_checkpoint(b"NOPE").is_err());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 9]).is_err());
    }
}

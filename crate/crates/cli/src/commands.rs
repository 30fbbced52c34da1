use std::path::{Path, PathBuf};

use tar_core::checkpoint::{crc_ok, decode_checkpoint, load_checkpoint, save_checkpoint, VERSION};
use tar_core::data::{
    load_ppm, load_split, read_manifest, save_ppm, write_dataset, FakeKind, Split, SplitDataset, MANIFEST_FILE,
};
use tar_core::eval::{cam_map, evaluate_adjusted, overlay, transfer_table, AccuracyMatrix};
use tar_core::model::ModelParams;
use tar_core::train::{
    sequence_transfer_each, train_base, train_epochs, Precision, Snapshot, TrainConfig,
    TransferPlan,
};
use tar_core::TarError;

use crate::config::{self, required, resolve_seed};
use crate::manifest::{write_atomic, RunClock};
use crate::{CamArgs, EvalArgs, InspectArgs, SynthArgs, TrainArgs, TrainFlags, TransferArgs};

pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: usize,
}

fn apply_flags(t: &mut TrainConfig, f: &TrainFlags) {
    if let Some(v) = f.epochs {
        t.epochs = v;
    }
    if let Some(v) = f.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = f.lr {
        t.optimizer.lr = v;
    }
    if let Some(v) = f.optimizer {
        t.optimizer.kind = v;
    }
    if let Some(v) = f.lambda {
        t.weights.lambda = v;
    }
    if let Some(v) = f.activation_source {
        t.activation_source = v;
    }
    if let Some(v) = f.precision {
        t.precision = v;
    }
    if f.patience.is_some() {
        t.early_stop_patience = f.patience;
    }
    if let Some(v) = f.lr_multiplier {
        t.lr_multiplier = v;
    }
}

fn check_size(model: &ModelParams<f32>, size: usize) -> anyhow::Result<()> {
    if model.config.input_size != size {
        return Err(TarError::config(format!(
            "dataset images are {size}×{size}, model expects {s}×{s}",
            s = model.config.input_size
        ))
        .into());
    }
    Ok(())
}

pub fn synth(g: &Globals, a: SynthArgs) -> anyhow::Result<()> {
    let clock = RunClock::start();
    let mut cfg: config::SynthConfig = config::load(g.config.as_deref())?;
    if let Some(p) = a.preset {
        cfg.preset = p;
    }
    if a.size.is_some() {
        cfg.size = a.size;
    }
    if let Some(d) = &a.domains {
        cfg.domains = config::parse_domains(d)?;
    }
    if let Some(v) = a.train {
        cfg.splits.train_per_class = v;
    }
    if let Some(v) = a.fewshot {
        cfg.splits.fewshot_per_class = v;
    }
    if let Some(v) = a.test {
        cfg.splits.test_per_class = v;
    }
    let seed = resolve_seed(g.seed, cfg.seed)?;
    cfg.seed = Some(seed);
    let size = cfg.size.unwrap_or(cfg.preset.arch().input_size);
    if size < 8 {
        return Err(TarError::config(format!("image size {size} is too small")).into());
    }
    let data = SplitDataset::generate(&cfg.domains, &cfg.splits, size, seed)?;
    let rows = write_dataset(&data, &a.out, seed)?;
    let manifest = a.out.join(MANIFEST_FILE);
    clock
        .finish("synth", &cfg, Some(seed), g.threads, vec![manifest.clone()])?
        .write(&a.out)?;
    eprintln!("wrote {} images", rows.len());
    println!("{}", manifest.display());
    Ok(())
}

pub fn train(g: &Globals, a: TrainArgs) -> anyhow::Result<()> {
    let clock = RunClock::start();
    let mut cfg: config::TrainCmdConfig = config::load(g.config.as_deref())?;
    if a.data.is_some() {
        cfg.data = a.data.clone();
    }
    if a.domain.is_some() {
        cfg.domain = a.domain;
    }
    if let Some(p) = a.preset {
        cfg.preset = p;
        cfg.arch = None;
    }
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    apply_flags(&mut cfg.train, &a.flags);
    let seed = resolve_seed(g.seed, cfg.seed)?;
    cfg.seed = Some(seed);
    cfg.train.seed = seed;
    cfg.train.validate()?;
    let data = required(cfg.data.clone(), "--data")?;
    let domain = required(cfg.domain, "--domain")?;

    let rows = read_manifest(&data)?;
    let samples = load_split(&data, &rows, domain, Split::Train)?;
    if samples.is_empty() {
        return Err(TarError::config(format!("no training images for {domain} in {}", data.display())).into());
    }
    let arch = cfg.arch.clone().unwrap_or_else(|| cfg.preset.arch());
    let model = ModelParams::<f32>::new(arch, cfg.variant, seed)?;
    check_size(&model, samples[0].size())?;

    let (trained, history, optimizer) = match cfg.train.precision {
        Precision::F32 => {
            let mut m = model;
            let mut opt = cfg.train.make_optimizer();
            let h = train_epochs(&mut m, &mut opt, &samples, &cfg.train)?;
            (m, h, Some(opt))
        }
        Precision::F64 => {
            let (m, h) = train_base(&model, &samples, &cfg.train)?;
            (m, h, None)
        }
    };
    let dir = a.out.join(&a.run_id);
    let ckpt = dir.join("model.tarc");
    save_checkpoint(&ckpt, &trained, optimizer.as_ref())?;
    let hist = dir.join("history.csv");
    write_atomic(&hist, history.to_csv().as_bytes())?;
    clock
        .finish("train", &cfg, Some(seed), g.threads, vec![ckpt.clone(), hist.clone()])?
        .write(&dir)?;
    if let Some(r) = history.last() {
        eprintln!(
            "epoch {}: loss {:.4} (activation {:.4}, reconstruction {:.4}), train accuracy {:.4}",
            r.epoch, r.l_total, r.l_activ, r.l_recon, r.train_acc
        );
    }
    println!("{}", ckpt.display());
    Ok(())
}

pub fn transfer(g: &Globals, a: TransferArgs) -> anyhow::Result<()> {
    let clock = RunClock::start();
    let mut cfg: config::TransferCmdConfig = config::load(g.config.as_deref())?;
    if a.checkpoint.is_some() {
        cfg.checkpoint = a.checkpoint.clone();
    }
    if a.data.is_some() {
        cfg.data = a.data.clone();
    }
    if a.source.is_some() {
        cfg.source = a.source;
    }
    if let Some(s) = &a.seq {
        cfg.seq = config::parse_domains(s)?;
    }
    if let Some(v) = a.shots {
        cfg.shots = v;
    }
    if a.allow_count_mismatch {
        cfg.allow_count_mismatch = true;
    }
    apply_flags(&mut cfg.train, &a.flags);
    let seed = resolve_seed(g.seed, cfg.seed)?;
    cfg.seed = Some(seed);
    cfg.train.seed = seed;
    let ckpt = required(cfg.checkpoint.clone(), "--checkpoint")?;
    let data_root = required(cfg.data.clone(), "--data")?;
    let source = required(cfg.source, "--source")?;

    let model = load_checkpoint(&ckpt)?.model;
    let data = SplitDataset::load(&data_root)?;
    check_size(&model, data.size)?;
    let mut plan = TransferPlan::new(source, &cfg.seq, cfg.train.clone());
    plan.shots_per_class = cfg.shots;
    plan.allow_count_mismatch = cfg.allow_count_mismatch;
    plan.validate()?;

    let dir = a.out.join(&a.run_id);
    let mut outputs = Vec::new();
    let base = Snapshot::measure(&model, source.name(), Some(source), &data)?;
    let (_, snaps) = sequence_transfer_each(&model, &plan, &data, |i, m, snap| {
        let path = dir.join(format!("stage{}-{}.tarc", i + 1, plan.stages[i].target));
        save_checkpoint(&path, m, None)?;
        eprintln!("{}: mean accuracy {:.4}", snap.name, snap.mean_accuracy());
        outputs.push(path);
        Ok(())
    })?;
    let mut rows = vec![base];
    rows.extend(snaps);
    let table = transfer_table(&rows)?;
    outputs.extend(write_table(&dir, "transfer", &table)?);
    clock
        .finish("transfer", &cfg, Some(seed), g.threads, outputs)?
        .write(&dir)?;
    print!("{}", table.to_markdown());
    Ok(())
}

fn write_table(dir: &Path, name: &str, m: &AccuracyMatrix) -> anyhow::Result<Vec<PathBuf>> {
    let csv = dir.join("table").join(format!("{name}.csv"));
    let md = dir.join("table").join(format!("{name}.md"));
    write_atomic(&csv, m.to_csv().as_bytes())?;
    write_atomic(&md, m.to_markdown().as_bytes())?;
    Ok(vec![csv, md])
}

pub fn eval(g: &Globals, a: EvalArgs) -> anyhow::Result<()> {
    let clock = RunClock::start();
    let mut cfg: config::EvalCmdConfig = config::load(g.config.as_deref())?;
    if a.checkpoint.is_some() {
        cfg.checkpoint = a.checkpoint.clone();
    }
    if a.data.is_some() {
        cfg.data = a.data.clone();
    }
    if let Some(d) = &a.domains {
        cfg.domains = config::parse_domains(d)?;
    }
    if a.base.is_some() {
        cfg.base = a.base;
    }
    if let Some(v) = a.brightness {
        cfg.adjustment.brightness = v;
    }
    if let Some(v) = a.contrast {
        cfg.adjustment.contrast = v;
    }
    let ckpt = required(cfg.checkpoint.clone(), "--checkpoint")?;
    let data = required(cfg.data.clone(), "--data")?;
    let model = load_checkpoint(&ckpt)?.model;
    let rows = read_manifest(&data)?;
    let mut available: Vec<FakeKind> = rows.iter().map(|r| r.domain).collect();
    available.sort();
    available.dedup();
    let domains = if cfg.domains.is_empty() { available.clone() } else { cfg.domains.clone() };
    for d in &domains {
        if !available.contains(d) {
            let names: Vec<&str> = available.iter().map(|k| k.name()).collect();
            return Err(TarError::config(format!("domain {d} not in dataset; known domains: {}", names.join(", "))).into());
        }
    }

    let dir = a.out.join(&a.run_id);
    let mut outputs = Vec::new();
    let mut cells = Vec::new();
    for &d in &domains {
        let test = load_split(&data, &rows, d, Split::Test)?;
        if let Some(s) = test.first() {
            check_size(&model, s.size())?;
        }
        let e = evaluate_adjusted(&model, &test, &cfg.adjustment)?;
        let path = dir.join("table").join(format!("records-{d}.csv"));
        write_atomic(&path, e.records_csv().as_bytes())?;
        outputs.push(path);
        cells.push(e.accuracy);
    }
    let name = a.name.clone().unwrap_or_else(|| {
        ckpt.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    });
    let mut m = AccuracyMatrix::new(domains.iter().map(|k| k.name().to_string()).collect());
    let base = cfg.base.and_then(|b| domains.iter().position(|k| *k == b));
    m.push_row(name, cells, base)?;
    outputs.extend(write_table(&dir, "report", &m)?);
    clock.finish("eval", &cfg, None, g.threads, outputs)?.write(&dir)?;
    print!("{}", m.to_markdown());
    Ok(())
}

pub fn cam(g: &Globals, a: CamArgs) -> anyhow::Result<()> {
    let clock = RunClock::start();
    let mut cfg: config::CamCmdConfig = config::load(g.config.as_deref())?;
    if a.checkpoint.is_some() {
        cfg.checkpoint = a.checkpoint.clone();
    }
    if a.image.is_some() {
        cfg.image = a.image.clone();
    }
    if let Some(l) = &a.layer {
        cfg.layer = l.clone();
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    let ckpt = required(cfg.checkpoint.clone(), "--checkpoint")?;
    let image = required(cfg.image.clone(), "--image")?;
    let model = load_checkpoint(&ckpt)?.model;
    let img = load_ppm(&image)?;
    let heat = cam_map(&model, &img, &cfg.layer)?;
    let over = overlay(&img, &heat, cfg.alpha)?;
    let stem = image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let dir = a.out.join(&a.run_id);
    let heat_path = dir.join("cam").join(format!("{stem}-heatmap.ppm"));
    let over_path = dir.join("cam").join(format!("{stem}-overlay.ppm"));
    save_ppm(&heat.to_image(), &heat_path)?;
    save_ppm(&over, &over_path)?;
    clock
        .finish("cam", &cfg, None, g.threads, vec![heat_path.clone(), over_path.clone()])?
        .write(&dir)?;
    println!("{}", heat_path.display());
    println!("{}", over_path.display());
    Ok(())
}

pub fn inspect(a: InspectArgs) -> anyhow::Result<()> {
    let path = &a.checkpoint;
    let bytes = std::fs::read(path).map_err(|e| TarError::io(path, e))?;
    let ck = decode_checkpoint(&bytes)?;
    let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    println!("file: {} ({} bytes)", path.display(), bytes.len());
    println!("format version: {VERSION}");
    println!("crc32: {crc:08x} ({})", if crc_ok(&bytes) { "ok" } else { "MISMATCH" });
    let c = &ck.model.config;
    println!(
        "arch: input {s}x{s}x{}, encoder {:?}, decoder {:?}, repeats {}, latent half {}, leaky slope {:e}, kernel {}",
        c.in_channels,
        c.encoder_channels,
        c.decoder_channels,
        c.repeats,
        c.latent_half,
        c.leaky_slope,
        c.kernel,
        s = c.input_size
    );
    print!("{}", ck.model.summary());
    match &ck.optimizer {
        Some(o) => println!("optimizer: {:?}, lr {:e}, {} steps", o.config.kind, o.config.lr, o.step),
        None => println!("optimizer: not stored"),
    }
    println!("tensors:");
    for (name, p) in ck.model.params.iter() {
        println!("  {name:<24} {:?}", p.value.shape());
    }
    Ok(())
}

//! One function per verb.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use mfccgram_core::alter::AlterationConfigs;
use mfccgram_core::audio::{load_wav, resample, write_wav, FeatureConfig, FeatureExtractor, FeatureKind, FeatureMatrix};
use mfccgram_core::augment::{build_noise_pool, inject_noise, noise_files, NoisePolicy, NoisePool};
use mfccgram_core::data::{cache_features, load_chunks, load_manifest, synth_corpus, synth_noise_clips, Manifest, Split, SynthConfig};
use mfccgram_core::model::{HeadInit, ModelConfig};
use mfccgram_core::rng::hash_str;
use mfccgram_core::tensor::{load_checkpoint, save_checkpoint};
use mfccgram_core::train::{self, comparison_table, FinetuneSet, LabeledFeatures, Profile, RunConfig, RunReport};
use mfccgram_core::ParamStore;

use crate::error::{CliError, Result};
use crate::{NoiseArgs, RunArgs};

pub const FINGERPRINT_FILE: &str = "fingerprint.txt";

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_fingerprint(dir: &Path, fingerprint: &str) -> Result<()> {
    write_file(&dir.join(FINGERPRINT_FILE), &format!("{fingerprint}\n"))
}

/// Fingerprint of verb settings that have no run config of their own.
fn text_fingerprint(canonical: &str) -> String {
    format!("{:016x}", hash_str(canonical))
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::for_profile(args.profile.parse::<Profile>()?),
    };
    if let Some(e) = args.epochs {
        cfg.finetune_epochs = e;
        cfg.pretrain_epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    cfg.noise.seed = args.seed;
    Ok(cfg)
}

/// Applies the noise flags to `policy` and loads the pool. Without a noise
/// directory injection is switched off.
fn noise_setup(args: &NoiseArgs, policy: &mut NoisePolicy, sample_rate: u32) -> Result<NoisePool> {
    let Some(dir) = &args.noise_dir else {
        if args.patient_count.is_some_and(|c| c > 0) || args.control_count.is_some_and(|c| c > 0) {
            return Err(CliError::config("noise counts given without --noise-dir"));
        }
        policy.patient_count = 0;
        policy.control_count = 0;
        return Ok(NoisePool::default());
    };
    if let Some(c) = args.patient_count {
        policy.patient_count = c;
    }
    if let Some(c) = args.control_count {
        policy.control_count = c;
    }
    let files = noise_files(dir)?;
    if files.is_empty() && policy.is_active() {
        return Err(CliError::config(format!("{}: no .wav files", dir.display())));
    }
    let pool = build_noise_pool(&files, sample_rate, &NoisePolicy::none())?;
    match args.max_amplitude.as_deref() {
        None => {}
        Some("auto") => policy.max_amplitude = pool.median_peak().ok_or_else(|| CliError::config("max_amplitude auto needs noise files"))?,
        Some(v) => policy.max_amplitude = v.parse().map_err(|_| CliError::config(format!("bad max_amplitude {v:?}")))?,
    }
    policy.validate()?;
    Ok(pool)
}

pub fn synth_data(n: usize, seed: u64, out: &Path, noise_clips: usize, noise_seconds: f64) -> Result<()> {
    if n == 0 {
        return Err(CliError::config("--n must be at least 1"));
    }
    let cfg = SynthConfig::new(n, seed);
    let manifest = synth_corpus(&cfg, out)?;
    synth_noise_clips(&out.join("noise"), noise_clips, noise_seconds, cfg.sample_rate, seed)?;
    write_fingerprint(out, &text_fingerprint(&format!("synth-data;{cfg:?};noise_clips={noise_clips};noise_seconds={noise_seconds:e}")))?;
    let [tr, va, te] = manifest.split_sizes();
    println!("wrote {} clips ({tr} train, {va} validation, {te} test) and {noise_clips} noise clips to {}", manifest.records.len(), out.display());
    Ok(())
}

pub fn featurize(manifest_path: &Path, out: &Path, kind: &str, args: &RunArgs) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let cfg = run_config(args)?;
    let features = FeatureConfig { kind: kind.parse::<FeatureKind>()?, ..cfg.features };
    let index = cache_features(&manifest, &features, &cfg.window, out)?;
    write_fingerprint(out, &format!("{:016x}", index.fingerprint))?;
    println!("{} chunks in {} ({})", index.entries.len(), out.display(), if index.rebuilt { "rebuilt" } else { "up to date" });
    Ok(())
}

pub fn augment(manifest_path: &Path, out: &Path, seed: u64, noise: &NoiseArgs) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    if noise.noise_dir.is_none() {
        return Err(CliError::config("augment needs --noise-dir"));
    }
    let mut policy = NoisePolicy { seed, ..NoisePolicy::default() };
    let pool = noise_setup(noise, &mut policy, manifest.sample_rate)?;
    create_dir(out)?;
    let mut augmented = Manifest { base_dir: out.to_path_buf(), ..manifest.clone() };
    augmented.provenance.push(format!(
        "augmented from {}: patient_count={} control_count={} max_amplitude={} seed={seed}",
        manifest_path.display(),
        policy.patient_count,
        policy.control_count,
        policy.max_amplitude
    ));
    for r in &manifest.records {
        let clip = resample(&load_wav(&manifest.resolve(r))?, manifest.sample_rate)?;
        let noisy = inject_noise(&clip, &pool, policy.count_for(r.label), policy.max_amplitude, &mut policy.evaluation_rng(&r.id()))?;
        let dest = out.join(&r.path);
        if let Some(parent) = dest.parent() {
            create_dir(parent)?;
        }
        write_wav(&dest, &noisy)?;
    }
    augmented.save(&out.join("manifest.tsv"))?;
    write_fingerprint(out, &text_fingerprint(&format!("augment;{};{policy:?}", manifest.to_text())))?;
    println!("wrote {} augmented clips to {}", manifest.records.len(), out.display());
    Ok(())
}

/// Cached features of every chunk of `split`, in index order, labelled
/// from the manifest.
fn cached_split(manifest: &Manifest, cache: &Path, cfg: &RunConfig, split: Split) -> Result<Vec<LabeledFeatures>> {
    let index = cache_features(manifest, &cfg.features, &cfg.window, cache)?;
    let labels: BTreeMap<String, usize> = manifest.split(split).map(|r| (r.id(), r.label.index())).collect();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for e in &index.entries {
        let k = seen.entry(&e.record).or_default();
        let chunk = *k;
        *k += 1;
        if let Some(&label) = labels.get(&e.record) {
            out.push(LabeledFeatures { id: format!("{}#{chunk}", e.record), record: e.record.clone(), label, feat: index.load_features(e)? });
        }
    }
    Ok(out)
}

fn corpus_features(manifest: &Manifest, cache: Option<&Path>, cfg: &RunConfig) -> Result<Vec<FeatureMatrix>> {
    if let Some(dir) = cache {
        let index = cache_features(manifest, &cfg.features, &cfg.window, dir)?;
        return index.entries.iter().map(|e| Ok(index.load_features(e)?)).collect();
    }
    let extractor = FeatureExtractor::new(&FeatureConfig { sample_rate: manifest.sample_rate, ..cfg.features.clone() })?;
    let mut out = Vec::new();
    for &split in Split::ALL {
        for c in load_chunks(manifest, split, &cfg.window)? {
            out.push(extractor.extract(&c.audio)?);
        }
    }
    Ok(out)
}

fn parse_alterations(list: &str) -> Result<AlterationConfigs> {
    let mut cfg = AlterationConfigs { time: None, channel: None, noise: None };
    let all = AlterationConfigs::all();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match name {
            "time" => cfg.time = all.time.clone(),
            "channel" => cfg.channel = all.channel.clone(),
            "noise" => cfg.noise = all.noise.clone(),
            other => return Err(CliError::config(format!("unknown alteration {other:?} (expected time, channel or noise)"))),
        }
    }
    Ok(cfg)
}

fn save_run_files(out: &Path, cfg: &RunConfig) -> Result<()> {
    create_dir(out)?;
    cfg.save(&out.join("config.toml"))?;
    cfg.model.save(&out.join("model.toml"))?;
    Ok(())
}

pub fn pretrain(manifest_path: &Path, cache: Option<&Path>, out: &Path, alterations: Option<&str>, args: &RunArgs) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let mut cfg = run_config(args)?;
    if let Some(list) = alterations {
        cfg.alterations = parse_alterations(list)?;
    }
    cfg.seeds = vec![args.seed];
    cfg.validate()?;
    let corpus = corpus_features(&manifest, cache, &cfg)?;
    let outcome = train::pretrain(None, &corpus, &cfg, args.seed)?;
    save_run_files(out, &cfg)?;
    save_checkpoint(&out.join("encoder.ckpt"), &outcome.params)?;
    let mut losses = String::from("epoch\tloss\n");
    for (e, l) in outcome.epoch_losses.iter().enumerate() {
        let _ = writeln!(losses, "{}\t{l}", e + 1);
    }
    write_file(&out.join("losses.tsv"), &losses)?;
    write_fingerprint(out, &cfg.fingerprint())?;
    println!("pretrained on {} chunks for {} epochs ({} steps); final loss {:.4}", corpus.len(), cfg.pretrain_epochs, outcome.steps, outcome.epoch_losses.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn load_init(path: &Path, model: &ModelConfig) -> Result<ParamStore<f32>> {
    let params = load_checkpoint::<f32>(path)?;
    for (name, shape) in model.param_shapes() {
        match params.get(&name) {
            Some(t) if t.shape() == shape.as_slice() => {}
            Some(t) => return Err(CliError::config(format!("{}: {name} has shape {:?}, model expects {shape:?}", path.display(), t.shape()))),
            None => return Err(CliError::config(format!("{}: missing tensor {name}", path.display()))),
        }
    }
    Ok(params)
}

pub fn finetune(manifest_path: &Path, cache: Option<&Path>, init: Option<&Path>, seeds: Option<usize>, out: &Path, args: &RunArgs, noise: &NoiseArgs) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let mut cfg = run_config(args)?;
    if let Some(n) = seeds {
        cfg.seeds = (args.seed..args.seed + n as u64).collect();
    } else {
        let n = cfg.seeds.len() as u64;
        cfg.seeds = (args.seed..args.seed + n).collect();
    }
    if init.is_some() {
        cfg.head_init = HeadInit::Xavier;
    }
    let pool = noise_setup(noise, &mut cfg.noise, manifest.sample_rate)?;
    cfg.validate()?;
    let init_params = init.map(|p| load_init(p, &cfg.model)).transpose()?;

    let set = match cache {
        Some(dir) if cfg.noise.is_active() => {
            return Err(CliError::config(format!("{}: cached features cannot carry per-epoch noise; drop --cache or --noise-dir", dir.display())))
        }
        Some(dir) => FinetuneSet::from_features(
            cached_split(&manifest, dir, &cfg, Split::Train)?,
            cached_split(&manifest, dir, &cfg, Split::Validation)?,
            cached_split(&manifest, dir, &cfg, Split::Test)?,
        ),
        None => FinetuneSet::from_manifest(&manifest, pool, &cfg)?,
    };
    let outcome = train::finetune(init_params.as_ref(), &set, &cfg)?;
    save_run_files(out, &cfg)?;
    for (seed, params) in cfg.seeds.iter().zip(&outcome.params) {
        save_checkpoint(&out.join(format!("seed-{seed}.ckpt")), params)?;
    }
    outcome.report.write(out)?;
    print!("{}", outcome.report.summary());
    Ok(())
}

pub fn evaluate(
    checkpoint: &Path,
    manifest_path: &Path,
    model: Option<&Path>,
    split: &str,
    out: Option<&Path>,
    args: &RunArgs,
    noise: &NoiseArgs,
) -> Result<()> {
    let split: Split = split.parse().map_err(CliError::config)?;
    let mut cfg = run_config(args)?;
    let model_path = model.map(Path::to_path_buf).or_else(|| checkpoint.parent().map(|d| d.join("model.toml"))).filter(|p| p.is_file());
    if let Some(p) = model_path {
        cfg.model = ModelConfig::load(&p)?;
    }
    let params = load_init(checkpoint, &cfg.model)?;
    let manifest = load_manifest(manifest_path)?;
    let pool = noise_setup(noise, &mut cfg.noise, manifest.sample_rate)?;
    cfg.validate()?;
    let chunks = load_chunks(&manifest, split, &cfg.window)?;
    if chunks.is_empty() {
        return Err(CliError::new("data", format!("{}: split {split} is empty", manifest_path.display())));
    }
    let mut table = String::from("split\tnoise\tloss\taccuracy\tfile_accuracy\tchunks\n");
    let mut runs = vec![false];
    if cfg.noise.is_active() {
        runs.push(true);
    }
    for with_noise in runs {
        let r = train::evaluate_chunks(&params, &cfg, &chunks, &pool, with_noise)?;
        let _ = writeln!(table, "{split}\t{}\t{}\t{}\t{}\t{}", if with_noise { "with" } else { "without" }, r.loss, r.accuracy, r.file_accuracy, chunks.len());
    }
    print!("{table}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join("eval.tsv"), &table)?;
        write_fingerprint(dir, &cfg.fingerprint())?;
    }
    Ok(())
}

pub fn report(runs: &[std::path::PathBuf], out: Option<&Path>) -> Result<()> {
    let mut rows = Vec::with_capacity(runs.len());
    for dir in runs {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string());
        if rows.iter().any(|(n, _): &(String, RunReport)| *n == name) {
            return Err(CliError::config(format!("two runs are named {name:?}")));
        }
        rows.push((name, RunReport::read(dir)?));
    }
    let table = format!("# std=sample\n{}", comparison_table(&rows));
    print!("{table}");
    if let Some(dir) = out {
        create_dir(dir)?;
        let mut records = String::from("run\tseed\tacc_with_noise\tacc_without_noise\n");
        let mut sorted: Vec<&(String, RunReport)> = rows.iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        for (name, r) in &sorted {
            for s in &r.seeds {
                let _ = writeln!(records, "{name}\t{}\t{}\t{}", s.seed, s.acc_with_noise, s.acc_without_noise);
            }
        }
        write_file(&dir.join("table.tsv"), &table)?;
        write_file(&dir.join("records.tsv"), &records)?;
        let joined: Vec<String> = sorted.iter().map(|(n, r)| format!("{n}={}", r.fingerprint)).collect();
        write_fingerprint(dir, &text_fingerprint(&joined.join(";")))?;
    }
    Ok(())
}

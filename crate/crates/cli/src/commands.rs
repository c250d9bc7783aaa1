use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use dualfuse::checkpoint::{load_checkpoint, save_checkpoint, TrainingInfo};
use dualfuse::dsp::{featurize as featurize_wave, read_wav, MelConfig};
use dualfuse::model::{Label, Model, ModelConfig, Variant};
use dualfuse::text::{load_vocab, tokenize as tokenize_text, AnyTokenizer, TokenizerKind, Vocabulary};
use dualfuse::train::{
    self, dataset_stats, evaluate as evaluate_set, load_manifest, prepare_synthetic, synth_task,
    synth_vocabulary, EpochRecord, Example, LrSchedule, ManifestEntry, MetricsReport, Split,
    TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::{self, FileConfig, Preset, TokenizerChoice};
use crate::{
    CliError, EvaluateArgs, FeaturizeArgs, LrDumpArgs, PredictArgs, StatsArgs, TokenizeArgs,
    TrainArgs,
};

pub const CHECKPOINT_FILE: &str = "model.dfck";
pub const METRICS_FILE: &str = "metrics.json";
pub const RUN_FILE: &str = "run.json";
const DEFAULT_OUT: &str = "dualfuse-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub metrics: MetricsReport,
    pub mean_loss: f64,
}

/// Contents of `metrics.json` after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: Variant,
    pub seed: u64,
    pub best_epoch: usize,
    pub steps: u64,
    pub history: Vec<EpochRecord>,
    /// Best model scored on every split present in the data.
    pub splits: BTreeMap<Split, SplitMetrics>,
}

/// Output of `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub variant: Variant,
    pub splits: BTreeMap<Split, SplitMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutput {
    pub label: Label,
    pub probabilities: BTreeMap<Label, f64>,
}

/// Resolved settings written to `run.json` next to the checkpoint.
#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    variant: Variant,
    source: String,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
}

fn with_path(path: &Path, e: impl std::fmt::Display) -> String {
    format!("{}: {e}", path.display())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::artifact(with_path(path, e)))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)
        .map_err(|e| CliError::artifact(with_path(path, e)))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize")
}

fn wav_inputs(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(CliError::artifact(with_path(input, "no such file or directory")));
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(input).map_err(|e| CliError::artifact(with_path(input, e)))? {
        let path = entry.map_err(|e| CliError::artifact(with_path(input, e)))?.path();
        let is_wav = path.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav"));
        if is_wav && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn featurize_file(path: &Path, out_dir: &Path, cfg: &MelConfig) -> dualfuse::Result<(PathBuf, usize, usize)> {
    let spec = featurize_wave(&read_wav(path)?, cfg)?;
    let stem = path.file_stem().unwrap_or_default();
    let dest = out_dir.join(stem).with_extension("lmel");
    spec.write_to(BufWriter::new(File::create(&dest)?))?;
    Ok((dest, spec.n_mels(), spec.n_frames()))
}

pub fn featurize(a: &FeaturizeArgs) -> Result<(), CliError> {
    let cfg = MelConfig::default().with_chunk_seconds(a.chunk_seconds);
    cfg.validate()?;
    let inputs = wav_inputs(&a.input)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::artifact(with_path(&a.out, e)))?;
    let mut failed = 0;
    for path in &inputs {
        match featurize_file(path, &a.out, &cfg) {
            Ok((dest, mels, frames)) => {
                println!("{} -> {} [{mels}x{frames}]", path.display(), dest.display())
            }
            Err(e) => {
                failed += 1;
                eprintln!("failed: {}", with_path(path, e));
            }
        }
    }
    println!("{} files processed, {failed} failed", inputs.len() - failed);
    if failed > 0 {
        return Err(CliError::artifact(format!("{failed} of {} inputs failed", inputs.len())));
    }
    Ok(())
}

fn build_tokenizer(vocab: Option<&Path>, kind: TokenizerChoice) -> Result<AnyTokenizer, CliError> {
    let vocab = match vocab {
        Some(p) => load_vocab(p).map_err(|e| CliError::artifact(with_path(p, e)))?,
        None => Vocabulary::default(),
    };
    Ok(AnyTokenizer::new(kind.into(), vocab)?)
}

pub fn tokenize(a: &TokenizeArgs) -> Result<(), CliError> {
    if a.max_length < 2 {
        return Err(CliError::usage("--max-length must be at least 2"));
    }
    let tok = build_tokenizer(a.tok.vocab.as_deref(), a.tok.tokenizer.unwrap_or(TokenizerChoice::Hashed))?;
    let seq = tokenize_text(&a.text, &tok, a.max_length);
    let mask: Vec<u8> = seq.valid().into_iter().map(u8::from).collect();
    println!("{}", serde_json::json!({ "ids": seq.ids, "mask": mask }));
    Ok(())
}

fn apply_model_flags(cfg: &mut ModelConfig, a: &TrainArgs) {
    if let Some(d) = a.d_model {
        cfg.transformer.d_model = d;
        cfg.speech.d_model = d;
    }
    if let Some(v) = a.heads {
        cfg.transformer.n_heads = v;
    }
    if let Some(v) = a.layers {
        cfg.transformer.n_layers = v;
    }
    if let Some(v) = a.ff_dim {
        cfg.transformer.ff_dim = v;
    }
    if let Some(v) = a.dropout {
        cfg.transformer.dropout = v;
    }
    if let Some(v) = a.lstm_units {
        cfg.lstm_units = v;
    }
    if let Some(v) = a.lstm_dropout {
        cfg.lstm_dropout = v;
    }
    if let Some(v) = a.fusion_dim {
        cfg.fusion_dim = v;
    }
    if let Some(v) = a.max_length {
        cfg.max_length = v;
    }
    if let Some(v) = a.chunk_seconds {
        cfg.mel = cfg.mel.clone().with_chunk_seconds(v);
    }
}

fn apply_train_flags(tc: &mut TrainConfig, a: &TrainArgs, file: &FileConfig) -> Result<(), CliError> {
    if let Some(v) = a.seed.or(file.seed) {
        tc.seed = v;
    }
    if let Some(v) = a.schedule.or(file.schedule()?) {
        tc.schedule.mode = v;
    }
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.warmup_steps {
        tc.schedule.warmup_steps = v;
    }
    if let Some(v) = a.schedule_d_model {
        tc.schedule.d_model = v;
    }
    if let Some(v) = a.lr_cap {
        tc.schedule.cap = v;
    }
    if let Some(v) = a.beta1 {
        tc.optimizer.beta1 = v;
    }
    if let Some(v) = a.beta2 {
        tc.optimizer.beta2 = v;
    }
    if let Some(v) = a.adam_eps {
        tc.optimizer.eps = v;
    }
    if let Some(v) = a.weight_decay {
        tc.optimizer.weight_decay = v;
    }
    if let Some(v) = a.clip_norm {
        tc.clip_norm = Some(v);
    }
    if a.no_clip {
        tc.clip_norm = None;
    }
    if a.no_class_weights {
        tc.class_weighting = false;
    }
    if tc.batch_size == 0 {
        return Err(CliError::usage("batch size must be positive"));
    }
    if tc.clip_norm.is_some_and(|c| c.is_nan() || c <= 0.0) {
        return Err(CliError::usage("clip norm must be positive"));
    }
    tc.optimizer.validate()?;
    tc.schedule.rate(1)?;
    Ok(())
}

struct Dataset {
    source: String,
    tokenizer: AnyTokenizer,
    splits: BTreeMap<Split, Vec<Example>>,
}

fn manifest_base(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn prepare_entries(
    entries: &[ManifestEntry],
    base: &Path,
    cfg: &ModelConfig,
    tokenizer: &AnyTokenizer,
) -> Result<BTreeMap<Split, Vec<Example>>, CliError> {
    let mut splits: BTreeMap<Split, Vec<Example>> = BTreeMap::new();
    for entry in entries {
        let path = entry.resolve_audio(base);
        let wave = read_wav(&path).map_err(|e| CliError::artifact(with_path(&path, e)))?;
        let ex = Example::prepare(&wave, &entry.transcript, entry.label, cfg, tokenizer)
            .map_err(|e| CliError::artifact(with_path(&path, e)))?;
        splits.entry(entry.split).or_default().push(ex);
    }
    Ok(splits)
}

fn load_dataset(a: &TrainArgs, file: &FileConfig, cfg: &ModelConfig, seed: u64) -> Result<Dataset, CliError> {
    if let Some(n) = a.synthetic {
        let tokenizer = AnyTokenizer::new(TokenizerKind::Word, synth_vocabulary())?;
        let data = prepare_synthetic(&synth_task(n, seed)?, cfg, &tokenizer)?;
        let splits = BTreeMap::from([(Split::Train, data)]);
        return Ok(Dataset { source: format!("synthetic:{n}"), tokenizer, splits });
    }
    let manifest = a.manifest.as_deref().expect("clap requires --manifest without --synthetic");
    let entries = load_manifest(manifest).map_err(|e| CliError::artifact(with_path(manifest, e)))?;
    let kind = a.tok.tokenizer.or(file.tokenizer).unwrap_or(TokenizerChoice::Hashed);
    let vocab = a.tok.vocab.as_deref().or(file.vocab.as_deref());
    let tokenizer = build_tokenizer(vocab, kind)?;
    let splits = prepare_entries(&entries, &manifest_base(manifest), cfg, &tokenizer)?;
    if splits.get(&Split::Train).is_none_or(Vec::is_empty) {
        return Err(CliError::artifact(with_path(manifest, "no train entries")));
    }
    Ok(Dataset { source: manifest.display().to_string(), tokenizer, splits })
}

fn score_splits(
    model: &Model<f32>,
    splits: &BTreeMap<Split, Vec<Example>>,
) -> Result<BTreeMap<Split, SplitMetrics>, CliError> {
    let mut out = BTreeMap::new();
    for (&split, examples) in splits {
        if examples.is_empty() {
            continue;
        }
        let ev = evaluate_set(model, examples)?;
        out.insert(split, SplitMetrics { metrics: ev.report, mean_loss: ev.mean_loss });
    }
    Ok(out)
}

fn out_dir(a: &TrainArgs, file: &FileConfig) -> PathBuf {
    a.out
        .clone()
        .or_else(|| file.out.clone())
        .or_else(|| std::env::var_os("DUALFUSE_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let file = match &a.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let default_preset = if a.synthetic.is_some() { Preset::Toy } else { Preset::Full };
    let preset = a.preset.or(file.preset).unwrap_or(default_preset);
    let mut model_cfg = config::model_config(preset, &file)?;
    apply_model_flags(&mut model_cfg, a);
    model_cfg.validate()?;
    let mut tc = config::train_config(&file)?;
    apply_train_flags(&mut tc, a, &file)?;
    let variant = a.variant.or(file.variant()?).unwrap_or(Variant::Attentive);
    let out = out_dir(a, &file);

    let data = load_dataset(a, &file, &model_cfg, tc.seed)?;
    let train_set = &data.splits[&Split::Train];
    let dev_set = data.splits.get(&Split::Dev).filter(|d| !d.is_empty());
    eprintln!(
        "training {variant} on {} ({} train, {} dev), {} epochs",
        data.source,
        train_set.len(),
        dev_set.map_or(0, Vec::len),
        tc.epochs
    );

    let model = Model::<f32>::new(model_cfg.clone(), variant, tc.seed)?;
    let outcome = train::train(model, train_set, dev_set.map(Vec::as_slice), &tc, |r| {
        let loss = r.train_loss.map_or("-".to_string(), |l| format!("{l:.4}"));
        eprintln!(
            "epoch {:>3}  step {:>6}  train loss {loss}  {} macro-F1 {:.4}  loss {:.4}",
            r.epoch, r.steps, r.selection_split, r.selection.macro_f1, r.selection_loss
        );
    })?;

    fs::create_dir_all(&out).map_err(|e| CliError::artifact(with_path(&out, e)))?;
    let best = outcome.best_record();
    let info = TrainingInfo { seed: tc.seed, epoch: outcome.best_epoch, step: best.steps };
    let ckpt = out.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &outcome.best, &data.tokenizer, info)
        .map_err(|e| CliError::artifact(with_path(&ckpt, e)))?;

    let report = TrainReport {
        variant,
        seed: tc.seed,
        best_epoch: outcome.best_epoch,
        steps: outcome.steps,
        splits: score_splits(&outcome.best, &data.splits)?,
        history: outcome.history,
    };
    write_json(&out.join(METRICS_FILE), &report)?;
    let run = RunRecord { variant, source: data.source, model: &model_cfg, train: &tc };
    write_json(&out.join(RUN_FILE), &run)?;

    for (split, m) in &report.splits {
        println!(
            "{split}: macro-F1 {:.4}  accuracy {:.4}  loss {:.4}  (n={})",
            m.metrics.macro_f1, m.metrics.accuracy, m.mean_loss, m.metrics.n_samples
        );
    }
    println!("best epoch {} of {}; wrote {}", report.best_epoch, tc.epochs, out.display());
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let ck = load_checkpoint(&a.checkpoint, a.variant)?;
    let entries = load_manifest(&a.manifest).map_err(|e| CliError::artifact(with_path(&a.manifest, e)))?;
    if entries.is_empty() {
        return Err(CliError::artifact(with_path(&a.manifest, "manifest is empty")));
    }
    let splits = prepare_entries(&entries, &manifest_base(&a.manifest), ck.model.config(), &ck.tokenizer)?;
    let report = EvaluationReport { variant: ck.model.variant(), splits: score_splits(&ck.model, &splits)? };
    match &a.out {
        Some(p) => write_json(p, &report),
        None => {
            println!("{}", to_json(&report));
            Ok(())
        }
    }
}

pub fn predict(a: &PredictArgs) -> Result<(), CliError> {
    let ck = load_checkpoint(&a.checkpoint, a.variant)?;
    let wave = read_wav(&a.audio).map_err(|e| CliError::artifact(with_path(&a.audio, e)))?;
    let tokens = tokenize_text(&a.text, &ck.tokenizer, ck.model.config().max_length);
    let pred = ck.model.predict(&wave, &tokens)?;
    let probs = pred.probs_f64();
    let out = PredictionOutput {
        label: pred.label,
        probabilities: Label::ALL.into_iter().map(|l| (l, probs[l.index()])).collect(),
    };
    println!("{}", serde_json::to_string(&out).expect("prediction serializes"));
    Ok(())
}

pub fn lr_dump(a: &LrDumpArgs) -> Result<(), CliError> {
    if a.steps == 0 {
        return Err(CliError::usage("--steps must be at least 1"));
    }
    let schedule =
        LrSchedule { warmup_steps: a.warmup_steps, d_model: a.d_model, cap: a.lr_cap, mode: a.schedule };
    println!("step,rate");
    for cs in 1..=a.steps {
        println!("{cs},{:e}", schedule.rate(cs)?);
    }
    Ok(())
}

pub fn stats(a: &StatsArgs) -> Result<(), CliError> {
    let entries = load_manifest(&a.manifest).map_err(|e| CliError::artifact(with_path(&a.manifest, e)))?;
    print!("{}", dataset_stats(&entries).render_table());
    Ok(())
}

//! Subcommand implementations. Each returns the text to print on success.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use slu_core::data::synth::synthetic_vocabulary;
use slu_core::data::{load_manifest, prepare, synth_generate, synth_transcripts, ManifestEntry, SyntheticTaskSpec};
use slu_core::features::StackOrder;
use slu_core::models::{pretrain_text_encoder, TextEncoder, TextPretrainOptions, EOS};
use slu_core::train::train_with;
use slu_core::transfer::{
    attach_text_encoder, model_checkpoint, restore_model, text_encoder_checkpoint, transfer_encoder,
};
use slu_core::{
    evaluate, AdamConfig, Checkpoint, Error, FeatureConfig, IntentLabelSet, ModelConfig, Objective, SluModel,
    TrainOptions, TransferPolicy, Utterance, Vocabulary,
};

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::metrics::{eval_csv, write_eval, write_metrics, write_text_metrics, EvalRow, MetricsTable, TextMetricsRow};
use crate::plot::{render_svg, Series};
use crate::run::{resolve_run_dir, RunDir};
use crate::{EvalArgs, PlotArgs, SynthArgs, TextArgs, TrainArgs};

pub const MODEL_FILE: &str = "model.ckpt";
pub const TEXT_ENCODER_FILE: &str = "text_encoder.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_ECHO_FILE: &str = "config.resolved";

/// The four training recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainKind {
    PretrainAsr,
    Slu,
    MultiTask,
    Fusion,
}

impl TrainKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::PretrainAsr => "pretrain-asr",
            Self::Slu => "train-slu",
            Self::MultiTask => "train-mt",
            Self::Fusion => "train-fusion",
        }
    }

    /// Reject flags that have no meaning for this recipe.
    fn check_flags(self, a: &TrainArgs) -> CliResult<()> {
        let reject = |flag: &str| Err(CliError::Usage(format!("{} does not take {flag}", self.name())));
        if a.lambda.is_some() && matches!(self, Self::PretrainAsr | Self::Slu) {
            return reject("--lambda");
        }
        if a.init_encoder.is_some() && self == Self::PretrainAsr {
            return reject("--init-encoder");
        }
        if a.policy.is_some() && self == Self::PretrainAsr {
            return reject("--policy");
        }
        if a.text_encoder.is_some() && self != Self::Fusion {
            return reject("--text-encoder");
        }
        Ok(())
    }
}

fn usage(msg: &str) -> CliError {
    CliError::Usage(msg.into())
}

fn config_err(msg: String) -> CliError {
    Error::Config(msg).into()
}

fn train_settings(a: &TrainArgs) -> CliResult<Config> {
    let mut c = match &a.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for s in &a.set {
        c.set_pair(s)?;
    }
    let path_flags = [
        ("data.train", &a.train),
        ("data.valid", &a.valid),
        ("out", &a.out),
        ("metrics_out", &a.metrics_out),
        ("init_encoder", &a.init_encoder),
        ("text_encoder", &a.text_encoder),
    ];
    for (key, v) in path_flags {
        if let Some(p) = v {
            c.set(key, p.display().to_string())?;
        }
    }
    if let Some(s) = a.seed {
        c.set("seed", s.to_string())?;
    }
    if let Some(l) = a.lambda {
        c.set("lambda", l.to_string())?;
    }
    if let Some(p) = &a.policy {
        c.set("policy", p.clone())?;
    }
    Ok(c)
}

/// Feature front-end from `features.*` keys (defaults otherwise).
pub fn feature_config(pairs: &BTreeMap<String, String>) -> CliResult<FeatureConfig> {
    let mut f = FeatureConfig::default();
    for (k, v) in pairs {
        let bad = || config_err(format!("bad value `{v}` for `features.{k}`"));
        let uint = || v.parse::<usize>().map_err(|_| bad());
        let float = || v.parse::<f64>().map_err(|_| bad());
        match k.as_str() {
            "sample_rate" => f.sample_rate = v.parse().map_err(|_| bad())?,
            "n_mels" => f.n_mels = uint()?,
            "frame_length_ms" => f.frame_length_ms = float()?,
            "frame_shift_ms" => f.frame_shift_ms = float()?,
            "fft_size" => f.fft_size = uint()?,
            "downsample_factor" => f.downsample_factor = uint()?,
            "stack_size" => f.stack_size = uint()?,
            "stack_order" => {
                f.stack_order = match v.as_str() {
                    "downsample-then-stack" => StackOrder::DownsampleThenStack,
                    "stack-then-downsample" => StackOrder::StackThenDownsample,
                    _ => return Err(bad()),
                }
            }
            _ => return Err(config_err(format!("unknown key `features.{k}`"))),
        }
    }
    f.validate()?;
    Ok(f)
}

pub fn feature_pairs(f: &FeatureConfig) -> BTreeMap<String, String> {
    let order = match f.stack_order {
        StackOrder::DownsampleThenStack => "downsample-then-stack",
        StackOrder::StackThenDownsample => "stack-then-downsample",
    };
    [
        ("sample_rate", f.sample_rate.to_string()),
        ("n_mels", f.n_mels.to_string()),
        ("frame_length_ms", f.frame_length_ms.to_string()),
        ("frame_shift_ms", f.frame_shift_ms.to_string()),
        ("fft_size", f.fft_size.to_string()),
        ("downsample_factor", f.downsample_factor.to_string()),
        ("stack_size", f.stack_size.to_string()),
        ("stack_order", order.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (format!("features.{k}"), v))
    .collect()
}

/// Optimizer and schedule from `train.*` keys.
pub fn train_options(c: &Config, objective: Objective, seed: u64) -> CliResult<TrainOptions> {
    let d = TrainOptions::default();
    let a = AdamConfig::default();
    let opts = TrainOptions {
        epochs: c.parse_or("train.epochs", d.epochs)?,
        batch_size: c.parse_or("train.batch_size", d.batch_size)?,
        seed,
        adam: AdamConfig {
            lr: c.parse_or("train.lr", a.lr)?,
            beta1: c.parse_or("train.beta1", a.beta1)?,
            beta2: c.parse_or("train.beta2", a.beta2)?,
            eps: c.parse_or("train.eps", a.eps)?,
        },
        objective,
        patience: c.parse("train.patience")?,
        record_time: c.parse_or("train.record_time", d.record_time)?,
        eval_train: c.parse_or("train.eval_train", d.eval_train)?,
    };
    let allowed = [
        "epochs",
        "batch_size",
        "lr",
        "beta1",
        "beta2",
        "eps",
        "patience",
        "record_time",
        "eval_train",
    ];
    if let Some(k) = c.section("train.").keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(config_err(format!("unknown key `train.{k}`")));
    }
    if opts.batch_size == 0 {
        return Err(config_err("train.batch_size must be positive".into()));
    }
    Ok(opts)
}

fn read_json_list(path: &Path) -> CliResult<String> {
    Ok(std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn load_vocab(c: &Config, texts: &[&str]) -> CliResult<Vocabulary> {
    match c.path("data.vocab") {
        Some(p) => Ok(Vocabulary::from_json(&read_json_list(&p)?)?),
        None => Ok(Vocabulary::from_texts(texts.iter().copied())?),
    }
}

/// Both manifests, the label sets and featurized utterances.
struct Dataset {
    vocab: Vocabulary,
    intents: IntentLabelSet,
    train: Vec<Utterance>,
    valid: Vec<Utterance>,
}

fn load_dataset(c: &Config, feats: &FeatureConfig) -> CliResult<Dataset> {
    let train_path = c
        .path("data.train")
        .ok_or_else(|| config_err("no training manifest (--train or data.train)".into()))?;
    let given_intents = match c.path("data.intents") {
        Some(p) => Some(IntentLabelSet::from_json(&read_json_list(&p)?)?),
        None => None,
    };
    let train_entries = load_manifest(&train_path, given_intents.as_ref())?;
    if train_entries.is_empty() {
        return Err(Error::Input(format!("{} has no utterances", train_path.display())).into());
    }
    let valid_entries = match c.path("data.valid") {
        Some(p) => load_manifest(&p, given_intents.as_ref())?,
        None => Vec::new(),
    };
    let all: Vec<&ManifestEntry> = train_entries.iter().chain(&valid_entries).collect();
    let intents = match given_intents {
        Some(i) => i,
        None => {
            let mut names: Vec<&str> = all.iter().map(|e| e.intent.as_str()).collect();
            names.sort_unstable();
            names.dedup();
            IntentLabelSet::from_names(names)?
        }
    };
    let texts: Vec<&str> = all.iter().map(|e| e.text.as_str()).collect();
    let vocab = load_vocab(c, &texts)?;
    let train = prepare(&train_entries, &vocab, &intents, feats)?;
    let valid = prepare(&valid_entries, &vocab, &intents, feats)?;
    Ok(Dataset {
        vocab,
        intents,
        train,
        valid,
    })
}

/// `model.*` keys on the desk preset, with the data-determined sizes
/// filled in. Explicit sizes that disagree with the data are an error.
fn model_config(
    c: &Config,
    feats: &FeatureConfig,
    vocab: &Vocabulary,
    intents: &IntentLabelSet,
) -> CliResult<ModelConfig> {
    let pairs: BTreeMap<String, String> = c
        .iter()
        .filter(|(k, _)| k.starts_with("model."))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let mut m = ModelConfig::from_pairs(&pairs, ModelConfig::desk())?;
    let implied = [
        ("model.input_dim", feats.output_dim()),
        ("model.vocab_size", vocab.len()),
        ("model.intent_count", intents.len()),
    ];
    for (key, want) in implied {
        if let Some(v) = pairs.get(key) {
            if v.parse::<usize>().ok() != Some(want) {
                return Err(config_err(format!("{key} = {v} but the data implies {want}")));
            }
        }
    }
    m.input_dim = feats.output_dim();
    m.vocab_size = vocab.len();
    m.intent_count = intents.len();
    m.validate()?;
    Ok(m)
}

fn check_paths_exist(c: &Config) -> CliResult<()> {
    for key in [
        "data.train",
        "data.valid",
        "data.vocab",
        "data.intents",
        "init_encoder",
        "text_encoder",
        "corpus",
    ] {
        if let Some(p) = c.path(key) {
            if !p.exists() {
                return Err(config_err(format!("{key}: {} does not exist", p.display())));
            }
        }
    }
    Ok(())
}

fn run_dir(c: &Config) -> CliResult<PathBuf> {
    let out = c
        .path("out")
        .ok_or_else(|| usage("an output run directory is required (--out)"))?;
    Ok(resolve_run_dir(&out))
}

fn write_config_echo(run: &RunDir, c: &Config, extra: &BTreeMap<String, String>) -> CliResult<()> {
    let mut text = c.render();
    for (k, v) in extra {
        text.push_str(&format!("# {k} = {v}\n"));
    }
    let p = run.join(CONFIG_ECHO_FILE);
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    Ok(())
}

pub fn train_command(kind: TrainKind, a: &TrainArgs) -> CliResult<String> {
    kind.check_flags(a)?;
    let c = train_settings(a)?;
    check_paths_exist(&c)?;
    let out = run_dir(&c)?;
    let seed: u64 = c.parse_or("seed", 0)?;
    let objective = match kind {
        TrainKind::PretrainAsr => Objective::Asr,
        TrainKind::Slu => Objective::Slu,
        TrainKind::MultiTask | TrainKind::Fusion => {
            let lambda = c
                .parse::<f64>("lambda")?
                .ok_or_else(|| config_err(format!("{} needs an interpolation weight (--lambda)", kind.name())))?;
            Objective::MultiTask { lambda }
        }
    };
    objective.validate()?;
    let init = if kind == TrainKind::PretrainAsr {
        None
    } else {
        c.path("init_encoder")
    };
    let policy: Option<TransferPolicy> = match c.get("policy") {
        Some(p) if kind != TrainKind::PretrainAsr => Some(p.parse()?),
        _ => None,
    };
    if policy.is_some() && init.is_none() {
        return Err(config_err(
            "a transfer policy needs an encoder checkpoint (--init-encoder)".into(),
        ));
    }
    let text_encoder = if kind == TrainKind::Fusion {
        Some(
            c.path("text_encoder")
                .ok_or_else(|| config_err("train-fusion needs a pre-trained text encoder (--text-encoder)".into()))?,
        )
    } else {
        None
    };
    let feats = feature_config(&c.section("features."))?;
    let opts = train_options(&c, objective, seed)?;

    let run = RunDir::acquire(&out)?;
    let data = load_dataset(&c, &feats)?;
    let mcfg = model_config(&c, &feats, &data.vocab, &data.intents)?;
    let mut model = SluModel::<f32>::new(mcfg, seed)?;
    let mut meta = BTreeMap::new();
    meta.insert("command".to_string(), kind.name().to_string());
    meta.insert("objective".to_string(), objective.to_string());
    meta.extend(feature_pairs(&feats));
    if let Some(p) = &text_encoder {
        attach_text_encoder(&Checkpoint::load(p)?, &mut model, &data.vocab)?;
        meta.insert("text_encoder".into(), p.display().to_string());
    }
    if let Some(p) = &init {
        let policy = policy.unwrap_or(TransferPolicy::FineTune);
        transfer_encoder(&Checkpoint::load(p)?, &mut model, policy)?;
        meta.insert("init_encoder".into(), p.display().to_string());
        meta.insert("policy".into(), policy.to_string());
    }

    let frozen = model.params.frozen_fingerprint();
    let report = train_with(&mut model, &data.train, &data.valid, &opts, |epoch, m, _| {
        if m.params.frozen_fingerprint() != frozen {
            return Err(Error::Contract(format!(
                "frozen parameters changed during epoch {epoch}"
            )));
        }
        Ok(())
    })?;
    meta.insert("epochs_run".into(), report.epochs_run.to_string());
    meta.insert("steps".into(), report.steps.to_string());
    meta.insert("frozen_fingerprint".into(), format!("{frozen:016x}"));

    let metrics_path = c.path("metrics_out").unwrap_or_else(|| run.join(METRICS_FILE));
    write_metrics(&metrics_path, &report.rows)?;
    let ckpt_path = run.join(MODEL_FILE);
    model_checkpoint(&model, &data.vocab, &data.intents, &meta).save(&ckpt_path)?;
    write_config_echo(&run, &c, &BTreeMap::new())?;

    let mut msg = format!(
        "{}: {} epochs, {} steps, {} train / {} valid utterances\n",
        kind.name(),
        report.epochs_run,
        report.steps,
        data.train.len(),
        data.valid.len()
    );
    let last_valid = report.rows.iter().rev().find(|r| r.split == "valid");
    if let Some(r) = last_valid.or(report.rows.last()) {
        msg.push_str(&format!(
            "final {}: intent_accuracy={} total_loss={}\n",
            r.split, r.intent_accuracy, r.total_loss
        ));
    }
    msg.push_str(&format!(
        "wrote {}\nwrote {}\n",
        ckpt_path.display(),
        metrics_path.display()
    ));
    Ok(msg)
}

fn corpus_texts(path: &Path) -> CliResult<Vec<String>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        return Ok(load_manifest(path, None)?.into_iter().map(|e| e.text).collect());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

pub fn pretrain_textenc(a: &TextArgs) -> CliResult<String> {
    let mut c = match &a.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for s in &a.set {
        c.set_pair(s)?;
    }
    if let Some(p) = &a.corpus {
        c.set("corpus", p.display().to_string())?;
    }
    if let Some(p) = &a.out {
        c.set("out", p.display().to_string())?;
    }
    if let Some(p) = &a.metrics_out {
        c.set("metrics_out", p.display().to_string())?;
    }
    if let Some(s) = a.seed {
        c.set("seed", s.to_string())?;
    }
    check_paths_exist(&c)?;
    let out = run_dir(&c)?;
    let corpus_path = c
        .path("corpus")
        .ok_or_else(|| config_err("no text corpus (--corpus)".into()))?;
    let seed: u64 = c.parse_or("seed", 0)?;

    let run = RunDir::acquire(&out)?;
    let texts = corpus_texts(&corpus_path)?;
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let vocab = load_vocab(&c, &refs)?;
    let corpus = texts.iter().map(|t| vocab.encode(t)).collect::<Result<Vec<_>, _>>()?;

    let mut opts = TextPretrainOptions::new(vocab.len(), seed);
    let model_pairs: BTreeMap<String, String> = c
        .section("text.model.")
        .into_iter()
        .map(|(k, v)| (format!("model.{k}"), v))
        .collect();
    opts.cfg = ModelConfig::from_pairs(&model_pairs, TextEncoder::default_config(vocab.len()))?;
    if opts.cfg.vocab_size != vocab.len() {
        return Err(config_err(format!(
            "text.model.vocab_size = {} but the corpus vocabulary has {}",
            opts.cfg.vocab_size,
            vocab.len()
        )));
    }
    for (k, v) in c.section("text.") {
        let bad = || config_err(format!("bad value `{v}` for `text.{k}`"));
        match k.as_str() {
            "epochs" => opts.epochs = v.parse().map_err(|_| bad())?,
            "batch_size" => opts.batch_size = v.parse().map_err(|_| bad())?,
            "lr" => opts.adam.lr = v.parse().map_err(|_| bad())?,
            "mask_prob" => opts.mask_prob = v.parse().map_err(|_| bad())?,
            k if k.starts_with("model.") => {}
            _ => return Err(config_err(format!("unknown key `text.{k}`"))),
        }
    }
    if !(0.0..=1.0).contains(&opts.mask_prob) {
        return Err(config_err(format!("text.mask_prob {} outside [0, 1]", opts.mask_prob)));
    }

    let pre = pretrain_text_encoder(&corpus, &opts)?;
    let mut ckpt = text_encoder_checkpoint(&pre, &vocab);
    ckpt.metadata.insert("command".into(), "pretrain-textenc".into());
    ckpt.metadata.insert("seed".into(), seed.to_string());
    let ckpt_path = run.join(TEXT_ENCODER_FILE);
    ckpt.save(&ckpt_path)?;
    let rows: Vec<TextMetricsRow> = pre
        .epoch_losses
        .iter()
        .enumerate()
        .map(|(i, &l)| TextMetricsRow {
            epoch: i + 1,
            split: "train".into(),
            mlm_loss: l,
        })
        .collect();
    let metrics_path = c.path("metrics_out").unwrap_or_else(|| run.join(METRICS_FILE));
    write_text_metrics(&metrics_path, &rows)?;
    write_config_echo(&run, &c, &BTreeMap::new())?;
    Ok(format!(
        "pretrain-textenc: {} sequences, vocabulary {}, final masked-token loss {} (ln V = {})\nwrote {}\nwrote {}\n",
        corpus.len(),
        vocab.len(),
        pre.epoch_losses.last().copied().unwrap_or(f64::NAN),
        (vocab.len() as f64).ln(),
        ckpt_path.display(),
        metrics_path.display()
    ))
}

/// Fraction of reference positions (EOS included) matched by the
/// hypothesis at the same position, over the longer of the two lengths.
pub fn positional_accuracy(pairs: &[(Vec<usize>, Vec<usize>)]) -> f64 {
    let (mut hits, mut total) = (0usize, 0usize);
    for (reference, hyp) in pairs {
        hits += reference.iter().zip(hyp).filter(|(r, h)| r == h).count();
        total += reference.len().max(hyp.len());
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

pub fn eval(a: &EvalArgs) -> CliResult<String> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let saved = restore_model::<f32>(&ckpt)?;
    let feats = feature_config(
        &saved
            .metadata
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("features.").map(|k| (k.to_string(), v.clone())))
            .collect(),
    )?;
    let entries = load_manifest(&a.manifest, Some(&saved.intents))?;
    let utts = prepare(&entries, &saved.vocab, &saved.intents, &feats)?;
    let with_asr = saved.metadata.get("objective").is_some_and(|o| o != "slu");
    let stats = evaluate(&saved.model, &utts, with_asr)?;
    let greedy = if a.decode {
        let mut pairs = Vec::with_capacity(utts.len());
        for u in &utts {
            let reference = u.tokens[1..].to_vec();
            let hyp = saved.model.greedy_decode(&u.feature_tensor(), a.max_len)?;
            pairs.push((reference, hyp));
        }
        debug_assert!(pairs.iter().all(|(r, _)| r.last() == Some(&EOS)));
        Some(positional_accuracy(&pairs))
    } else {
        None
    };
    let row = EvalRow {
        split: "eval".into(),
        count: stats.count,
        intent_accuracy: stats.intent_accuracy,
        slu_loss: stats.slu_loss,
        asr_loss: stats.asr_loss,
        asr_loss_per_token: stats.asr_loss_per_token,
        token_accuracy: stats.token_accuracy,
        greedy_token_accuracy: greedy,
    };
    if let Some(p) = &a.metrics_out {
        write_eval(p, &row)?;
    }
    eval_csv(&row)
}

pub fn synth(a: &SynthArgs) -> CliResult<String> {
    let spec = match a.language.as_str() {
        "a" | "A" => SyntheticTaskSpec::language_a(a.noise, a.seed),
        "b" | "B" => SyntheticTaskSpec::language_b(a.noise, a.seed),
        other => {
            return Err(config_err(format!(
                "unknown synthetic language `{other}` (expected a or b)"
            )))
        }
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let write = |name: &str, text: String| -> CliResult<PathBuf> {
        let p = a.out.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    };
    write("vocab.json", synthetic_vocabulary().to_json())?;
    write("intents.json", spec.intent_labels()?.to_json())?;
    if a.text_only {
        let lines: String = synth_transcripts(&spec, a.count)?
            .into_iter()
            .map(|t| t + "\n")
            .collect();
        let p = write("corpus.txt", lines)?;
        return Ok(format!("synth: {} transcripts\nwrote {}\n", a.count, p.display()));
    }
    let corpus = synth_generate(&spec, a.count)?;
    corpus.write_to(&a.out)?;
    Ok(format!(
        "synth: {} utterances of language {}\nwrote {}\n",
        a.count,
        spec.language.tag(),
        a.out.join("manifest.jsonl").display()
    ))
}

pub fn plot(a: &PlotArgs) -> CliResult<String> {
    if a.metrics.is_empty() {
        return Err(usage("plot needs at least one --metrics file"));
    }
    if !a.label.is_empty() && a.label.len() != a.metrics.len() {
        return Err(usage("give either no --label or one per --metrics file"));
    }
    let mut series = Vec::with_capacity(a.metrics.len());
    for (i, p) in a.metrics.iter().enumerate() {
        let label = a.label.get(i).cloned().unwrap_or_else(|| default_label(p));
        let points = MetricsTable::read(p)?.series(&a.column, &a.split)?;
        series.push(Series { label, points });
    }
    let title = a.title.clone().unwrap_or_else(|| format!("{} {}", a.split, a.column));
    let svg = render_svg(&title, "epoch", &a.column, &series);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(&a.out, svg).map_err(|e| Error::io(&a.out, e))?;
    Ok(format!("wrote {}\n", a.out.display()))
}

/// `runs/mt1/metrics.csv` → `mt1`; `curves/mt1.csv` → `mt1`.
fn default_label(p: &Path) -> String {
    let stem = p
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if stem == "metrics" {
        if let Some(parent) = p.parent().and_then(Path::file_name) {
            return parent.to_string_lossy().into_owned();
        }
    }
    stem
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positional_accuracy_counts_length_mismatch() {
        assert_eq!(positional_accuracy(&[(vec![4, 5, 2], vec![4, 5, 2])]), 1.0);
        assert_eq!(positional_accuracy(&[(vec![4, 5, 2], vec![4, 2])]), 1.0 / 3.0);
        assert_eq!(positional_accuracy(&[(vec![4, 2], vec![4, 6, 6, 2])]), 0.25);
    }

    #[test]
    fn feature_keys_round_trip() {
        let f = FeatureConfig {
            n_mels: 40,
            stack_order: StackOrder::StackThenDownsample,
            ..FeatureConfig::default()
        };
        let pairs: BTreeMap<String, String> = feature_pairs(&f)
            .into_iter()
            .map(|(k, v)| (k.trim_start_matches("features.").to_string(), v))
            .collect();
        assert_eq!(feature_config(&pairs).unwrap(), f);
        let bad: BTreeMap<String, String> = [("n_mel".to_string(), "3".to_string())].into();
        assert!(feature_config(&bad).is_err());
    }

    #[test]
    fn labels_come_from_run_directories() {
        assert_eq!(default_label(Path::new("runs/mt1/metrics.csv")), "mt1");
        assert_eq!(default_label(Path::new("curves/base.csv")), "base");
    }
}

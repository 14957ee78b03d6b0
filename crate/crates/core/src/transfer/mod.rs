//! Checkpoints and cross-language encoder transfer.
//!
//! Tensor names are dotted paths fixed by the model constructors, e.g.
//! `encoder.input_proj.w`, `encoder.layer0.self_attn.q.w`,
//! `encoder.layer0.norm1.gamma`, `intent_head.w`, `decoder.embed`,
//! `decoder.layer0.cross_attn.out.b`, `fusion.proj.w`,
//! `text_encoder.layer1.ffn.fc2.w`. Transfers match on these names.

mod checkpoint;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub use checkpoint::{Checkpoint, StoredTensor, FORMAT_VERSION, MAGIC};

use crate::autodiff::Float;
use crate::error::{Error, Result};
use crate::models::{IntentLabelSet, PretrainedTextEncoder, SluModel, Vocabulary, ENCODER_PREFIX, TEXT_PREFIX};
use crate::transformer::ModelConfig;

const TEXT_META: &str = "text.";

/// What happens to transferred encoder weights during target training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferPolicy {
    /// Frozen.
    Fix,
    /// Trained further with everything else.
    FineTune,
}

impl FromStr for TransferPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fix" => Ok(Self::Fix),
            "finetune" => Ok(Self::FineTune),
            _ => Err(Error::Config(format!(
                "unknown transfer policy `{s}` (expected fix or finetune)"
            ))),
        }
    }
}

impl fmt::Display for TransferPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fix => "fix",
            Self::FineTune => "finetune",
        })
    }
}

/// Overwrite every `encoder.*` tensor of `model` from `ckpt`.
///
/// The encoder tensor sets must match by name and shape; otherwise nothing is
/// modified and all offending names are returned in a transfer error. Under
/// [`TransferPolicy::Fix`] the copied tensors are frozen. Returns the number
/// of tensors copied.
pub fn transfer_encoder<T: Float>(ckpt: &Checkpoint, model: &mut SluModel<T>, policy: TransferPolicy) -> Result<usize> {
    let prefix = format!("{ENCODER_PREFIX}.");
    let mut mismatched = Vec::new();
    let mut count = 0;
    for (name, t) in model.params.iter().filter(|(n, _)| n.starts_with(&prefix)) {
        match ckpt.tensors.get(name) {
            None => mismatched.push(format!("{name} (missing)")),
            Some(s) if s.shape != t.shape() => mismatched.push(format!("{name} ({:?} vs {:?})", s.shape, t.shape())),
            Some(s) if s.dtype != T::DTYPE => {
                return Err(Error::Dtype {
                    name: name.to_string(),
                    expected: T::DTYPE.name(),
                    found: s.dtype.name(),
                })
            }
            Some(_) => count += 1,
        }
    }
    for name in ckpt.tensors.keys().filter(|n| n.starts_with(&prefix)) {
        if model.params.id(name).is_none() {
            mismatched.push(format!("{name} (unexpected)"));
        }
    }
    if count == 0 && mismatched.is_empty() {
        mismatched.push("no encoder tensors".into());
    }
    if !mismatched.is_empty() {
        return Err(Error::Transfer(mismatched));
    }
    let names: Vec<String> = model
        .params
        .iter()
        .filter(|(n, _)| n.starts_with(&prefix))
        .map(|(n, _)| n.to_string())
        .collect();
    for name in &names {
        let t = ckpt.tensor::<T>(name)?;
        model.params.assign(name, t.data(), t.shape())?;
        let dst = model.params.by_name_mut(name).expect("listed above");
        dst.set_requires_grad(policy == TransferPolicy::FineTune);
    }
    Ok(names.len())
}

/// A model together with the label sets needed to interpret its outputs.
#[derive(Debug, Clone)]
pub struct SavedModel<T> {
    pub model: SluModel<T>,
    pub vocab: Vocabulary,
    pub intents: IntentLabelSet,
    pub metadata: BTreeMap<String, String>,
}

/// Checkpoint holding every parameter (with trainable flags), the model and
/// text-encoder configs, seed, vocabulary and intent names, plus `extra`.
pub fn model_checkpoint<T: Float>(
    model: &SluModel<T>,
    vocab: &Vocabulary,
    intents: &IntentLabelSet,
    extra: &BTreeMap<String, String>,
) -> Checkpoint {
    let mut meta = extra.clone();
    meta.insert("kind".into(), "slu-model".into());
    meta.extend(model.cfg.to_pairs());
    meta.insert("seed".into(), model.seed().to_string());
    meta.insert("vocab".into(), vocab.to_json());
    meta.insert("intents".into(), intents.to_json());
    if let Some(f) = &model.fusion {
        for (k, v) in f.text.cfg.to_pairs() {
            meta.insert(format!("{TEXT_META}{k}"), v);
        }
    }
    Checkpoint::from_params(&model.params, meta)
}

fn text_config(meta: &BTreeMap<String, String>) -> Result<Option<ModelConfig>> {
    let pairs: BTreeMap<String, String> = meta
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(TEXT_META).map(|k| (k.to_string(), v.clone())))
        .collect();
    if pairs.is_empty() {
        return Ok(None);
    }
    ModelConfig::from_pairs(&pairs, ModelConfig::desk()).map(Some)
}

/// Rebuild a model saved by [`model_checkpoint`].
pub fn restore_model<T: Float>(ckpt: &Checkpoint) -> Result<SavedModel<T>> {
    let kind = ckpt.meta("kind")?;
    if kind != "slu-model" {
        return Err(Error::Load(format!(
            "checkpoint kind is `{kind}`, expected `slu-model`"
        )));
    }
    let cfg = ModelConfig::from_pairs(&ckpt.metadata, ModelConfig::desk())?;
    let seed = ckpt
        .meta("seed")?
        .parse()
        .map_err(|_| Error::Load("bad `seed` metadata".into()))?;
    let vocab = Vocabulary::from_json(ckpt.meta("vocab")?)?;
    let intents = IntentLabelSet::from_json(ckpt.meta("intents")?)?;
    if vocab.len() != cfg.vocab_size || intents.len() != cfg.intent_count {
        return Err(Error::Load("label sets disagree with the stored model config".into()));
    }
    let mut model = SluModel::new(cfg, seed)?;
    if let Some(tc) = text_config(&ckpt.metadata)? {
        model.attach_text_encoder(&tc)?;
    }
    ckpt.load_into(&mut model.params)?;
    Ok(SavedModel {
        model,
        vocab,
        intents,
        metadata: ckpt.metadata.clone(),
    })
}

/// Checkpoint of a pre-trained text encoder, every tensor marked frozen.
pub fn text_encoder_checkpoint(pre: &PretrainedTextEncoder, vocab: &Vocabulary) -> Checkpoint {
    let mut meta = BTreeMap::new();
    meta.insert("kind".into(), "text-encoder".into());
    for (k, v) in pre.encoder.cfg.to_pairs() {
        meta.insert(format!("{TEXT_META}{k}"), v);
    }
    meta.insert("vocab".into(), vocab.to_json());
    if let Some(last) = pre.epoch_losses.last() {
        meta.insert("final_mlm_loss".into(), last.to_string());
    }
    let mut ckpt = Checkpoint::from_params(&pre.params, meta);
    for t in ckpt.tensors.values_mut() {
        t.trainable = false;
    }
    ckpt
}

/// Attach the text encoder stored in `ckpt` to `model` (frozen), together
/// with a fresh fusion projection. `vocab` must be the vocabulary the text
/// encoder was trained with.
pub fn attach_text_encoder<T: Float>(ckpt: &Checkpoint, model: &mut SluModel<T>, vocab: &Vocabulary) -> Result<()> {
    let cfg_err = |m: String| Error::Config(format!("text encoder checkpoint: {m}"));
    if ckpt.meta("kind").ok() != Some("text-encoder") {
        return Err(cfg_err("not a text-encoder checkpoint".into()));
    }
    let tc = text_config(&ckpt.metadata)?.ok_or_else(|| cfg_err("no text config".into()))?;
    let stored_vocab = Vocabulary::from_json(ckpt.meta("vocab")?)?;
    if &stored_vocab != vocab {
        return Err(cfg_err("vocabulary differs from the ASR vocabulary".into()));
    }
    let mut staged = model.clone();
    staged.attach_text_encoder(&tc)?;
    let prefix = format!("{TEXT_PREFIX}.");
    let expected: Vec<(String, Vec<usize>)> = staged
        .params
        .iter()
        .filter(|(n, _)| n.starts_with(&prefix))
        .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
        .collect();
    for (name, shape) in &expected {
        match ckpt.tensors.get(name) {
            None => return Err(cfg_err(format!("missing tensor `{name}`"))),
            Some(s) if &s.shape != shape => {
                return Err(cfg_err(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    s.shape
                )))
            }
            Some(_) => {}
        }
        let t = ckpt.tensor::<T>(name)?;
        staged.params.assign(name, t.data(), t.shape())?;
    }
    if let Some(extra) = ckpt.tensors.keys().find(|n| !expected.iter().any(|(e, _)| e == *n)) {
        return Err(cfg_err(format!("unexpected tensor `{extra}`")));
    }
    *model = staged;
    Ok(())
}

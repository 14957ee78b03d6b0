use rayon::prelude::*;

use super::manifest::{ManifestEntry, Source};
use crate::autodiff::{Float, Tensor};
use crate::error::{Error, Result};
use crate::features::{extract, read_wav, FeatureConfig, FeatureMatrix, Waveform};
use crate::models::{IntentLabelSet, Vocabulary, PAD};
use crate::rng::SeededRng;
use crate::transfer::Checkpoint;

/// One featurized, tokenized, labelled utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: FeatureMatrix,
    /// `BOS + transcript + EOS`.
    pub tokens: Vec<usize>,
    pub intent: usize,
}

impl Utterance {
    pub fn new(
        id: String,
        features: FeatureMatrix,
        text: &str,
        intent: &str,
        vocab: &Vocabulary,
        intents: &IntentLabelSet,
    ) -> Result<Self> {
        let intent = intents
            .id(intent)
            .ok_or_else(|| Error::Validation(format!("unknown intent `{intent}` for `{id}`")))?;
        let tokens = vocab
            .encode(text)
            .map_err(|e| Error::Input(format!("utterance `{id}`: {e}")))?;
        Ok(Self {
            id,
            features,
            tokens,
            intent,
        })
    }

    pub fn frames(&self) -> usize {
        self.features.frames()
    }

    pub fn feature_tensor<T: Float>(&self) -> Tensor<T> {
        let data = self.features.data().iter().map(|&v| T::of(v as f64)).collect();
        Tensor::new(vec![self.features.frames(), self.features.dim()], data).expect("feature matrix shape")
    }
}

/// Featurize and tokenize manifest entries. Extraction runs in parallel;
/// the output order follows `entries`.
pub fn prepare(
    entries: &[ManifestEntry],
    vocab: &Vocabulary,
    intents: &IntentLabelSet,
    cfg: &FeatureConfig,
) -> Result<Vec<Utterance>> {
    entries
        .par_iter()
        .map(|e| {
            let features = match &e.source {
                Source::Audio(p) => extract(&read_wav(p)?, cfg)?,
                Source::Features(p) => Checkpoint::load(p)?.to_features()?,
            };
            if features.dim() != cfg.output_dim() {
                return Err(Error::Input(format!(
                    "utterance `{}` has feature dimension {}, expected {}",
                    e.id,
                    features.dim(),
                    cfg.output_dim()
                )));
            }
            Utterance::new(e.id.clone(), features, &e.text, &e.intent, vocab, intents)
        })
        .collect()
}

/// Featurize in-memory waveforms paired with their manifest entries.
pub fn prepare_waveforms(
    waves: &[Waveform],
    entries: &[ManifestEntry],
    vocab: &Vocabulary,
    intents: &IntentLabelSet,
    cfg: &FeatureConfig,
) -> Result<Vec<Utterance>> {
    if waves.len() != entries.len() {
        return Err(Error::Input(format!(
            "{} waveforms for {} entries",
            waves.len(),
            entries.len()
        )));
    }
    waves
        .par_iter()
        .zip(entries.par_iter())
        .map(|(w, e)| Utterance::new(e.id.clone(), extract(w, cfg)?, &e.text, &e.intent, vocab, intents))
        .collect()
}

/// Padded mini-batch. Feature rows past an utterance's length and token
/// slots past its sequence length are zero / PAD.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `[B, t_max, dim]`, row-major.
    pub features: Vec<f32>,
    pub t_max: usize,
    pub dim: usize,
    pub lengths: Vec<usize>,
    /// `[B, l_max]`, row-major.
    pub tokens: Vec<usize>,
    pub l_max: usize,
    pub token_lengths: Vec<usize>,
    pub intents: Vec<usize>,
}

impl Batch {
    pub fn from_utterances(utts: &[&Utterance]) -> Result<Self> {
        let first = utts.first().ok_or_else(|| Error::Input("empty batch".into()))?;
        let dim = first.features.dim();
        if let Some(u) = utts.iter().find(|u| u.features.dim() != dim) {
            return Err(Error::Input(format!(
                "utterance `{}` has feature dimension {}",
                u.id,
                u.features.dim()
            )));
        }
        let t_max = utts.iter().map(|u| u.frames()).max().unwrap_or(0);
        let l_max = utts.iter().map(|u| u.tokens.len()).max().unwrap_or(0);
        let b = utts.len();
        let mut features = vec![0.0; b * t_max * dim];
        let mut tokens = vec![PAD; b * l_max];
        for (i, u) in utts.iter().enumerate() {
            let n = u.features.data().len();
            features[i * t_max * dim..i * t_max * dim + n].copy_from_slice(u.features.data());
            tokens[i * l_max..i * l_max + u.tokens.len()].copy_from_slice(&u.tokens);
        }
        Ok(Self {
            ids: utts.iter().map(|u| u.id.clone()).collect(),
            features,
            t_max,
            dim,
            lengths: utts.iter().map(|u| u.frames()).collect(),
            tokens,
            l_max,
            token_lengths: utts.iter().map(|u| u.tokens.len()).collect(),
            intents: utts.iter().map(|u| u.intent).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Unpadded features of item `i`, `[lengths[i], dim]`.
    pub fn item_features<T: Float>(&self, i: usize) -> Tensor<T> {
        let start = i * self.t_max * self.dim;
        let data = self.features[start..start + self.lengths[i] * self.dim]
            .iter()
            .map(|&v| T::of(v as f64))
            .collect();
        Tensor::new(vec![self.lengths[i], self.dim], data).expect("batch item shape")
    }

    /// Padded token row of item `i`.
    pub fn item_tokens(&self, i: usize) -> &[usize] {
        &self.tokens[i * self.l_max..(i + 1) * self.l_max]
    }

    /// Copy with `extra_frames` more zero rows and `extra_tokens` more PAD
    /// slots per item.
    pub fn with_extra_padding(&self, extra_frames: usize, extra_tokens: usize) -> Self {
        let (t_max, l_max) = (self.t_max + extra_frames, self.l_max + extra_tokens);
        let mut features = vec![0.0; self.len() * t_max * self.dim];
        let mut tokens = vec![PAD; self.len() * l_max];
        for i in 0..self.len() {
            let src = &self.features[i * self.t_max * self.dim..(i + 1) * self.t_max * self.dim];
            features[i * t_max * self.dim..i * t_max * self.dim + src.len()].copy_from_slice(src);
            tokens[i * l_max..i * l_max + self.l_max].copy_from_slice(self.item_tokens(i));
        }
        Self {
            features,
            t_max,
            tokens,
            l_max,
            ..self.clone()
        }
    }
}

/// Seeded shuffle, then length bucketing: the shuffled order is cut into
/// pools of `4 × batch_size`, each pool is sorted by frame count (stable)
/// and cut into batches. Every utterance appears exactly once.
pub fn make_batches(utts: &[Utterance], batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..utts.len()).collect();
    SeededRng::derived(seed, "batches").shuffle(&mut order);
    let mut batches = Vec::with_capacity(utts.len().div_ceil(batch_size));
    for pool in order.chunks(batch_size * 4) {
        let mut pool = pool.to_vec();
        pool.sort_by_key(|&i| utts[i].frames());
        for chunk in pool.chunks(batch_size) {
            let refs: Vec<&Utterance> = chunk.iter().map(|&i| &utts[i]).collect();
            batches.push(Batch::from_utterances(&refs)?);
        }
    }
    Ok(batches)
}

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Transformer hyperparameters.
///
/// Field names follow the usual notation: `n_enc_layers`/`n_dec_layers`
/// (N_enc/dec), `n_heads` (N_head), `d_k`/`d_v` (N_k/v), `d_model`/`d_inner`
/// (d_m/i).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Width of each stacked feature frame fed to the encoder.
    pub input_dim: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub d_model: usize,
    pub d_inner: usize,
    /// ASR vocabulary size, reserved tokens included.
    pub vocab_size: usize,
    pub intent_count: usize,
    pub max_positions: usize,
    pub dropout: f64,
    /// Add sinusoidal position encodings to encoder and decoder inputs.
    pub use_positions: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small configuration used for synthetic experiments on a CPU.
    pub fn desk() -> Self {
        Self {
            input_dim: 320,
            n_enc_layers: 2,
            n_dec_layers: 1,
            n_heads: 4,
            d_k: 8,
            d_v: 8,
            d_model: 32,
            d_inner: 64,
            vocab_size: 32,
            intent_count: 8,
            max_positions: 512,
            dropout: 0.0,
            use_positions: true,
        }
    }

    /// Smallest configuration used for gradient checking.
    pub fn tiny(input_dim: usize, vocab_size: usize, intent_count: usize) -> Self {
        Self {
            input_dim,
            n_enc_layers: 1,
            n_dec_layers: 1,
            n_heads: 2,
            d_k: 4,
            d_v: 4,
            d_model: 8,
            d_inner: 16,
            vocab_size,
            intent_count,
            max_positions: 64,
            dropout: 0.0,
            use_positions: true,
        }
    }

    /// The four rows of the published hyperparameter grid as
    /// `(name, config, reported intent accuracy %)`. Accuracies are the
    /// published FluentAI numbers and are kept for reference only.
    pub fn published_grid() -> Vec<(&'static str, ModelConfig, f64)> {
        let row = |enc, dec, heads, dkv, dm, di| ModelConfig {
            n_enc_layers: enc,
            n_dec_layers: dec,
            n_heads: heads,
            d_k: dkv,
            d_v: dkv,
            d_model: dm,
            d_inner: di,
            ..ModelConfig::desk()
        };
        vec![
            ("grid-2-0-small", row(2, 0, 2, 32, 256, 512), 88.67),
            ("grid-3-0-small", row(3, 0, 8, 64, 256, 512), 86.68),
            ("grid-3-0-large", row(3, 0, 8, 64, 512, 1024), 90.38),
            ("grid-3-6-large", row(3, 6, 8, 64, 512, 1024), 91.91),
        ]
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            _ => Self::published_grid()
                .into_iter()
                .find(|(n, _, _)| *n == name)
                .map(|(_, c, _)| c)
                .ok_or_else(|| Error::Config(format!("unknown model preset `{name}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("n_heads", self.n_heads),
            ("d_k", self.d_k),
            ("d_v", self.d_v),
            ("d_model", self.d_model),
            ("d_inner", self.d_inner),
            ("intent_count", self.intent_count),
            ("max_positions", self.max_positions),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.vocab_size < 4 {
            return Err(Error::Config("vocab_size must cover the reserved tokens".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Flat `model.*` key/value form used in config files and checkpoint metadata.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(format!("model.{k}"), v);
        };
        put("input_dim", self.input_dim.to_string());
        put("n_enc_layers", self.n_enc_layers.to_string());
        put("n_dec_layers", self.n_dec_layers.to_string());
        put("n_heads", self.n_heads.to_string());
        put("d_k", self.d_k.to_string());
        put("d_v", self.d_v.to_string());
        put("d_model", self.d_model.to_string());
        put("d_inner", self.d_inner.to_string());
        put("vocab_size", self.vocab_size.to_string());
        put("intent_count", self.intent_count.to_string());
        put("max_positions", self.max_positions.to_string());
        put("dropout", self.dropout.to_string());
        put("use_positions", self.use_positions.to_string());
        m
    }

    /// Parse `model.*` keys on top of `base` (or of `model.preset` if given).
    pub fn from_pairs(pairs: &BTreeMap<String, String>, base: ModelConfig) -> Result<Self> {
        let mut c = match pairs.get("model.preset") {
            Some(p) => Self::preset(p)?,
            None => base,
        };
        for (key, value) in pairs {
            let Some(field) = key.strip_prefix("model.") else {
                continue;
            };
            let bad = || Error::Config(format!("bad value `{value}` for `{key}`"));
            let uint = || value.parse::<usize>().map_err(|_| bad());
            match field {
                "preset" => {}
                "input_dim" => c.input_dim = uint()?,
                "n_enc_layers" => c.n_enc_layers = uint()?,
                "n_dec_layers" => c.n_dec_layers = uint()?,
                "n_heads" => c.n_heads = uint()?,
                "d_k" => c.d_k = uint()?,
                "d_v" => c.d_v = uint()?,
                "d_model" => c.d_model = uint()?,
                "d_inner" => c.d_inner = uint()?,
                "vocab_size" => c.vocab_size = uint()?,
                "intent_count" => c.intent_count = uint()?,
                "max_positions" => c.max_positions = uint()?,
                "dropout" => c.dropout = value.parse().map_err(|_| bad())?,
                "use_positions" => c.use_positions = value.parse().map_err(|_| bad())?,
                _ => return Err(Error::Config(format!("unknown model key `{key}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }
}

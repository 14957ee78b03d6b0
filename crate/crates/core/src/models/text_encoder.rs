//! Small bidirectional text encoder pre-trained by masked-token prediction.
//! Stands in for a large pre-trained language representation in the
//! fusion model, where it is loaded frozen.

use super::vocab::{BOS, EOS, MASK, PAD};
use crate::autodiff::{AdamConfig, AdamState, Float, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::transformer::{sinusoidal_positions, AttentionMask, Ctx, EncoderLayer, Linear, ModelConfig};

pub const TEXT_PREFIX: &str = "text_encoder";

#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub cfg: ModelConfig,
    pub embed: ParamId,
    pub layers: Vec<EncoderLayer>,
    pub mlm_head: Linear,
}

impl TextEncoder {
    /// Default text encoder shape: 2 layers of width 64.
    pub fn default_config(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_enc_layers: 2,
            n_dec_layers: 0,
            n_heads: 4,
            d_k: 16,
            d_v: 16,
            d_model: 64,
            d_inner: 128,
            vocab_size,
            ..ModelConfig::desk()
        }
    }

    pub fn new<T: Float>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut SeededRng) -> Self {
        let embed = store.glorot(format!("{TEXT_PREFIX}.embed"), cfg.vocab_size, cfg.d_model, rng);
        let layers = (0..cfg.n_enc_layers)
            .map(|i| EncoderLayer::new(store, &format!("{TEXT_PREFIX}.layer{i}"), cfg, rng))
            .collect();
        let mlm_head = Linear::new(store, &format!("{TEXT_PREFIX}.mlm"), cfg.d_model, cfg.vocab_size, rng);
        Self {
            cfg: cfg.clone(),
            embed,
            layers,
            mlm_head,
        }
    }

    /// Hidden states `[tokens, d_model]`. With `causal`, position `t` only
    /// attends to `0..=t`.
    pub fn hidden<T: Float>(&self, ctx: &mut Ctx<'_, T>, tokens: &[usize], causal: bool) -> Result<Var> {
        let table = ctx.param(self.embed);
        let e = ctx.tape.embedding(table, tokens)?;
        let pe = sinusoidal_positions::<T>(tokens.len(), self.cfg.d_model, self.cfg.max_positions)?;
        let mut h = if self.cfg.use_positions {
            let pe = ctx.tape.constant(pe);
            ctx.tape.add(e, pe)?
        } else {
            e
        };
        let n = tokens.len();
        let mask = if causal {
            AttentionMask::causal(n)
        } else {
            AttentionMask::full(n, n)
        };
        for layer in &self.layers {
            h = layer.forward(ctx, h, &mask)?;
        }
        Ok(h)
    }

    /// Mean masked-token cross-entropy for one sequence, or `None` if no
    /// position was masked.
    fn mlm_loss<T: Float>(&self, ctx: &mut Ctx<'_, T>, tokens: &[usize], masked: &[usize]) -> Result<Option<Var>> {
        if masked.is_empty() {
            return Ok(None);
        }
        let mut input = tokens.to_vec();
        for &p in masked {
            input[p] = MASK;
        }
        let h = self.hidden(ctx, &input, false)?;
        let logits = self.mlm_head.forward(ctx, h)?;
        let rows: Vec<Var> = masked
            .iter()
            .map(|&p| ctx.tape.narrow(logits, 0, p, 1))
            .collect::<Result<_>>()?;
        let picked = ctx.tape.concat(&rows, 0)?;
        let targets: Vec<usize> = masked.iter().map(|&p| tokens[p]).collect();
        let loss = ctx.tape.cross_entropy_ids(picked, &targets)?;
        Ok(Some(ctx.tape.scale(loss, T::of(1.0 / masked.len() as f64))))
    }
}

#[derive(Debug, Clone)]
pub struct TextPretrainOptions {
    pub cfg: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub mask_prob: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl TextPretrainOptions {
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        Self {
            cfg: TextEncoder::default_config(vocab_size),
            epochs: 20,
            batch_size: 16,
            mask_prob: 0.15,
            adam: AdamConfig::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainedTextEncoder {
    pub encoder: TextEncoder,
    pub params: ParamStore<f32>,
    /// Mean masked-token loss per epoch.
    pub epoch_losses: Vec<f64>,
}

fn choose_masked(tokens: &[usize], p: f64, rng: &mut SeededRng) -> Vec<usize> {
    let candidates: Vec<usize> = (0..tokens.len())
        .filter(|&i| !matches!(tokens[i], PAD | BOS | EOS))
        .collect();
    if candidates.is_empty() {
        return Vec::new();
    }
    let mut chosen: Vec<usize> = candidates.iter().copied().filter(|_| rng.bernoulli(p)).collect();
    if chosen.is_empty() {
        chosen.push(candidates[rng.below(candidates.len())]);
    }
    chosen
}

/// Mean masked-token loss of `encoder` over `corpus` using a fixed masking
/// stream derived from `seed`.
pub fn masked_token_loss(
    encoder: &TextEncoder,
    params: &ParamStore<f32>,
    corpus: &[Vec<usize>],
    mask_prob: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = SeededRng::derived(seed, "mlm-eval");
    let (mut total, mut count) = (0.0, 0usize);
    for seq in corpus {
        let masked = choose_masked(seq, mask_prob, &mut rng);
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, params);
        if let Some(l) = encoder.mlm_loss(&mut ctx, seq, &masked)? {
            total += tape.value(l)[0] as f64;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Train a text encoder on token sequences by masked-token prediction.
pub fn pretrain_text_encoder(corpus: &[Vec<usize>], opts: &TextPretrainOptions) -> Result<PretrainedTextEncoder> {
    if corpus.is_empty() || corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::Input("text pre-training corpus is empty".into()));
    }
    opts.cfg.validate()?;
    let mut params = ParamStore::new();
    let mut init = SeededRng::derived(opts.seed, "text-init");
    let encoder = TextEncoder::new(&mut params, &opts.cfg, &mut init);
    let mut adam = AdamState::new(opts.adam);
    let mut order_rng = SeededRng::derived(opts.seed, "text-shuffle");
    let mut mask_rng = SeededRng::derived(opts.seed, "text-mask");
    let mut order: Vec<usize> = (0..corpus.len()).filter(|&i| !corpus[i].is_empty()).collect();
    let mut epoch_losses = Vec::with_capacity(opts.epochs);

    for _ in 0..opts.epochs {
        order_rng.shuffle(&mut order);
        let (mut total, mut count) = (0.0, 0usize);
        for batch in order.chunks(opts.batch_size.max(1)) {
            params.zero_grad();
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                let masked = choose_masked(&corpus[i], opts.mask_prob, &mut mask_rng);
                let mut tape = Tape::new();
                let mut ctx = Ctx::new(&mut tape, &params);
                let Some(l) = encoder.mlm_loss(&mut ctx, &corpus[i], &masked)? else {
                    continue;
                };
                total += tape.value(l)[0] as f64;
                count += 1;
                let scaled = tape.scale(l, scale);
                tape.backward(scaled, &mut params)?;
            }
            adam.step(&mut params)?;
        }
        epoch_losses.push(if count == 0 { 0.0 } else { total / count as f64 });
    }
    Ok(PretrainedTextEncoder {
        encoder,
        params,
        epoch_losses,
    })
}

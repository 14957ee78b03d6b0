use super::text_encoder::{TextEncoder, TEXT_PREFIX};
use super::vocab::{BOS, EOS, PAD};
use crate::autodiff::{Float, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::transformer::{Ctx, Decoder, Encoder, Linear, ModelConfig};

pub const ENCODER_PREFIX: &str = "encoder";
pub const DECODER_PREFIX: &str = "decoder";
pub const INTENT_PREFIX: &str = "intent_head";
pub const FUSION_PREFIX: &str = "fusion";

/// Frozen text encoder plus the learned projection that merges its hidden
/// states into the ASR decoder output path.
#[derive(Debug, Clone)]
pub struct Fusion {
    pub text: TextEncoder,
    /// `[d_model + d_text] → d_model`, applied to the concatenated states.
    pub proj: Linear,
}

/// The three loss terms of one multi-task evaluation.
#[derive(Debug, Clone, Copy)]
pub struct MultiTaskLoss {
    pub slu: Var,
    pub asr: Var,
    pub total: Var,
}

/// Shared acoustic encoder with an intent branch (max-pool over time,
/// linear, softmax) and an ASR decoder branch, optionally fused with a
/// frozen text encoder.
///
/// Parameters are created in a fixed order from one seed: encoder, intent
/// head, decoder, then (if attached) fusion. Two models built from the same
/// config and seed therefore share encoder, head and decoder values whether
/// or not fusion is attached.
#[derive(Debug, Clone)]
pub struct SluModel<T> {
    pub cfg: ModelConfig,
    pub params: ParamStore<T>,
    pub encoder: Encoder,
    pub intent_head: Linear,
    pub decoder: Decoder,
    pub fusion: Option<Fusion>,
    seed: u64,
}

pub fn validate_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// Strip trailing padding and check the `BOS … EOS` framing.
pub fn unpadded(tokens: &[usize]) -> Result<&[usize]> {
    let len = tokens.iter().position(|&t| t == PAD).unwrap_or(tokens.len());
    let seq = &tokens[..len];
    if seq.first() != Some(&BOS) || seq.last() != Some(&EOS) || seq.len() < 2 {
        return Err(Error::Input("token sequence must be BOS … EOS".into()));
    }
    if seq.len() == 2 {
        return Err(Error::Input("empty transcript".into()));
    }
    Ok(seq)
}

impl<T: Float> SluModel<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut rng = SeededRng::derived(seed, "init");
        let encoder = Encoder::new(&mut params, ENCODER_PREFIX, &cfg, &mut rng);
        // Zero head: an untrained model predicts the uniform posterior.
        let intent_head = Linear::zeros(&mut params, INTENT_PREFIX, cfg.d_model, cfg.intent_count);
        let decoder = Decoder::new(&mut params, DECODER_PREFIX, &cfg, &mut rng);
        Ok(Self {
            cfg,
            params,
            encoder,
            intent_head,
            decoder,
            fusion: None,
            seed,
        })
    }

    /// Add a (frozen, randomly initialized) text encoder and a fusion
    /// projection. Load real text-encoder weights afterwards.
    pub fn attach_text_encoder(&mut self, text_cfg: &ModelConfig) -> Result<()> {
        text_cfg.validate()?;
        if self.fusion.is_some() {
            return Err(Error::Config("text encoder already attached".into()));
        }
        if text_cfg.vocab_size != self.cfg.vocab_size {
            return Err(Error::Config(format!(
                "text encoder vocabulary {} differs from ASR vocabulary {}",
                text_cfg.vocab_size, self.cfg.vocab_size
            )));
        }
        let mut rng = SeededRng::derived(self.seed, "fusion");
        let text = TextEncoder::new(&mut self.params, text_cfg, &mut rng);
        self.params.freeze_prefix(&format!("{TEXT_PREFIX}."));
        let proj = Linear::new(
            &mut self.params,
            &format!("{FUSION_PREFIX}.proj"),
            self.cfg.d_model + text_cfg.d_model,
            self.cfg.d_model,
            &mut rng,
        );
        self.fusion = Some(Fusion { text, proj });
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Leaf for an input feature matrix `[frames, input_dim]`.
    pub fn input(&self, tape: &mut Tape<T>, x: &Tensor<T>) -> Result<Var> {
        let s = x.shape();
        if s.len() != 2 || s[1] != self.cfg.input_dim {
            return Err(Error::Dimension {
                op: "model_input",
                lhs: s.to_vec(),
                rhs: vec![self.cfg.input_dim],
            });
        }
        Ok(tape.leaf(x.clone()))
    }

    pub fn encode(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        self.encoder.forward(ctx, x)
    }

    /// Intent logits `[1, I]` from encoder output via max-pooling over time.
    pub fn intent_logits(&self, ctx: &mut Ctx<'_, T>, enc: Var) -> Result<Var> {
        let pooled = ctx.tape.max_over_axis(enc, 0)?;
        let pooled = ctx.tape.reshape(pooled, &[1, self.cfg.d_model])?;
        self.intent_head.forward(ctx, pooled)
    }

    /// Intent posterior for one utterance.
    pub fn slu_forward(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let xv = self.input(&mut tape, x)?;
        let mut ctx = Ctx::new(&mut tape, &self.params);
        let enc = self.encode(&mut ctx, xv)?;
        let logits = self.intent_logits(&mut ctx, enc)?;
        let p = ctx.tape.softmax(logits, 1)?;
        Ok(tape.value(p).to_vec())
    }

    /// `−log p(intent | x)`.
    pub fn slu_loss(&self, ctx: &mut Ctx<'_, T>, enc: Var, intent: usize) -> Result<Var> {
        if intent >= self.cfg.intent_count {
            return Err(Error::Input(format!(
                "intent id {intent} outside [0, {})",
                self.cfg.intent_count
            )));
        }
        let logits = self.intent_logits(ctx, enc)?;
        ctx.tape.cross_entropy_ids(logits, &[intent])
    }

    /// Decoder logits over `tokens`, routed through the fusion path when a
    /// text encoder is attached.
    pub fn decode_logits(&self, ctx: &mut Ctx<'_, T>, tokens: &[usize], enc: Var) -> Result<Var> {
        match &self.fusion {
            None => self.decoder.forward(ctx, tokens, enc),
            Some(f) => self.fusion_decode(ctx, f, tokens, enc),
        }
    }

    /// Concatenate decoder and (prefix-restricted) text-encoder states,
    /// project back to `d_model`, then apply the decoder output layer.
    fn fusion_decode(&self, ctx: &mut Ctx<'_, T>, f: &Fusion, tokens: &[usize], enc: Var) -> Result<Var> {
        let h = self.decoder.hidden(ctx, tokens, enc)?;
        let t = f.text.hidden(ctx, tokens, true)?;
        let joined = ctx.tape.concat(&[h, t], 1)?;
        let fused = f.proj.forward(ctx, joined)?;
        self.decoder.output.forward(ctx, fused)
    }

    /// Teacher-forced ASR loss summed over the non-PAD target positions.
    pub fn asr_loss(&self, ctx: &mut Ctx<'_, T>, enc: Var, tokens: &[usize]) -> Result<Var> {
        let seq = unpadded(tokens)?;
        let logits = self.decode_logits(ctx, &seq[..seq.len() - 1], enc)?;
        ctx.tape.cross_entropy_ids(logits, &seq[1..])
    }

    /// `slu + λ·asr` with one shared encoder pass.
    pub fn multitask_loss(
        &self,
        ctx: &mut Ctx<'_, T>,
        x: Var,
        tokens: &[usize],
        intent: usize,
        lambda: f64,
    ) -> Result<MultiTaskLoss> {
        validate_lambda(lambda)?;
        let enc = self.encode(ctx, x)?;
        let slu = self.slu_loss(ctx, enc, intent)?;
        let asr = self.asr_loss(ctx, enc, tokens)?;
        let weighted = ctx.tape.scale(asr, T::of(lambda));
        let total = ctx.tape.add(slu, weighted)?;
        Ok(MultiTaskLoss { slu, asr, total })
    }

    /// Argmax decoding from BOS until EOS or `max_len` emitted tokens.
    /// The returned sequence excludes BOS and includes EOS if emitted.
    pub fn greedy_decode(&self, x: &Tensor<T>, max_len: usize) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let xv = self.input(&mut tape, x)?;
        let mut ctx = Ctx::new(&mut tape, &self.params);
        let enc = self.encode(&mut ctx, xv)?;
        let mut tokens = vec![BOS];
        while tokens.len() <= max_len {
            let logits = self.decode_logits(&mut ctx, &tokens, enc)?;
            let v = self.cfg.vocab_size;
            let last = &ctx.tape.value(logits)[(tokens.len() - 1) * v..tokens.len() * v];
            let next = argmax(last);
            tokens.push(next);
            if next == EOS {
                break;
            }
        }
        Ok(tokens.split_off(1))
    }
}

/// Index of the first maximum.
pub fn argmax<T: Float>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

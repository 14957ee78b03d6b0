use super::attention::{AttentionMask, MultiHeadAttention};
use super::{sinusoidal_positions, Ctx, ModelConfig};
use crate::autodiff::{Float, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::rng::SeededRng;

/// `y = x·W + b` with `W: [in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let w = store.glorot(format!("{prefix}.w"), fan_in, fan_out, rng);
        let b = store.constant(format!("{prefix}.b"), &[fan_out], 0.0);
        Self { w, b }
    }

    /// Same layout with all weights zero.
    pub fn zeros<T: Float>(store: &mut ParamStore<T>, prefix: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = store.constant(format!("{prefix}.w"), &[fan_in, fan_out], 0.0);
        let b = store.constant(format!("{prefix}.b"), &[fan_out], 0.0);
        Self { w, b }
    }

    pub fn forward<T: Float>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.w);
        let b = ctx.param(self.b);
        let xw = ctx.tape.matmul(x, w)?;
        ctx.tape.add(xw, b)
    }
}

/// Layer normalization with learned gain and bias.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Float>(store: &mut ParamStore<T>, prefix: &str, d: usize) -> Self {
        Self {
            gamma: store.constant(format!("{prefix}.gamma"), &[d], 1.0),
            beta: store.constant(format!("{prefix}.beta"), &[d], 0.0),
        }
    }

    pub fn forward<T: Float>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let n = ctx.tape.layer_norm(x);
        let g = ctx.param(self.gamma);
        let b = ctx.param(self.beta);
        let scaled = ctx.tape.mul(n, g)?;
        ctx.tape.add(scaled, b)
    }
}

/// Position-wise `relu(x·W1 + b1)·W2 + b2`.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_model: usize,
        d_inner: usize,
        rng: &mut SeededRng,
    ) -> Self {
        Self {
            inner: Linear::new(store, &format!("{prefix}.fc1"), d_model, d_inner, rng),
            outer: Linear::new(store, &format!("{prefix}.fc2"), d_inner, d_model, rng),
        }
    }

    pub fn forward<T: Float>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.inner.forward(ctx, x)?;
        let h = ctx.tape.relu(h);
        self.outer.forward(ctx, h)
    }
}

fn residual_norm<T: Float>(ctx: &mut Ctx<'_, T>, x: Var, sub: Var, norm: &LayerNorm) -> Result<Var> {
    let sub = ctx.dropout(sub)?;
    let sum = ctx.tape.add(x, sub)?;
    norm.forward(ctx, sum)
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub self_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new<T: Float>(store: &mut ParamStore<T>, prefix: &str, cfg: &ModelConfig, rng: &mut SeededRng) -> Self {
        Self {
            self_attn: MultiHeadAttention::new(
                store,
                &format!("{prefix}.self_attn"),
                cfg.d_model,
                cfg.n_heads,
                cfg.d_k,
                cfg.d_v,
                rng,
            ),
            norm1: LayerNorm::new(store, &format!("{prefix}.norm1"), cfg.d_model),
            ffn: FeedForward::new(store, &format!("{prefix}.ffn"), cfg.d_model, cfg.d_inner, rng),
            norm2: LayerNorm::new(store, &format!("{prefix}.norm2"), cfg.d_model),
        }
    }

    pub fn forward<T: Float>(&self, ctx: &mut Ctx<'_, T>, x: Var, mask: &AttentionMask) -> Result<Var> {
        let a = self.self_attn.forward(ctx, x, x, mask)?;
        let x = residual_norm(ctx, x, a, &self.norm1)?;
        let f = self.ffn.forward(ctx, x)?;
        residual_norm(ctx, x, f, &self.norm2)
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub norm3: LayerNorm,
}

impl DecoderLayer {
    pub fn new<T: Float>(store: &mut ParamStore<T>, prefix: &str, cfg: &ModelConfig, rng: &mut SeededRng) -> Self {
        let mha = |store: &mut ParamStore<T>, name: &str, rng: &mut SeededRng| {
            MultiHeadAttention::new(
                store,
                &format!("{prefix}.{name}"),
                cfg.d_model,
                cfg.n_heads,
                cfg.d_k,
                cfg.d_v,
                rng,
            )
        };
        let self_attn = mha(store, "self_attn", rng);
        let norm1 = LayerNorm::new(store, &format!("{prefix}.norm1"), cfg.d_model);
        let cross_attn = mha(store, "cross_attn", rng);
        Self {
            self_attn,
            norm1,
            cross_attn,
            norm2: LayerNorm::new(store, &format!("{prefix}.norm2"), cfg.d_model),
            ffn: FeedForward::new(store, &format!("{prefix}.ffn"), cfg.d_model, cfg.d_inner, rng),
            norm3: LayerNorm::new(store, &format!("{prefix}.norm3"), cfg.d_model),
        }
    }

    pub fn forward<T: Float>(&self, ctx: &mut Ctx<'_, T>, x: Var, memory: Var) -> Result<Var> {
        let (l, m) = (ctx.tape.shape(x)[0], ctx.tape.shape(memory)[0]);
        let a = self.self_attn.forward(ctx, x, x, &AttentionMask::causal(l))?;
        let x = residual_norm(ctx, x, a, &self.norm1)?;
        let c = self.cross_attn.forward(ctx, x, memory, &AttentionMask::full(l, m))?;
        let x = residual_norm(ctx, x, c, &self.norm2)?;
        let f = self.ffn.forward(ctx, x)?;
        residual_norm(ctx, x, f, &self.norm3)
    }
}

fn add_positions<T: Float>(ctx: &mut Ctx<'_, T>, x: Var, cfg: &ModelConfig) -> Result<Var> {
    let len = ctx.tape.shape(x)[0];
    let pe = sinusoidal_positions::<T>(len, cfg.d_model, cfg.max_positions)?;
    if !cfg.use_positions {
        return Ok(x);
    }
    let pe = ctx.tape.constant(pe);
    ctx.tape.add(x, pe)
}

/// Acoustic encoder: linear input projection, positions, then
/// `n_enc_layers` self-attention blocks. Length preserving.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: ModelConfig,
    pub input_proj: Linear,
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new<T: Float>(store: &mut ParamStore<T>, prefix: &str, cfg: &ModelConfig, rng: &mut SeededRng) -> Self {
        let input_proj = Linear::new(store, &format!("{prefix}.input_proj"), cfg.input_dim, cfg.d_model, rng);
        let layers = (0..cfg.n_enc_layers)
            .map(|i| EncoderLayer::new(store, &format!("{prefix}.layer{i}"), cfg, rng))
            .collect();
        Self {
            cfg: cfg.clone(),
            input_proj,
            layers,
        }
    }

    /// `x: [frames, input_dim]` → `[frames, d_model]`.
    pub fn forward<T: Float>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.input_proj.forward(ctx, x)?;
        let mut h = add_positions(ctx, h, &self.cfg)?;
        let t = ctx.tape.shape(h)[0];
        let mask = AttentionMask::full(t, t);
        for layer in &self.layers {
            h = layer.forward(ctx, h, &mask)?;
        }
        Ok(h)
    }
}

/// Autoregressive decoder over token ids with cross-attention to an
/// encoder output.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub cfg: ModelConfig,
    pub embed: ParamId,
    pub layers: Vec<DecoderLayer>,
    pub output: Linear,
}

impl Decoder {
    pub fn new<T: Float>(store: &mut ParamStore<T>, prefix: &str, cfg: &ModelConfig, rng: &mut SeededRng) -> Self {
        let embed = store.glorot(format!("{prefix}.embed"), cfg.vocab_size, cfg.d_model, rng);
        let layers = (0..cfg.n_dec_layers)
            .map(|i| DecoderLayer::new(store, &format!("{prefix}.layer{i}"), cfg, rng))
            .collect();
        let output = Linear::new(store, &format!("{prefix}.output"), cfg.d_model, cfg.vocab_size, rng);
        Self {
            cfg: cfg.clone(),
            embed,
            layers,
            output,
        }
    }

    /// Final hidden states, `[tokens, d_model]`.
    pub fn hidden<T: Float>(&self, ctx: &mut Ctx<'_, T>, tokens: &[usize], memory: Var) -> Result<Var> {
        let table = ctx.param(self.embed);
        let e = ctx.tape.embedding(table, tokens)?;
        let mut h = add_positions(ctx, e, &self.cfg)?;
        for layer in &self.layers {
            h = layer.forward(ctx, h, memory)?;
        }
        Ok(h)
    }

    /// Per-position vocabulary logits, `[tokens, vocab_size]`.
    pub fn forward<T: Float>(&self, ctx: &mut Ctx<'_, T>, tokens: &[usize], memory: Var) -> Result<Var> {
        let h = self.hidden(ctx, tokens, memory)?;
        self.output.forward(ctx, h)
    }
}

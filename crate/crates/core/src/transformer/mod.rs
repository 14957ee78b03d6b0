//! Encoder and decoder building blocks: multi-head attention, position-wise
//! feed-forward, sinusoidal positions and masking. Layers are post-norm.

mod attention;
mod config;
mod layers;

pub use attention::{AttentionMask, MultiHeadAttention};
pub use config::ModelConfig;
pub use layers::{Decoder, DecoderLayer, Encoder, EncoderLayer, FeedForward, LayerNorm, Linear};

use crate::autodiff::{Float, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Everything a forward pass needs: the tape being recorded, the parameter
/// values, and (in training mode only) the dropout generator.
pub struct Ctx<'a, T> {
    pub tape: &'a mut Tape<T>,
    pub params: &'a ParamStore<T>,
    dropout: Option<(f64, &'a mut SeededRng)>,
}

impl<'a, T: Float> Ctx<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, params: &'a ParamStore<T>) -> Self {
        Self {
            tape,
            params,
            dropout: None,
        }
    }

    /// Enable dropout with probability `p`; a no-op when `p == 0`.
    pub fn with_dropout(mut self, p: f64, rng: &'a mut SeededRng) -> Self {
        if p > 0.0 {
            self.dropout = Some((p, rng));
        }
        self
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.params, id)
    }

    /// Inverted dropout.
    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some((p, rng)) = self.dropout.as_mut() else {
            return Ok(x);
        };
        let keep = 1.0 / (1.0 - *p);
        let shape = self.tape.shape(x).to_vec();
        let mask = (0..self.tape.value(x).len())
            .map(|_| if rng.bernoulli(*p) { T::zero() } else { T::of(keep) })
            .collect();
        let m = self.tape.constant(Tensor::new(shape, mask)?);
        self.tape.mul(x, m)
    }
}

/// `len × d_model` sinusoidal encoding: even columns `sin(pos / 10000^(2k/d))`,
/// odd columns the matching cosine.
pub fn sinusoidal_positions<T: Float>(len: usize, d_model: usize, max_positions: usize) -> Result<Tensor<T>> {
    if len > max_positions {
        return Err(Error::Config(format!(
            "sequence of length {len} exceeds max_positions {max_positions}"
        )));
    }
    let mut data = Vec::with_capacity(len * d_model);
    for pos in 0..len {
        for i in 0..d_model {
            let k = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * k / d_model as f64);
            data.push(T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(vec![len, d_model], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_zero_alternates_zero_one() {
        let pe = sinusoidal_positions::<f64>(4, 6, 16).unwrap();
        assert_eq!(&pe.data()[..6], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn positions_are_bounded_and_match_closed_form() {
        let d = 16;
        let pe = sinusoidal_positions::<f64>(50, d, 64).unwrap();
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        for k in [0usize, 3, 7] {
            let expected = (10.0f64 / 10000f64.powf(2.0 * k as f64 / d as f64)).sin();
            assert_eq!(pe.at(10, 2 * k), expected);
        }
    }

    #[test]
    fn too_long_is_a_config_error() {
        assert!(matches!(sinusoidal_positions::<f32>(65, 8, 64), Err(Error::Config(_))));
    }
}

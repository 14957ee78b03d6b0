#![allow(dead_code)]

use slu_core::data::synth::synthetic_vocabulary;
use slu_core::data::{prepare_waveforms, synth_generate, SyntheticTaskSpec};
use slu_core::models::{BOS, EOS};
use slu_core::{FeatureConfig, Float, ModelConfig, SeededRng, SluModel, Tensor, Utterance};

pub fn random_tensor<T: Float>(shape: &[usize], rng: &mut SeededRng) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| T::of(rng.normal(0.0, 1.0))).collect()).unwrap()
}

/// Tiny model with every parameter (including the zero-initialized intent
/// head) drawn at random, so no gradient path is trivially zero.
pub fn tiny_model(input_dim: usize, vocab: usize, intents: usize, seed: u64) -> SluModel<f64> {
    let mut m = SluModel::<f64>::new(ModelConfig::tiny(input_dim, vocab, intents), seed).unwrap();
    randomize_head(&mut m, seed);
    m
}

pub fn randomize_head<T: Float>(m: &mut SluModel<T>, seed: u64) {
    let mut rng = SeededRng::derived(seed, "test-head");
    for (name, t) in m.params.iter_mut() {
        if name.starts_with("intent_head.") {
            for v in t.data_mut() {
                *v = T::of(rng.normal(0.0, 0.5));
            }
        }
    }
}

pub fn tiny_text_config(vocab: usize) -> ModelConfig {
    let mut c = ModelConfig::tiny(1, vocab, 1);
    c.n_dec_layers = 0;
    c
}

pub fn random_tokens(len: usize, vocab: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut t = vec![BOS];
    t.extend((0..len).map(|_| 4 + rng.below(vocab - 4)));
    t.push(EOS);
    t
}

/// Featurized synthetic utterances of one language.
pub fn synthetic(spec: &SyntheticTaskSpec, n: usize) -> Vec<Utterance> {
    let c = synth_generate(spec, n).unwrap();
    prepare_waveforms(
        &c.waveforms,
        &c.entries,
        &synthetic_vocabulary(),
        &spec.intent_labels().unwrap(),
        &FeatureConfig::default(),
    )
    .unwrap()
}

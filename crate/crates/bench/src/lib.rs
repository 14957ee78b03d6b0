//! Shared fixtures for the benchmarks in `benches/`.

use slu_core::data::synth::synthetic_vocabulary;
use slu_core::data::{prepare_waveforms, synth_generate, SyntheticTaskSpec};
use slu_core::{FeatureConfig, ModelConfig, SluModel, Utterance, Waveform};

/// `n` featurized language-B utterances and their waveforms.
pub fn corpus(n: usize) -> (Vec<Waveform>, Vec<Utterance>) {
    let spec = SyntheticTaskSpec::language_b(0.05, 1);
    let c = synth_generate(&spec, n).expect("synthetic corpus");
    let utts = prepare_waveforms(
        &c.waveforms,
        &c.entries,
        &synthetic_vocabulary(),
        &spec.intent_labels().expect("labels"),
        &FeatureConfig::default(),
    )
    .expect("features");
    (c.waveforms, utts)
}

/// The default desk-scale model sized for the synthetic vocabulary.
pub fn desk_model() -> SluModel<f32> {
    let mut cfg = ModelConfig::desk();
    cfg.vocab_size = synthetic_vocabulary().len();
    SluModel::new(cfg, 1).expect("model")
}

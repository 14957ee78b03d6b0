//! Manifests, padded batches and the synthetic two-language corpus.

mod batch;
mod manifest;
pub mod synth;

pub use batch::{make_batches, prepare, prepare_waveforms, Batch, Utterance};
pub use manifest::{load_manifest, parse_manifest, write_manifest, ManifestEntry, Source};
pub use synth::{synth_generate, synth_transcripts, Language, Segment, SyntheticCorpus, SyntheticTaskSpec};

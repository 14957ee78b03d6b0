//! Attention-based end-to-end spoken language understanding.
//!
//! An acoustic transformer encoder is shared by an intent classifier
//! (max-pooling over time) and an autoregressive ASR decoder. Three ways of
//! strengthening the encoder are supported: initializing it from an ASR
//! model trained on another language (`transfer`), training intent and ASR
//! objectives jointly (`models::SluModel::multitask_loss`), and fusing a
//! frozen pre-trained text encoder into the ASR decoder.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod features;
pub mod models;
pub mod rng;
pub mod train;
pub mod transfer;
pub mod transformer;

pub use autodiff::{AdamConfig, AdamState, DType, Float, ParamId, ParamStore, Tape, Tensor, Var};
pub use data::{Batch, ManifestEntry, Utterance};
pub use error::{Error, Result};
pub use features::{FeatureConfig, FeatureMatrix, Waveform};
pub use models::{IntentLabelSet, SluModel, Vocabulary};
pub use rng::SeededRng;
pub use train::{evaluate, train, EvalStats, MetricsRow, Objective, TrainOptions};
pub use transfer::{Checkpoint, TransferPolicy};
pub use transformer::{Ctx, ModelConfig};

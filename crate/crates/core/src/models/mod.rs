//! Trainable systems: baseline intent model, ASR decoder loss, the
//! multi-task composite and the text-fusion variant.

mod slu;
mod text_encoder;
mod vocab;

pub use slu::{
    argmax, unpadded, validate_lambda, Fusion, MultiTaskLoss, SluModel, DECODER_PREFIX, ENCODER_PREFIX, FUSION_PREFIX,
    INTENT_PREFIX,
};
pub use text_encoder::{
    masked_token_loss, pretrain_text_encoder, PretrainedTextEncoder, TextEncoder, TextPretrainOptions, TEXT_PREFIX,
};
pub use vocab::{joint_intent, IntentLabelSet, Vocabulary, BOS, EOS, MASK, PAD};

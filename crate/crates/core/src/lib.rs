//! Character-level CTC speech recogniser with a DeepSpeech-style acoustic
//! model, per-layer freezing for cross-lingual fine-tuning, an n-gram
//! character LM, prefix beam search, and WER/CER scoring.

pub mod ctc;
pub mod data;
pub mod decoder;
pub mod eval;
pub mod features;
pub mod harness;
pub mod lm;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod par;
pub mod transfer;

//! CPU beam-search inference for attentional GRU encoder-decoder translation
//! models.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] dense row-major kernels (GEMM, activations, log-softmax)
//! * [`model`] parameter schema, vocabularies, the binary container, seeded
//!   random models and checkpoint averaging
//! * [`nnet`] the forward pass: embeddings, GRU cells, bidirectional encoder,
//!   attention and the decoder step (optionally over a shortlist)
//! * [`search`] ensemble beam search plus an exhaustive reference search
//! * [`shortlist`] per-sentence output vocabulary selection
//! * [`subword`] byte-pair encoding and whitespace preprocessing
//! * [`eval`] corpus BLEU
//! * [`engine`] the end-to-end translation pipeline
//! * [`bench`] throughput, latency and beam-sweep measurement

pub mod bench;
pub mod engine;
pub mod error;
pub mod eval;
pub mod model;
pub mod nnet;
pub mod search;
pub mod shortlist;
pub mod subword;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{ModelConfig, ModelParams, Vocabulary};
pub use search::{beam_search, exhaustive_search, DecodeOptions, Hypothesis};
pub use shortlist::ShortList;
pub use tensor::Tensor2D;

/// End-of-sentence token id.
pub const EOS_ID: u32 = 0;
/// Unknown-token id.
pub const UNK_ID: u32 = 1;
/// Surface form of [`EOS_ID`].
pub const EOS: &str = "</s>";
/// Surface form of [`UNK_ID`].
pub const UNK: &str = "<unk>";

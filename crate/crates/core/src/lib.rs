//! Caption fluency repair: synthetic false-repetition errors, a BiLSTM
//! deletion tagger trained from scratch, and self-contained caption metrics.
//!
//! The pipeline has four stages, one module each:
//!
//! 1. [`corpus`] — tokenization, vocabulary, JSONL caption/pair files.
//! 2. [`corruptor`] — rule-based corruption of clean captions into
//!    labeled training pairs (five repetition/tail rules).
//! 3. [`neural`] — word embedding + three-layer bidirectional LSTM +
//!    linear classifier, trained with Adam on cross-entropy; all math in
//!    `f64` with exact hand-derived backpropagation through time.
//! 4. [`corrector`] — applies the trained tagger as a deletion mask.
//!
//! [`metrics`] evaluates candidate captions against references (BLEU-4,
//! ROUGE-L, CIDEr-D, a TF-IDF fluency-penalized score) and scores
//! predicted label sequences (token accuracy, macro-F1).

// Force the BLAS provider to be linked for ndarray's `blas` feature.
extern crate openblas_src;

pub mod corpus;
pub mod corrector;
pub mod corruptor;
pub mod error;
pub mod metrics;
pub mod neural;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

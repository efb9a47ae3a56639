//! From-scratch sequence tagger: word embedding, three bidirectional LSTM
//! layers, and a two-class linear head, with exact backpropagation through
//! time, Adam, an exponential learning-rate schedule, and binary
//! checkpoints. All math is `f64`.
//!
//! Ragged batches are packed step-major ([`batch::Packing`]) so padding
//! never enters the recurrence; the per-sequence entry points are the same
//! numeric path with a batch of one.

pub mod batch;
mod backward;
mod checkpoint;
mod forward;
pub mod gradcheck;
mod loss;
mod optim;
mod params;
mod train;

pub use backward::backward;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{
    bilstm_layer_forward, embed_forward, forward_batch, lstm_cell_forward, model_forward,
    sample_dropout_masks, ForwardTrace,
};
pub use loss::softmax_cross_entropy;
pub use optim::{adam_step, lr_schedule, AdamState};
pub use params::{Dims, LstmDirection, LstmLayer, ModelParameters, GATE_ORDER, NUM_LAYERS};
pub use train::{evaluate_tagger, train, train_model, EpochStats, TrainOutcome, TrainingConfig};

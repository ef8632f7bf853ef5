//! Multi-ABN instruction generator: a perception branch (LSTM over crop,
//! relation and word features) plus visual attention branches over M views
//! and a linguistic attention branch over the LSTM state.

pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod engine;
pub mod error;
pub mod inputs;
pub mod model;

pub use checkpoint::{dump, Checkpoint, RawCheckpoint, FORMAT_VERSION, MAGIC};
pub use config::{Ablation, ConvSpec, ModelConfig, REL_DIM};
pub use decode::{
    beam_search, greedy_search, Decoded, Decoder, DecoderStep, Hypothesis, ModelScorer, StepAttention, StepScorer,
};
pub use engine::{
    ablation_study, attention_byte, batch_gradients, caption, caption_inputs, decoder_label, evaluate, export_attention, initial_checkpoint, train, training_units,
    AblationRow, AttentionExport, Caption, Evaluation, LossRecord, ModelOverrides, Prediction, RunReport, TrainConfig, TrainOutcome,
};
pub use error::{CoreError, Result};
pub use inputs::{image_tensor, relation_features, SampleInputs};
pub use model::{BranchOut, DecoderState, LossValues, MultiAbn, Session, StepVars, ViewFeatures};

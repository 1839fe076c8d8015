//! News early classification.
//!
//! A gated recurrent network reads the messages of a news event one at a
//! time and, after every message, either labels the event (fake or real)
//! or waits for more evidence. Training uses a cross-entropy loss weighted
//! toward early timesteps; inference uses a three-clause stopping rule.
//!
//! Module map:
//!
//! - [`numerics`]: dense matrices, stable activations, Adam.
//! - [`model`]: GRU recurrence, linear head, backpropagation through time.
//! - [`objective`]: earliness-weighted cross-entropy and its gradient.
//! - [`streaming`]: the stopping rule and the online labeling session.
//! - [`features`]: per-message feature vectors (text, user, timing).
//! - [`data`]: event corpus format, splitting, synthetic generation.
//! - [`evaluation`]: per-class metrics, earliness, alpha sweep, baselines.
//! - [`harness`]: training loop and checkpoints.

pub mod codec;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod rng;
pub mod streaming;

pub use data::{DatasetSplit, EventStream, Label, RawMessage, SyntheticConfig, UserProfile};
pub use error::{NecError, Result};
pub use evaluation::{EvalReport, EventRecord, LabeledSequence, SweepRow};
pub use features::{FeaturePipeline, FeatureVector};
pub use harness::{Checkpoint, TrainConfig};
pub use model::{ForwardTrace, ModelParams};
pub use numerics::{AdamConfig, AdamState, Matrix, Vector};
pub use objective::{LossConfig, WeightingMode};
pub use streaming::{Decision, DecisionState, Session, StoppingConfig, StreamOutcome};

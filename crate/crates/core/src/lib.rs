//! Raw-waveform speaker verification.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors, a reverse-mode differentiation tape, the
//!   AMSGrad optimizer and the `RWNT` checkpoint container.
//! * [`audio`]: WAV ingestion, pre-emphasis, crop/duplicate length fitting,
//!   mini-batching and the synthetic multi-speaker corpus.
//! * [`model`]: the convolutional-recurrent embedding network, its
//!   pre-training CNN variant and weight transfer between the two.
//! * [`objectives`]: cross-entropy, center loss and speaker basis loss.
//! * [`backend`]: trial features (b-vector, rb-vector, concat&mul), cosine
//!   scoring and the back-end DNN classifier.
//! * [`scoring`]: equal error rate, DET points and trial-list scoring.
//! * [`trainer`]: training loops for all three networks.
//! * [`config`]: the flat run configuration file.

pub mod audio;
pub mod backend;
pub mod config;
pub mod error;
pub mod model;
pub mod objectives;
pub mod scoring;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Graph, Real, Tensor, Var};

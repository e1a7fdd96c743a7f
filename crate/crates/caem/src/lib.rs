//! Unsupervised anomaly detection for multi-sensor time series.
//!
//! The detector couples two views of a sliding window:
//!
//! * a **characterization** path: a convolutional autoencoder compresses
//!   each sub-window into a latent vector while a maximum mean discrepancy
//!   penalty pulls the latent distribution toward a standard Gaussian;
//! * a **memory** path: an attention-equipped bidirectional LSTM and a
//!   linear autoregressive head both predict the final sub-window's latent
//!   token from the preceding ones.
//!
//! Reconstruction error and the two prediction errors are trained jointly
//! and summed into one anomaly score; the decision threshold is the mean
//! plus one standard deviation of the scores on the (normal) training set.
//!
//! Everything numeric is hand-rolled on a reverse-mode tape ([`tensor`]),
//! in `f64`, with deterministic seeded streams everywhere randomness is
//! needed, so training runs are reproducible byte for byte.
//!
//! Start with the runnable examples:
//!
//! ```text
//! cargo run --example autodiff_basics
//! cargo run --example train_and_detect
//! cargo run --example ablation_study
//! ```
//!
//! or the `caem` binary (`caem generate|train|detect|evaluate|gradcheck|ablate`).

pub mod config;
pub mod data;
pub mod detect;
pub mod error;
pub mod gradcheck;
pub mod mmd;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

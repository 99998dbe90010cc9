//! Early battery cycle-life prediction from sequences of discharge-capacity
//! curves.
//!
//! Each cell contributes a sequence of `ΔQ(V) = Q_C(V) - Q_10(V)` rows on a
//! 151-point voltage grid (3.5 V down to 2.0 V). A two-layer LSTM regressor,
//! implemented from scratch with backpropagation through time and Adam,
//! maps the sequence to cycle life. A single-feature linear model on
//! `log10 var(Q_100(V) - Q_10(V))` serves as the baseline.
//!
//! - [`dataset`]: cell records, file formats, synthetic cells, splits
//! - [`features`]: voltage grid, ΔQ sequences, scaling, augmentation
//! - [`nn`]: LSTM network, BPTT, gradient checking, model artifact
//! - [`optim`]: Adam and the training loop
//! - [`baseline`]: log-variance linear regression
//! - [`eval`]: metrics, repeat experiments, terminal-cycle sweeps
//!
//! Batch gradients and repeat experiments run data-parallel through rayon
//! when the default `parallel` feature is enabled; see [`exec::Execution`].

pub mod baseline;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod exec;
pub mod features;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};
pub use exec::Execution;

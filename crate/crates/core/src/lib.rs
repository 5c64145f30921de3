//! Dense associative memory.
//!
//! Energy-based memories of the form `E = -Σ_μ F(ξ^μ · σ)` with polynomial or
//! rectified-polynomial `F`, their asynchronous recall dynamics, closed-form
//! and Monte-Carlo storage capacity, and the one-step classifier together
//! with its dual one-hidden-layer network and minibatch trainer.
//!
//! # Layout
//!
//! - [`energy`]: scalar energy functions, spin states, stored memories and the
//!   per-spin energy gap.
//! - [`dynamics`]: asynchronous energy descent, convergence, and the XOR
//!   construction.
//! - [`capacity`]: capacity formulas, recovery trials and `K½` search.
//! - [`classifier`]: the one-step classifier, both gradient framings,
//!   momentum updates, training, checkpoints.
//! - [`data`]: IDX parsing, pixel mapping, stratified splits and minibatches.
//! - [`analysis`]: feature/prototype diagnostics and exporters.
//!
//! All randomness flows from explicit 64-bit seeds through [`rng::stream_rng`],
//! so every experiment is reproducible regardless of thread count.

pub mod analysis;
pub mod capacity;
pub mod classifier;
pub mod data;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod rng;

pub use energy::{EnergyKind, EnergyModel, MemorySet, OverlapCache, SpinState};
pub use error::{Error, Result};

//! Desk-scale adversarial distribution matching (ADM) and adversarial
//! distillation pre-training (ADP) for diffusion/flow models on synthetic
//! low-dimensional data.
//!
//! The crate is organised bottom-up:
//!
//! * [`nnad`] reverse-mode tape, dense networks, AdamW, checkpoints
//! * [`diffcore`] noise schedules, parameterisation conversions, PF-ODE solvers
//! * [`datasets`] synthetic ground-truth mixtures
//! * [`scorenets`] teacher / fake / generator networks and discriminators
//! * [`adp`] ODE-pair collection and adversarial pre-training
//! * [`adm`] adversarial distribution matching and the DMD baseline
//! * [`evallab`] histogram divergences, mode coverage and diversity
//! * [`harness`] configuration, persistence and the CLI entry point

pub mod adm;
pub mod adp;
pub mod datasets;
pub mod diffcore;
mod error;
pub mod evallab;
pub mod harness;
pub mod nnad;
pub mod par;
pub mod rng;
pub mod scorenets;

pub use error::{Error, Result};

/// Row-major batch of points, one sample per row.
pub type Mat = ndarray::Array2<f64>;

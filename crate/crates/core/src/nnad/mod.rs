//! Minimal reverse-mode differentiation over dense batches, the dense
//! networks built on it, the AdamW variant shared by every trainable role,
//! sinusoidal time embeddings and the binary checkpoint format.

pub mod checkpoint;
mod embed;
mod mlp;
mod optim;
mod tape;

pub use embed::{embed_times, time_embed, DEFAULT_TEMB_DIM};
pub use mlp::{mlp_forward, Activation, Binding, Layer, ParamGrads, ParamStore, Recorded};
pub use optim::{AdamW, OptState, StepOutcome};
pub use tape::{Gradients, Tape, Var};

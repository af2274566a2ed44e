//! Self-supervised pretraining for 3D skeleton sequences.
//!
//! A student encoder sees only the joints left visible by motion-aware tube
//! masking; a light decoder fills the masked slots and a linear head
//! regresses contextualized targets built from every layer of an EMA
//! teacher encoder that sees the whole sequence. The teacher encoder is what
//! downstream protocols (linear probe, fine-tuning, semi-supervised,
//! transfer) evaluate.

pub mod data;
pub mod checkpoint;
pub mod config;
pub mod distill;
pub mod error;
pub mod eval;
pub mod masking;
pub mod nn;
pub mod optim;
pub mod pretrain;

pub use error::{Error, Result};

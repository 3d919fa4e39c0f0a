//! Score-weighted contrastive representation learning at desk scale.
//!
//! A denoising score model is trained first and frozen; its outputs on two
//! augmented views give a per-pair weight for the contrastive loss of the
//! encoder. The modules cover augmentation, score matching, the four
//! contrastive objectives, data loading, the training loop and evaluation.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod contrastive;
pub mod data;
pub mod eval;
mod error;
mod names;
pub mod nn;
pub mod rng;
pub mod score;
pub mod trainer;

pub use error::{CheckpointError, Error, Result};

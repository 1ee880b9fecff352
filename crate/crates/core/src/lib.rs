//! Desk-scale distributed continual learning.
//!
//! Self-centered devices finetune their own task starting from a shared
//! initialization; a consolidated multi-head model absorbs each resulting
//! model through double output distillation plus projected latent
//! distillation, using only out-of-distribution images.

pub mod datagen;
pub mod dcl;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod numerics;

pub use error::{Error, Result};

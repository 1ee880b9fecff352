//! The distributed continual learning protocol: local adaptation on
//! self-centered devices, data-agnostic consolidation, and the sequential
//! and independent orchestration schemes.

mod adapt;
mod consolidate;
mod messages;
mod schemes;

use rand::RngCore;

use crate::numerics::RngStream;

pub use adapt::{adapt, AdaptConfig, AdaptReport};
pub use consolidate::{consolidate, consolidation_loss, initial_student, Consolidated, LossBreakdown};
pub use messages::{Direction, InitMessage, MessageLog, MessageRecord, Residency, ResidencyGuard, SCMessage};
pub use schemes::{
    initial_model, naive_finetune_baseline, run_independent, run_sequential, RunOutcome, SchemeConfig, StepRecord,
};

/// A `u64` seed for component `label`/`index` of a run.
pub(crate) fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    RngStream::new(seed, label).split_index("seed", index).next_u64()
}

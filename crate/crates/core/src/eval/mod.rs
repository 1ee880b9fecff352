//! Stream metrics, task-aware and task-agnostic inference, linear probes
//! and representation similarity.

mod accuracy;
mod cka;
mod probe;

pub use accuracy::{argmax_agreement, labeled_accuracy, predict, task_accuracy, AccuracyMatrix, InferenceMode};
pub use cka::{cka, cka_csv, cka_stream_report, CkaResult};
pub use probe::{linear_probe, probe_features, ProbeConfig, ProbeReport};

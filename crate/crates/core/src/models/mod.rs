//! Backbones, the multi-head wrapper with activation taps, and model files.

mod arch;
pub mod io;
mod model;

pub use arch::{hex, ArchKind, ArchSpec, LayerInfo};
pub use io::{decode_model, decode_sc_model, encode_model, encode_sc_model, load_model, save_model};
pub use model::{
    build_model, init_backbone, init_head, BoundModel, Head, HeadSelector, Inference, ModelOutput,
    MultiHeadModel, SCModel,
};

//! The generative image-to-text network.

mod config;
mod mask;
mod network;

pub use config::{DecoderStyle, ModelConfig};
pub use mask::{build_seq2seq_mask, AttentionMask};
pub use network::{GitModel, ImageFeatures, Visual};

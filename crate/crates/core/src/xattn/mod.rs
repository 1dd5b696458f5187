//! Cross-attention texture decoder.
//!
//! Rendering UV embeddings act as queries and the embeddings of an
//! instance's reference UVs as keys and values. Each pixel attends only to
//! references of its own instance. The attention output passes through a
//! two-layer MLP, is added back onto the rendering embedding and a shared
//! head maps the result to RGB through a sigmoid.

mod attention;
mod decoder;

pub use attention::{attention_values, attention_weights, multihead_attention, AttentionShape, Segment};
pub use decoder::{decode_frame, decode_frame_plain, decode_frame_with, Decoder, DecoderConfig, FrameLayout};

use crate::diffcore::DiffError;
use crate::texfield::TexError;

#[derive(Debug, thiserror::Error)]
pub enum XattnError {
    #[error("decoder config: {0}")]
    Config(String),
    #[error("instance {instance} has no references")]
    NoReferences { instance: u32 },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Tex(#[from] TexError),
}

//! Dual-stream multi-modal DiT: config, seeded weights, the MMAttn layer and
//! rectified-flow noising of image tokens.

mod config;
mod forward;
mod io;
mod layer;
mod weights;

pub use config::{ModelConfig, DEFAULT_TOKENS};
pub use forward::{
    forward_with_trace, image_tokens_from_gray, noise_image, prepare_inputs, run_layers,
    timestep_embedding, ModelInputs, IMAGE_LIFT_SEED, NOISE_STREAM,
};
pub(crate) use io::ByteReader;
pub use io::WEIGHTS_MAGIC;
pub use layer::{
    mm_attention_layer, modulate, multi_head_attention, AttentionOutput, HeadAttention, HeadTrace,
    LayerTrace, Modulation, Qkv, StreamTrace,
};
pub use weights::{
    tensor_layout, EmbeddingTable, LayerWeights, Linear, MMDiTWeights, StreamWeights,
};

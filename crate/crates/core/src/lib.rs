//! Concept-attention saliency for dual-stream multi-modal diffusion
//! transformers.
//!
//! A small MM-DiT ([`mmdit`]) runs image and prompt tokens through joint
//! attention layers. A side stream of concept tokens ([`conceptattn`]) reuses
//! the prompt stream's parameters, attends to the image tokens without ever
//! being attended to, and yields per-concept saliency maps from dot products
//! in the attention output space. [`segeval`] scores those maps as zero-shot
//! segmentations.
//!
//! The engine is generic over the scalar type; the aliases below fix it to
//! `f64`, which is what the file formats store.

pub mod conceptattn;
pub mod error;
pub mod mmdit;
pub mod numerics;
pub mod planted;
pub mod segeval;

pub use error::{Error, Result};
pub use numerics::Real;

pub type Matrix = numerics::Matrix<f64>;
pub type Matrix32 = numerics::Matrix<f32>;
pub type Weights = mmdit::MMDiTWeights<f64>;
pub type Weights32 = mmdit::MMDiTWeights<f32>;
pub type LayerTrace = mmdit::LayerTrace<f64>;
pub type ConceptTrace = conceptattn::ConceptTrace<f64>;
pub type SaliencyStack = conceptattn::SaliencyStack<f64>;
pub type SaliencyMap = conceptattn::SaliencyMap<f64>;

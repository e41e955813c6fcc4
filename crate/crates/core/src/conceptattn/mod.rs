//! Concept tokens as a read-only third stream, and the saliency maps built
//! from them.

mod saliency;
mod scorefile;
mod stream;
mod vocab;

pub use saliency::{
    aggregate_frames, aggregate_layers, apply_softmax, raw_prompt_cross_attention,
    raw_saliency_scores, saliency_scores, HeadAggregation, Provenance, SaliencyMap,
    SaliencyOptions, SaliencySpace, SaliencyStack, SoftmaxAxis,
};
pub use scorefile::SCORES_MAGIC;
pub use stream::{
    concept_projections, concept_residual_update, forward_with_concepts, non_interference_check,
    one_directional_attention, run_concept_stream, streams_bit_identical, ConceptAttentionMode,
    ConceptStream, ConceptTrace, StreamTraces,
};
pub use vocab::{init_concepts, ConceptState, ConceptVocabulary};

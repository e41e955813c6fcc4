use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmdit::{
    forward_with_trace, multi_head_attention, prepare_inputs, run_layers, HeadAttention,
    LayerTrace, MMDiTWeights, Modulation, Qkv, StreamWeights,
};
use crate::numerics::{Matrix, Real};

use super::{init_concepts, ConceptState, ConceptVocabulary};

/// Which key/value slots concept queries may attend to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConceptAttentionMode {
    /// `[image; concepts]`.
    #[default]
    CrossAndSelf,
    /// Image slots only.
    CrossOnly,
    /// Concept slots only.
    SelfOnly,
    /// No attention: `o_c = v_c`.
    None,
}

impl ConceptAttentionMode {
    pub fn uses_cross(self) -> bool {
        matches!(self, Self::CrossAndSelf | Self::CrossOnly)
    }

    pub fn uses_self(self) -> bool {
        matches!(self, Self::CrossAndSelf | Self::SelfOnly)
    }
}

/// Concept-side computation of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptTrace<T = f64> {
    pub layer: usize,
    pub timestep: u32,
    pub mode: ConceptAttentionMode,
    pub c_in: Matrix<T>,
    pub q_c: Matrix<T>,
    pub k_c: Matrix<T>,
    pub v_c: Matrix<T>,
    /// Heads concatenated, `r × d_model`, before the output projection.
    pub o_c: Matrix<T>,
    pub heads: Vec<HeadAttention<T>>,
    pub c_next: Matrix<T>,
}

/// Layer-normalizes and modulates `c` with the prompt stream's adaLN output,
/// then applies the prompt stream's `Q_p`, `K_p`, `V_p`.
pub fn concept_projections<T: Real>(
    c: &ConceptState<T>,
    prompt: &StreamWeights<T>,
    cond: &[T],
) -> Result<Qkv<T>> {
    let m = prompt.modulation(cond)?;
    prompt.project_qkv(&c.c, &m)
}

/// Concept queries attend over image keys/values concatenated with the
/// concept keys/values (per `mode`). Prompt slots are never visible to
/// concepts, and nothing here feeds back into the image or prompt streams.
pub fn one_directional_attention<T: Real>(
    qkv_c: &Qkv<T>,
    trace: &LayerTrace<T>,
    mode: ConceptAttentionMode,
) -> Result<(Matrix<T>, Vec<HeadAttention<T>>)> {
    let d = trace.image.k.cols();
    if qkv_c.q.cols() != d || qkv_c.k.cols() != d || qkv_c.v.cols() != d {
        return Err(Error::shape(
            "one_directional_attention",
            qkv_c.q.shape(),
            trace.image.k.shape(),
        ));
    }
    let (k, v) = match mode {
        ConceptAttentionMode::CrossAndSelf => (
            Matrix::vstack(&[&trace.image.k, &qkv_c.k])?,
            Matrix::vstack(&[&trace.image.v, &qkv_c.v])?,
        ),
        ConceptAttentionMode::CrossOnly => (trace.image.k.clone(), trace.image.v.clone()),
        ConceptAttentionMode::SelfOnly => (qkv_c.k.clone(), qkv_c.v.clone()),
        ConceptAttentionMode::None => {
            let r = qkv_c.v.rows();
            let heads = (0..trace.n_heads)
                .map(|h| {
                    Ok(HeadAttention {
                        weights: Matrix::identity(r),
                        output: trace.head_slice(&qkv_c.v, h)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok((qkv_c.v.clone(), heads));
        }
    };
    let out = multi_head_attention(&qkv_c.q, &k, &v, trace.n_heads)?;
    Ok((out.output, out.heads))
}

fn residual_update<T: Real>(
    c: &Matrix<T>,
    o_c: &Matrix<T>,
    prompt: &StreamWeights<T>,
    m: &Modulation<T>,
) -> Result<Matrix<T>> {
    let mid = prompt.attention_residual(c, o_c, m)?;
    prompt.mlp_residual(&mid, m)
}

/// `c ← c + α₁ (P o_c)`, then `c ← c + α₂ MLP((1 + γ) lnorm(c) + β)`, with
/// projection, MLP and modulation taken from the prompt stream.
pub fn concept_residual_update<T: Real>(
    c: &ConceptState<T>,
    o_c: &Matrix<T>,
    prompt: &StreamWeights<T>,
    cond: &[T],
) -> Result<ConceptState<T>> {
    if o_c.shape() != c.c.shape() {
        return Err(Error::shape(
            "concept_residual_update",
            c.c.shape(),
            o_c.shape(),
        ));
    }
    let m = prompt.modulation(cond)?;
    Ok(ConceptState {
        c: residual_update(&c.c, o_c, prompt, &m)?,
        layer: c.layer + 1,
    })
}

/// Threads concept embeddings through the layers alongside a forward pass.
pub struct ConceptStream<'w, T: Real = f64> {
    weights: &'w MMDiTWeights<T>,
    state: ConceptState<T>,
    mode: ConceptAttentionMode,
}

impl<'w, T: Real> ConceptStream<'w, T> {
    pub fn new(
        vocab: &ConceptVocabulary,
        weights: &'w MMDiTWeights<T>,
        mode: ConceptAttentionMode,
    ) -> Result<Self> {
        Ok(Self {
            weights,
            state: init_concepts(vocab, &weights.embeddings)?,
            mode,
        })
    }

    pub fn state(&self) -> &ConceptState<T> {
        &self.state
    }

    /// Advances one layer against that layer's image-stream trace.
    pub fn step(&mut self, trace: &LayerTrace<T>) -> Result<ConceptTrace<T>> {
        if trace.layer != self.state.layer {
            return Err(Error::Invalid(format!(
                "trace for layer {} given to concept stream at layer {}",
                trace.layer, self.state.layer
            )));
        }
        let prompt = &self
            .weights
            .layers
            .get(trace.layer)
            .ok_or_else(|| Error::OutOfRange(format!("layer {}", trace.layer)))?
            .prompt;
        let m = prompt.modulation(&trace.cond)?;
        let qkv = prompt.project_qkv(&self.state.c, &m)?;
        let (o_c, heads) = one_directional_attention(&qkv, trace, self.mode)?;
        let c_next = residual_update(&self.state.c, &o_c, prompt, &m)?;
        let ct = ConceptTrace {
            layer: trace.layer,
            timestep: trace.timestep,
            mode: self.mode,
            c_in: std::mem::replace(&mut self.state.c, c_next.clone()),
            q_c: qkv.q,
            k_c: qkv.k,
            v_c: qkv.v,
            o_c,
            heads,
            c_next,
        };
        self.state.layer += 1;
        Ok(ct)
    }
}

/// Runs the concept stream over a completed forward pass. `traces` must be
/// layers `0..n` in order.
pub fn run_concept_stream<T: Real>(
    vocab: &ConceptVocabulary,
    traces: &[LayerTrace<T>],
    weights: &MMDiTWeights<T>,
    mode: ConceptAttentionMode,
) -> Result<Vec<ConceptTrace<T>>> {
    let mut stream = ConceptStream::new(vocab, weights, mode)?;
    traces.iter().map(|t| stream.step(t)).collect()
}

/// Per-layer image/prompt traces paired with the concept-stream traces.
pub type StreamTraces<T = f64> = (Vec<LayerTrace<T>>, Vec<ConceptTrace<T>>);

/// Forward pass with the concept stream advanced inside the layer loop.
pub fn forward_with_concepts<T: Real, S: AsRef<str>>(
    tokens: &[S],
    x0: &Matrix<T>,
    t: u32,
    noise_seed: u64,
    weights: &MMDiTWeights<T>,
    vocab: &ConceptVocabulary,
    mode: ConceptAttentionMode,
) -> Result<StreamTraces<T>> {
    let inputs = prepare_inputs(tokens, x0, t, noise_seed, weights)?;
    let mut stream = ConceptStream::new(vocab, weights, mode)?;
    let mut concept_traces = Vec::with_capacity(weights.layers.len());
    let traces = run_layers(&inputs, weights, |trace| {
        concept_traces.push(stream.step(trace)?);
        Ok(())
    })?;
    Ok((traces, concept_traces))
}

/// True iff both runs produced bit-identical image and prompt streams:
/// attention outputs (concatenated and per head) and next-layer states.
pub fn streams_bit_identical<T: Real>(a: &[LayerTrace<T>], b: &[LayerTrace<T>]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(a, b)| {
            a.image.o.bit_eq(&b.image.o)
                && a.prompt.o.bit_eq(&b.prompt.o)
                && a.x_next.bit_eq(&b.x_next)
                && a.p_next.bit_eq(&b.p_next)
                && a.heads.len() == b.heads.len()
                && a.heads
                    .iter()
                    .zip(&b.heads)
                    .all(|(ha, hb)| ha.o_x.bit_eq(&hb.o_x) && ha.o_p.bit_eq(&hb.o_p))
        })
}

/// Runs the model alone and with the concept stream attached, and reports
/// whether the image and prompt streams came out bit-identical.
pub fn non_interference_check<T: Real, S: AsRef<str>>(
    tokens: &[S],
    x0: &Matrix<T>,
    t: u32,
    noise_seed: u64,
    weights: &MMDiTWeights<T>,
    vocab: &ConceptVocabulary,
) -> Result<bool> {
    let alone = forward_with_trace(tokens, x0, t, noise_seed, weights)?;
    let (with, _) = forward_with_concepts(
        tokens,
        x0,
        t,
        noise_seed,
        weights,
        vocab,
        ConceptAttentionMode::CrossAndSelf,
    )?;
    Ok(streams_bit_identical(&alone, &with))
}

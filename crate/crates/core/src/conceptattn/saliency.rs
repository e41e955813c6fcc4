use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmdit::LayerTrace;
use crate::numerics::{matmul_transposed, row_softmax, Matrix, Real};

use super::{ConceptTrace, ConceptVocabulary};

/// Representation space the image/concept similarity is taken in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SaliencySpace {
    /// Concept queries against image keys.
    CrossAttention,
    /// Raw values `v_x v_cᵀ`.
    Value,
    /// Attention outputs `o_x o_cᵀ`.
    #[default]
    Output,
}

impl SaliencySpace {
    pub const ALL: [SaliencySpace; 3] = [Self::CrossAttention, Self::Value, Self::Output];

    pub fn label(self) -> &'static str {
        match self {
            Self::CrossAttention => "CA",
            Self::Value => "Value",
            Self::Output => "Output",
        }
    }
}

impl fmt::Display for SaliencySpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::CrossAttention => "ca",
            Self::Value => "value",
            Self::Output => "output",
        })
    }
}

impl FromStr for SaliencySpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ca" | "cross_attention" => Ok(Self::CrossAttention),
            "value" => Ok(Self::Value),
            "output" => Ok(Self::Output),
            _ => Err(Error::Invalid(format!(
                "unknown space {s:?} (ca|value|output)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadAggregation {
    /// Dot products over the full concatenated width.
    #[default]
    Concat,
    /// Average of per-head dot products.
    Mean,
}

impl fmt::Display for HeadAggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Concat => "concat",
            Self::Mean => "mean",
        })
    }
}

impl FromStr for HeadAggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Self::Concat),
            "mean" => Ok(Self::Mean),
            _ => Err(Error::Invalid(format!(
                "unknown head aggregation {s:?} (concat|mean)"
            ))),
        }
    }
}

/// Axis of the optional softmax. `Concepts` normalizes each pixel across
/// concepts; `Pixels` normalizes each concept across the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxAxis {
    #[default]
    Concepts,
    Pixels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SaliencyOptions {
    pub space: SaliencySpace,
    pub softmax: bool,
    pub head_agg: HeadAggregation,
    pub softmax_axis: SoftmaxAxis,
}

impl SaliencyOptions {
    pub fn new(space: SaliencySpace, softmax: bool, head_agg: HeadAggregation) -> Self {
        Self {
            space,
            softmax,
            head_agg,
            softmax_axis: SoftmaxAxis::Concepts,
        }
    }
}

/// `image_side · concept_sideᵀ` (`n × r`), over the full width or averaged
/// over heads.
fn similarity<T: Real>(
    image_side: &Matrix<T>,
    concept_side: &Matrix<T>,
    trace: &LayerTrace<T>,
    head_agg: HeadAggregation,
) -> Result<Matrix<T>> {
    match head_agg {
        HeadAggregation::Concat => matmul_transposed(image_side, concept_side),
        HeadAggregation::Mean => {
            let mut acc = Matrix::zeros(image_side.rows(), concept_side.rows());
            for h in 0..trace.n_heads {
                let s = matmul_transposed(
                    &trace.head_slice(image_side, h)?,
                    &trace.head_slice(concept_side, h)?,
                )?;
                acc = acc.add(&s)?;
            }
            Ok(acc.map(|v| v / T::from_usize_exact(trace.n_heads)))
        }
    }
}

/// Unnormalized `n × r` scores for one layer.
pub fn raw_saliency_scores<T: Real>(
    trace: &LayerTrace<T>,
    ctrace: &ConceptTrace<T>,
    space: SaliencySpace,
    head_agg: HeadAggregation,
) -> Result<Matrix<T>> {
    if trace.layer != ctrace.layer {
        return Err(Error::Invalid(format!(
            "image trace is layer {} but concept trace is layer {}",
            trace.layer, ctrace.layer
        )));
    }
    match space {
        SaliencySpace::Output => similarity(&trace.image.o, &ctrace.o_c, trace, head_agg),
        SaliencySpace::Value => similarity(&trace.image.v, &ctrace.v_c, trace, head_agg),
        // (q_c k_xᵀ)ᵀ = k_x q_cᵀ
        SaliencySpace::CrossAttention => similarity(&trace.image.k, &ctrace.q_c, trace, head_agg),
    }
}

pub fn apply_softmax<T: Real>(scores: &Matrix<T>, axis: SoftmaxAxis) -> Matrix<T> {
    match axis {
        SoftmaxAxis::Concepts => row_softmax(scores, T::one()),
        SoftmaxAxis::Pixels => row_softmax(&scores.transpose(), T::one()).transpose(),
    }
}

/// Per-layer `n × r` scores, softmaxed when `opts.softmax` is set.
pub fn saliency_scores<T: Real>(
    trace: &LayerTrace<T>,
    ctrace: &ConceptTrace<T>,
    opts: &SaliencyOptions,
) -> Result<Matrix<T>> {
    let raw = raw_saliency_scores(trace, ctrace, opts.space, opts.head_agg)?;
    Ok(if opts.softmax {
        apply_softmax(&raw, opts.softmax_axis)
    } else {
        raw
    })
}

/// Prompt-token cross-attention: `softmax(q_p k_xᵀ)` normalized over the
/// image axis for each prompt token, returned transposed as `n × l`.
pub fn raw_prompt_cross_attention<T: Real>(trace: &LayerTrace<T>) -> Result<Matrix<T>> {
    let s = matmul_transposed(&trace.prompt.q, &trace.image.k)?;
    Ok(row_softmax(&s, T::one()).transpose())
}

/// How a map was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default)]
    pub config_hash: String,
    pub vocabulary: ConceptVocabulary,
    #[serde(default)]
    pub layers: Vec<usize>,
    #[serde(default)]
    pub timestep: u32,
    #[serde(default)]
    pub space: SaliencySpace,
    #[serde(default)]
    pub softmax: bool,
    #[serde(default)]
    pub head_agg: HeadAggregation,
    #[serde(default)]
    pub softmax_axis: SoftmaxAxis,
    #[serde(default = "one")]
    pub frames: usize,
}

fn one() -> usize {
    1
}

impl Provenance {
    /// Provenance of a map that came from outside the pipeline: every tag
    /// other than the vocabulary takes its default.
    pub fn for_vocabulary(vocabulary: ConceptVocabulary) -> Self {
        Self {
            config_hash: String::new(),
            vocabulary,
            layers: Vec::new(),
            timestep: 0,
            space: SaliencySpace::default(),
            softmax: false,
            head_agg: HeadAggregation::default(),
            softmax_axis: SoftmaxAxis::default(),
            frames: 1,
        }
    }

    fn same_tags(&self, other: &Self) -> bool {
        self.vocabulary == other.vocabulary
            && self.space == other.space
            && self.softmax == other.softmax
            && self.head_agg == other.head_agg
            && self.softmax_axis == other.softmax_axis
    }
}

/// Raw per-layer scores sharing one space / softmax / head-aggregation
/// setting. Softmax is applied when layers are aggregated.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyStack<T = f64> {
    pub img_h: usize,
    pub img_w: usize,
    pub options: SaliencyOptions,
    pub timestep: u32,
    pub config_hash: String,
    pub vocabulary: ConceptVocabulary,
    /// `(layer index, n × r raw scores)`.
    pub layers: Vec<(usize, Matrix<T>)>,
}

impl<T: Real> SaliencyStack<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        traces: &[LayerTrace<T>],
        ctraces: &[ConceptTrace<T>],
        options: SaliencyOptions,
        img_h: usize,
        img_w: usize,
        vocabulary: &ConceptVocabulary,
        config_hash: &str,
    ) -> Result<Self> {
        if traces.len() != ctraces.len() {
            return Err(Error::Invalid(format!(
                "{} image traces but {} concept traces",
                traces.len(),
                ctraces.len()
            )));
        }
        let first = traces.first().ok_or(Error::Empty("trace list"))?;
        if first.n_image() != img_h * img_w {
            return Err(Error::shape(
                "saliency stack",
                (first.n_image(), 1),
                (img_h, img_w),
            ));
        }
        let layers = traces
            .iter()
            .zip(ctraces)
            .map(|(t, c)| {
                Ok((
                    t.layer,
                    raw_saliency_scores(t, c, options.space, options.head_agg)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            img_h,
            img_w,
            options,
            timestep: first.timestep,
            config_hash: config_hash.to_string(),
            vocabulary: vocabulary.clone(),
            layers,
        })
    }

    pub fn layer_indices(&self) -> Vec<usize> {
        self.layers.iter().map(|(l, _)| *l).collect()
    }

    /// Mean over the selected layers of the (optionally softmaxed) scores.
    pub fn aggregate(&self, layer_subset: &[usize]) -> Result<SaliencyMap<T>> {
        if layer_subset.is_empty() {
            return Err(Error::Empty("layer subset"));
        }
        let n = self.img_h * self.img_w;
        let mut acc = Matrix::zeros(n, self.vocabulary.len());
        for (i, &want) in layer_subset.iter().enumerate() {
            if layer_subset[..i].contains(&want) {
                return Err(Error::Invalid(format!("layer {want} listed twice")));
            }
            let (_, scores) = self
                .layers
                .iter()
                .find(|(l, _)| *l == want)
                .ok_or_else(|| Error::OutOfRange(format!("layer {want}")))?;
            let s = if self.options.softmax {
                apply_softmax(scores, self.options.softmax_axis)
            } else {
                scores.clone()
            };
            acc = acc.add(&s)?;
        }
        let count = T::from_usize_exact(layer_subset.len());
        Ok(SaliencyMap {
            img_h: self.img_h,
            img_w: self.img_w,
            scores: acc.map(|v| v / count),
            provenance: Provenance {
                config_hash: self.config_hash.clone(),
                vocabulary: self.vocabulary.clone(),
                layers: layer_subset.to_vec(),
                timestep: self.timestep,
                space: self.options.space,
                softmax: self.options.softmax,
                head_agg: self.options.head_agg,
                softmax_axis: self.options.softmax_axis,
                frames: 1,
            },
        })
    }
}

/// See [`SaliencyStack::aggregate`].
pub fn aggregate_layers<T: Real>(
    stack: &SaliencyStack<T>,
    layer_subset: &[usize],
) -> Result<SaliencyMap<T>> {
    stack.aggregate(layer_subset)
}

/// Aggregated `img_h × img_w × r` scores, stored pixel-major as an `n × r`
/// matrix (pixel `i` is row `i / img_w`, column `i % img_w`).
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap<T = f64> {
    pub img_h: usize,
    pub img_w: usize,
    pub scores: Matrix<T>,
    pub provenance: Provenance,
}

impl<T: Real> SaliencyMap<T> {
    pub fn new(
        img_h: usize,
        img_w: usize,
        scores: Matrix<T>,
        provenance: Provenance,
    ) -> Result<Self> {
        if scores.shape() != (img_h * img_w, provenance.vocabulary.len()) {
            return Err(Error::shape(
                "saliency map",
                scores.shape(),
                (img_h * img_w, provenance.vocabulary.len()),
            ));
        }
        if !scores.is_finite() {
            return Err(Error::Invalid("saliency scores must be finite".into()));
        }
        Ok(Self {
            img_h,
            img_w,
            scores,
            provenance,
        })
    }

    pub fn n_concepts(&self) -> usize {
        self.scores.cols()
    }

    pub fn vocabulary(&self) -> &ConceptVocabulary {
        &self.provenance.vocabulary
    }

    pub fn get(&self, y: usize, x: usize, concept: usize) -> T {
        self.scores.get(y * self.img_w + x, concept)
    }

    /// Scores of one concept across the image, pixel-major.
    pub fn plane(&self, concept: usize) -> Vec<T> {
        (0..self.scores.rows())
            .map(|i| self.scores.get(i, concept))
            .collect()
    }

    /// Map restricted to (and reordered by) the given concept indices.
    pub fn select_concepts(&self, idx: &[usize]) -> Result<Self> {
        let vocab = ConceptVocabulary::new(
            idx.iter()
                .map(|&i| {
                    self.vocabulary()
                        .concepts()
                        .get(i)
                        .cloned()
                        .ok_or_else(|| Error::OutOfRange(format!("concept {i}")))
                })
                .collect::<Result<Vec<_>>>()?,
            &idx.iter()
                .filter(|&&i| self.vocabulary().is_background(i))
                .map(|&i| self.vocabulary().concepts()[i].clone())
                .collect::<Vec<_>>(),
        )?;
        let scores = self.scores.transpose().select_rows(idx)?.transpose();
        Ok(Self {
            img_h: self.img_h,
            img_w: self.img_w,
            scores,
            provenance: Provenance {
                vocabulary: vocab,
                ..self.provenance.clone()
            },
        })
    }
}

/// Elementwise mean of per-frame maps that share shape and provenance tags.
pub fn aggregate_frames<T: Real>(per_frame: &[SaliencyMap<T>]) -> Result<SaliencyMap<T>> {
    let first = per_frame.first().ok_or(Error::Empty("frame list"))?;
    let mut acc = Matrix::zeros(first.scores.rows(), first.scores.cols());
    let mut frames = 0;
    for m in per_frame {
        if (m.img_h, m.img_w) != (first.img_h, first.img_w)
            || !m.provenance.same_tags(&first.provenance)
        {
            return Err(Error::Invalid(
                "frames disagree in shape or provenance".into(),
            ));
        }
        acc = acc.add(&m.scores)?;
        frames += m.provenance.frames;
    }
    let count = T::from_usize_exact(per_frame.len());
    Ok(SaliencyMap {
        img_h: first.img_h,
        img_w: first.img_w,
        scores: acc.map(|v| v / count),
        provenance: Provenance {
            frames,
            ..first.provenance.clone()
        },
    })
}

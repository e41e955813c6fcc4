use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conceptattn::{
    forward_with_concepts, run_concept_stream, ConceptAttentionMode, ConceptTrace,
    ConceptVocabulary, SaliencyMap, SaliencyOptions, SaliencySpace, SaliencyStack,
};
use crate::error::{Error, Result};
use crate::mmdit::{LayerTrace, MMDiTWeights};
use crate::numerics::Matrix;

use super::{
    score_multiclass, score_single_object, LabelMask, MetricsReport, MiouMode, SampleMetrics,
    SegmentationSample,
};

/// An input image (as tokens) with its ground truth, from which saliency is
/// recomputed for every ablation cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub id: String,
    pub x0: Matrix,
    pub prompt: Vec<String>,
    pub vocab: ConceptVocabulary,
    pub gt: LabelMask,
    pub target_concept: Option<String>,
    pub label_map: Option<BTreeMap<String, u8>>,
}

/// Settings held fixed while one axis is swept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationParams {
    pub timestep: u32,
    /// `None` means every layer.
    pub layers: Option<Vec<usize>>,
    pub options: SaliencyOptions,
    pub mode: ConceptAttentionMode,
    pub noise_seed: u64,
}

impl Default for AblationParams {
    fn default() -> Self {
        Self {
            timestep: 500,
            layers: None,
            options: SaliencyOptions::new(SaliencySpace::Output, true, Default::default()),
            mode: ConceptAttentionMode::CrossAndSelf,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// `(CA, Value, Output) × (softmax off, on)`.
    SpaceSoftmax,
    /// Neither, self only, cross only, both.
    CaSa,
    /// Each layer alone, then all layers together.
    Layers,
    Timesteps(Vec<u32>),
}

/// Sweep axis names as used on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    SpaceSoftmax,
    CaSa,
    Layers,
    Timesteps,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "space-softmax" => Ok(Self::SpaceSoftmax),
            "ca-sa" => Ok(Self::CaSa),
            "layers" => Ok(Self::Layers),
            "timesteps" => Ok(Self::Timesteps),
            _ => Err(Error::Invalid(format!(
                "unknown sweep axis {s:?} (space-softmax|ca-sa|layers|timesteps)"
            ))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SpaceSoftmax => "space-softmax",
            Self::CaSa => "ca-sa",
            Self::Layers => "layers",
            Self::Timesteps => "timesteps",
        })
    }
}

impl Sweep {
    pub fn axis(&self) -> SweepAxis {
        match self {
            Self::SpaceSoftmax => SweepAxis::SpaceSoftmax,
            Self::CaSa => SweepAxis::CaSa,
            Self::Layers => SweepAxis::Layers,
            Self::Timesteps(_) => SweepAxis::Timesteps,
        }
    }

    /// Column names of the row key.
    pub fn key_columns(&self) -> &'static [&'static str] {
        match self {
            Self::SpaceSoftmax => &["space", "softmax"],
            Self::CaSa => &["ca", "sa"],
            Self::Layers => &["layer"],
            Self::Timesteps(_) => &["timestep"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub key: Vec<String>,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub sweep: Sweep,
    pub rows: Vec<AblationRow>,
}

impl AblationGrid {
    /// Header: key columns, then `acc`, `miou`, `map`.
    pub fn header(&self) -> Vec<String> {
        self.sweep
            .key_columns()
            .iter()
            .map(|s| s.to_string())
            .chain(["acc", "miou", "map"].map(String::from))
            .collect()
    }

    /// Table cells; metrics with six decimals, a missing mAP as an empty cell.
    pub fn records(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut rec = r.key.clone();
                rec.push(format!("{:.6}", r.report.acc));
                rec.push(format!("{:.6}", r.report.miou));
                rec.push(r.report.map.map(|m| format!("{m:.6}")).unwrap_or_default());
                rec
            })
            .collect()
    }
}

fn check_layers(layers: &[usize], n_layers: usize) -> Result<()> {
    match layers.iter().find(|&&l| l >= n_layers) {
        Some(l) => Err(Error::OutOfRange(format!(
            "layer {l} (model has {n_layers})"
        ))),
        None if layers.is_empty() => Err(Error::Empty("layer subset")),
        None => Ok(()),
    }
}

fn to_segmentation(sample: &SceneSample, map: SaliencyMap) -> SegmentationSample {
    SegmentationSample {
        id: sample.id.clone(),
        map,
        gt: sample.gt.clone(),
        target_concept: sample.target_concept.clone(),
        label_map: sample.label_map.clone(),
    }
}

/// Scores a recomputed map with the protocol the sample carries: the
/// single-object protocol when it names a target, multi-class otherwise.
pub fn score_scene(sample: &SceneSample, map: SaliencyMap) -> Result<SampleMetrics> {
    let seg = to_segmentation(sample, map);
    if sample.target_concept.is_some() {
        let bg: Vec<&str> = sample.vocab.background_concepts().collect();
        score_single_object(&seg, &bg, MiouMode::TwoClass)
    } else {
        score_multiclass(&seg)
    }
}

fn protocol_mode(samples: &[SceneSample]) -> Result<MiouMode> {
    let single = samples
        .iter()
        .filter(|s| s.target_concept.is_some())
        .count();
    match single {
        0 => Ok(MiouMode::Multiclass),
        n if n == samples.len() => Ok(MiouMode::TwoClass),
        _ => Err(Error::Invalid(
            "ablation samples mix single-object and multi-class protocols".into(),
        )),
    }
}

/// Traces of one sample at one timestep.
pub fn trace_scene(
    weights: &MMDiTWeights,
    sample: &SceneSample,
    timestep: u32,
    noise_seed: u64,
    mode: ConceptAttentionMode,
) -> Result<(Vec<LayerTrace>, Vec<ConceptTrace>)> {
    forward_with_concepts(
        &sample.prompt,
        &sample.x0,
        timestep,
        noise_seed,
        weights,
        &sample.vocab,
        mode,
    )
}

/// Saliency map of `sample` under `params`.
pub fn scene_saliency(
    weights: &MMDiTWeights,
    sample: &SceneSample,
    params: &AblationParams,
) -> Result<SaliencyMap> {
    let (traces, ctraces) = trace_scene(
        weights,
        sample,
        params.timestep,
        params.noise_seed,
        params.mode,
    )?;
    let layers = params
        .layers
        .clone()
        .unwrap_or_else(|| (0..weights.config.n_layers).collect());
    map_from_traces(weights, sample, &traces, &ctraces, params.options, &layers)
}

fn map_from_traces(
    weights: &MMDiTWeights,
    sample: &SceneSample,
    traces: &[LayerTrace],
    ctraces: &[ConceptTrace],
    options: SaliencyOptions,
    layers: &[usize],
) -> Result<SaliencyMap> {
    let cfg = &weights.config;
    SaliencyStack::build(
        traces,
        ctraces,
        options,
        cfg.img_h,
        cfg.img_w,
        &sample.vocab,
        &cfg.hash(),
    )?
    .aggregate(layers)
}

/// Recomputes saliency and metrics for every cell of `sweep`. Rows come out
/// in table order: spaces CA, Value, Output each with softmax off then on;
/// attention modes neither, SA, CA, CA+SA; layers ascending then "all";
/// timesteps as given.
pub fn run_ablation(
    weights: &MMDiTWeights,
    sweep: &Sweep,
    params: &AblationParams,
    samples: &[SceneSample],
) -> Result<AblationGrid> {
    if samples.is_empty() {
        return Err(Error::Empty("sample list"));
    }
    let n_layers = weights.config.n_layers;
    let all: Vec<usize> = (0..n_layers).collect();
    let layers = params.layers.clone().unwrap_or_else(|| all.clone());
    check_layers(&layers, n_layers)?;
    let protocol = protocol_mode(samples)?;

    // Every cell: (key, per-sample (timestep, mode, options, layers)).
    struct Cell {
        key: Vec<String>,
        timestep: u32,
        mode: ConceptAttentionMode,
        options: SaliencyOptions,
        layers: Vec<usize>,
    }
    let base = |key: Vec<String>| Cell {
        key,
        timestep: params.timestep,
        mode: params.mode,
        options: params.options,
        layers: layers.clone(),
    };
    let yes_no = |b: bool| if b { "yes" } else { "no" }.to_string();
    let cells: Vec<Cell> = match sweep {
        Sweep::SpaceSoftmax => SaliencySpace::ALL
            .iter()
            .flat_map(|&space| [false, true].map(move |sm| (space, sm)))
            .map(|(space, softmax)| Cell {
                options: SaliencyOptions {
                    space,
                    softmax,
                    ..params.options
                },
                ..base(vec![space.label().to_string(), yes_no(softmax)])
            })
            .collect(),
        Sweep::CaSa => [
            ConceptAttentionMode::None,
            ConceptAttentionMode::SelfOnly,
            ConceptAttentionMode::CrossOnly,
            ConceptAttentionMode::CrossAndSelf,
        ]
        .into_iter()
        .map(|mode| Cell {
            mode,
            ..base(vec![yes_no(mode.uses_cross()), yes_no(mode.uses_self())])
        })
        .collect(),
        Sweep::Layers => all
            .iter()
            .map(|&l| Cell {
                layers: vec![l],
                ..base(vec![l.to_string()])
            })
            .chain(std::iter::once(Cell {
                layers: all.clone(),
                ..base(vec!["all".to_string()])
            }))
            .collect(),
        Sweep::Timesteps(steps) => {
            if steps.is_empty() {
                return Err(Error::Empty("timestep list"));
            }
            if let Some(t) = steps.iter().find(|&&t| t > weights.config.schedule_len) {
                return Err(Error::OutOfRange(format!("timestep {t}")));
            }
            steps
                .iter()
                .map(|&t| Cell {
                    timestep: t,
                    ..base(vec![t.to_string()])
                })
                .collect()
        }
    };

    let mut per_cell: Vec<Vec<SampleMetrics>> = cells.iter().map(|_| Vec::new()).collect();
    for sample in samples {
        let tagged = |e: Error| e.in_sample(&sample.id);
        // image traces at a timestep are shared by every cell at that timestep
        let mut cache: Option<(
            u32,
            Vec<LayerTrace>,
            ConceptAttentionMode,
            Vec<ConceptTrace>,
        )> = None;
        for (cell, out) in cells.iter().zip(per_cell.iter_mut()) {
            let reuse = matches!(&cache, Some((t, ..)) if *t == cell.timestep);
            if !reuse {
                let (tr, ct) =
                    trace_scene(weights, sample, cell.timestep, params.noise_seed, cell.mode)
                        .map_err(tagged)?;
                cache = Some((cell.timestep, tr, cell.mode, ct));
            }
            let (_, traces, mode, ctraces) = cache.as_mut().expect("filled above");
            if *mode != cell.mode {
                *ctraces = run_concept_stream(&sample.vocab, traces, weights, cell.mode)
                    .map_err(tagged)?;
                *mode = cell.mode;
            }
            let map = map_from_traces(weights, sample, traces, ctraces, cell.options, &cell.layers)
                .map_err(tagged)?;
            out.push(score_scene(sample, map).map_err(tagged)?);
        }
    }

    let rows = cells
        .into_iter()
        .zip(per_cell)
        .map(|(cell, per)| {
            Ok(AblationRow {
                key: cell.key,
                report: MetricsReport::aggregate(per, protocol)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationGrid {
        sweep: sweep.clone(),
        rows,
    })
}

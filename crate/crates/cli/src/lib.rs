//! Command implementations behind the `ca-kit` binary.
//!
//! Every command is a plain function returning its in-memory result, so
//! tests can compare CLI artifacts with library values directly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cakit::conceptattn::{
    forward_with_concepts, ConceptAttentionMode, ConceptVocabulary, HeadAggregation, SaliencyMap,
    SaliencyOptions, SaliencySpace, SaliencyStack,
};
use cakit::mmdit::{image_tokens_from_gray, ModelConfig};
use cakit::numerics::Rng;
use cakit::planted::{self, DEMO_CONCEPTS};
use cakit::segeval::{
    evaluate_multiclass, evaluate_single_object_with, multiclass_argmax, run_ablation,
    scores_to_gray, write_pgm, AblationGrid, AblationParams, LabelMask, Manifest, MetricsReport,
    MiouMode, SceneSample, Sweep, SweepAxis,
};
use cakit::{Matrix, Weights};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] cakit::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 1 for usage errors, 2 for data and shape errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Parses `all`, `N`, `A-B` (inclusive) and comma-separated mixes of those.
pub fn parse_layers(s: &str, n_layers: usize) -> CliResult<Vec<usize>> {
    if s.trim() == "all" {
        return Ok((0..n_layers).collect());
    }
    let bad = || CliError::Usage(format!("invalid layer selection {s:?}"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) =
                    (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if let Some(l) = out.iter().find(|&&l| l >= n_layers) {
        return Err(CliError::Usage(format!(
            "layer {l} is beyond model depth {n_layers}"
        )));
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

pub fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(cakit::Error::from)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes a config-shaped weight file and returns the config hash.
pub fn cmd_gen_weights(
    config: &ModelConfig,
    seed: u64,
    planted_model: bool,
    out: &Path,
) -> CliResult<String> {
    let w = if planted_model {
        planted::planted_weights(config, seed, planted::DEFAULT_SHARPNESS)?
    } else {
        Weights::init(config, seed)?
    };
    w.save(out)?;
    Ok(config.hash())
}

/// Where `cmd_run` gets its image tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageSource {
    /// 8-bit grayscale PGM of exactly `img_h × img_w` pixels.
    Pgm(PathBuf),
    /// Standard-normal tokens scaled by `1/√d_model` from `Rng(seed)` stream `"synthetic_image"`.
    Synthetic(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub weights: PathBuf,
    pub prompt: Vec<String>,
    pub concepts: Vec<String>,
    pub background: Vec<String>,
    pub timestep: u32,
    /// `None` selects every layer.
    pub layers: Option<Vec<usize>>,
    pub space: SaliencySpace,
    pub softmax: bool,
    pub head_agg: HeadAggregation,
    pub seed: u64,
    pub out: PathBuf,
    pub image: ImageSource,
}

pub fn image_tokens(source: &ImageSource, config: &ModelConfig) -> CliResult<Matrix> {
    let n = config.n_image_tokens();
    match source {
        ImageSource::Pgm(path) => {
            let mask = LabelMask::load_pgm(path)?;
            if mask.shape() != (config.img_h, config.img_w) {
                return Err(cakit::Error::Invalid(format!(
                    "image is {}x{}, model expects {}x{}",
                    mask.height, mask.width, config.img_h, config.img_w
                ))
                .into());
            }
            Ok(image_tokens_from_gray(&mask.labels, config.d_model))
        }
        ImageSource::Synthetic(seed) => Ok(Rng::new(*seed)
            .stream("synthetic_image")
            .normal_matrix(n, config.d_model, 1.0 / (config.d_model as f64).sqrt())),
    }
}

fn concept_file_stem(c: &str) -> String {
    c.chars()
        .map(|ch| if ch.is_ascii_alphanumeric() { ch } else { '_' })
        .collect()
}

/// Writes `saliency_<concept>.pgm` for every concept plus `scores.cas1`.
pub fn write_map_artifacts(map: &SaliencyMap, out: &Path) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for (i, c) in map.vocabulary().concepts().iter().enumerate() {
        let path = out.join(format!("saliency_{}.pgm", concept_file_stem(c)));
        fs::write(
            &path,
            write_pgm(map.img_w, map.img_h, &scores_to_gray(&map.plane(i))),
        )?;
        written.push(path);
    }
    let cas = out.join("scores.cas1");
    map.save_cas1(&cas)?;
    written.push(cas);
    Ok(written)
}

/// Computes the aggregated saliency map described by `spec` and writes its
/// artifacts.
pub fn cmd_run(spec: &RunSpec) -> CliResult<SaliencyMap> {
    let weights = Weights::load(&spec.weights)?;
    let cfg = &weights.config;
    let vocab = ConceptVocabulary::new(spec.concepts.clone(), &spec.background)?;
    for c in vocab.concepts() {
        weights.embeddings.row_of(c)?;
    }
    if spec.timestep > cfg.schedule_len {
        return Err(CliError::Usage(format!(
            "timestep {} is beyond schedule length {}",
            spec.timestep, cfg.schedule_len
        )));
    }
    let layers = spec
        .layers
        .clone()
        .unwrap_or_else(|| (0..cfg.n_layers).collect());
    if let Some(l) = layers.iter().find(|&&l| l >= cfg.n_layers) {
        return Err(CliError::Usage(format!(
            "layer {l} is beyond model depth {}",
            cfg.n_layers
        )));
    }
    let x0 = image_tokens(&spec.image, cfg)?;
    let (traces, ctraces) = forward_with_concepts(
        &spec.prompt,
        &x0,
        spec.timestep,
        spec.seed,
        &weights,
        &vocab,
        ConceptAttentionMode::CrossAndSelf,
    )?;
    let options = SaliencyOptions::new(spec.space, spec.softmax, spec.head_agg);
    let map = SaliencyStack::build(
        &traces,
        &ctraces,
        options,
        cfg.img_h,
        cfg.img_w,
        &vocab,
        &cfg.hash(),
    )?
    .aggregate(&layers)?;
    write_map_artifacts(&map, &spec.out)?;
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Single,
    Multi,
}

/// One-row summary table of a report.
pub fn write_report_csv(report: &MetricsReport, path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["n_samples", "acc", "miou", "map"])?;
    w.write_record([
        report.n_samples.to_string(),
        format!("{:.6}", report.acc),
        format!("{:.6}", report.miou),
        report.map.map(|m| format!("{m:.6}")).unwrap_or_default(),
    ])?;
    w.flush()?;
    Ok(())
}

/// Evaluates a manifest of CAS1 score files and writes `report.json` and
/// `report.csv` under `out`.
pub fn cmd_eval(
    manifest: &Path,
    mode: EvalMode,
    background: &[String],
    miou_mode: MiouMode,
    out: &Path,
) -> CliResult<MetricsReport> {
    let manifest = Manifest::load(manifest)?;
    let samples = manifest.load_samples()?;
    let report = match mode {
        EvalMode::Single => {
            let bg: Vec<&str> = background.iter().map(String::as_str).collect();
            evaluate_single_object_with(&samples, &bg, miou_mode)?
        }
        EvalMode::Multi => evaluate_multiclass(&samples)?,
    };
    fs::create_dir_all(out)?;
    write_json(&out.join("report.json"), &report)?;
    write_report_csv(&report, &out.join("report.csv"))?;
    Ok(report)
}

/// Scene samples for an ablation: manifest records need `image_path` and
/// `mask_path`, plus `target_concept` (single-object) or `label_map`.
/// The concept vocabulary is the target (or label-map concepts) followed by
/// `background`; the prompt lists the same concepts.
pub fn scenes_from_manifest(
    manifest: &Manifest,
    weights: &Weights,
    background: &[String],
) -> CliResult<Vec<SceneSample>> {
    manifest
        .records
        .iter()
        .map(|r| {
            let load = || -> cakit::Result<SceneSample> {
                let image = r
                    .image_path
                    .as_ref()
                    .ok_or_else(|| cakit::Error::Invalid("record has no image_path".into()))?;
                let img = LabelMask::load_pgm(manifest.resolve(image))?;
                let gt = LabelMask::load_pgm(manifest.resolve(&r.mask_path))?;
                let cfg = &weights.config;
                if img.shape() != (cfg.img_h, cfg.img_w) || gt.shape() != img.shape() {
                    return Err(cakit::Error::Invalid(
                        "image/mask size does not match the model".into(),
                    ));
                }
                let mut concepts: Vec<String> = match (&r.target_concept, &r.label_map) {
                    (Some(t), _) => vec![t.clone()],
                    (None, Some(m)) => m.keys().cloned().collect(),
                    (None, None) => {
                        return Err(cakit::Error::Invalid(
                            "record needs target_concept or label_map".into(),
                        ))
                    }
                };
                concepts.extend(
                    background
                        .iter()
                        .filter(|b| !concepts.contains(b))
                        .cloned()
                        .collect::<Vec<_>>(),
                );
                let vocab = ConceptVocabulary::new(concepts, background)?;
                Ok(SceneSample {
                    id: r.id.clone(),
                    x0: image_tokens_from_gray(&img.labels, cfg.d_model),
                    prompt: vocab
                        .concepts()
                        .iter()
                        .take(cfg.prompt_len)
                        .cloned()
                        .collect(),
                    vocab,
                    gt,
                    target_concept: r.target_concept.clone(),
                    label_map: r.label_map.clone(),
                })
            };
            load().map_err(|e| CliError::Data(e.in_sample(&r.id)))
        })
        .collect()
}

pub fn sweep_from_axis(axis: SweepAxis, steps: Option<Vec<u32>>) -> CliResult<Sweep> {
    match (axis, steps) {
        (SweepAxis::SpaceSoftmax, _) => Ok(Sweep::SpaceSoftmax),
        (SweepAxis::CaSa, _) => Ok(Sweep::CaSa),
        (SweepAxis::Layers, _) => Ok(Sweep::Layers),
        (SweepAxis::Timesteps, Some(s)) if !s.is_empty() => Ok(Sweep::Timesteps(s)),
        (SweepAxis::Timesteps, _) => Err(CliError::Usage("--sweep timesteps needs --steps".into())),
    }
}

pub fn write_grid_csv(grid: &AblationGrid, path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(grid.header())?;
    for rec in grid.records() {
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the sweep and writes `ablation.csv` and `ablation.json` under `out`.
pub fn cmd_ablate(
    weights: &Weights,
    sweep: &Sweep,
    params: &AblationParams,
    samples: &[SceneSample],
    out: &Path,
) -> CliResult<AblationGrid> {
    let grid = run_ablation(weights, sweep, params, samples)?;
    fs::create_dir_all(out)?;
    write_grid_csv(&grid, &out.join("ablation.csv"))?;
    write_json(&out.join("ablation.json"), &grid)?;
    Ok(grid)
}

/// Calibrated noise level at which the planted demo still reaches ≥ 0.99
/// multi-class accuracy.
pub const CALIBRATED_SIGMA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub seed: u64,
    pub sigma: f64,
    pub concepts: Vec<String>,
    pub label_map: BTreeMap<String, u8>,
    pub metrics: MetricsReport,
}

/// Planted multi-class scene through the full pipeline (t = 0, every layer,
/// output space, softmax across concepts). Writes the ground-truth and
/// predicted masks, per-concept saliency PGMs, `scores.cas1`, a manifest
/// pointing at them, and `report.json` / `report.csv`.
pub fn cmd_demo_planted(seed: u64, sigma: f64, out: &Path) -> CliResult<DemoReport> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(CliError::Usage(format!(
            "sigma must be a finite value >= 0, got {sigma}"
        )));
    }
    let cfg = ModelConfig::default();
    let weights = planted::planted_weights(&cfg, seed, planted::DEFAULT_SHARPNESS)?;
    let vocab = ConceptVocabulary::from_strs(&DEMO_CONCEPTS, &["background"])?;
    let scene = planted::multiclass_scene(&weights, &vocab, sigma, seed)?;
    let (traces, ctraces) = forward_with_concepts(
        &scene.prompt,
        &scene.x0,
        0,
        seed,
        &weights,
        &vocab,
        ConceptAttentionMode::CrossAndSelf,
    )?;
    let map = SaliencyStack::build(
        &traces,
        &ctraces,
        SaliencyOptions::new(SaliencySpace::Output, true, HeadAggregation::Concat),
        cfg.img_h,
        cfg.img_w,
        &vocab,
        &cfg.hash(),
    )?
    .aggregate(&(0..cfg.n_layers).collect::<Vec<_>>())?;

    fs::create_dir_all(out)?;
    write_map_artifacts(&map, out)?;
    scene.gt.save_pgm(out.join("gt_mask.pgm"))?;
    let label_map = scene.label_map.clone().unwrap_or_default();
    let labels: Vec<u8> = vocab
        .concepts()
        .iter()
        .map(|c| label_map.get(c).copied().unwrap_or(0))
        .collect();
    let argmax = multiclass_argmax(&map)?;
    LabelMask::new(
        argmax.height,
        argmax.width,
        argmax.labels.iter().map(|&c| labels[c as usize]).collect(),
    )?
    .save_pgm(out.join("pred_mask.pgm"))?;

    let record = cakit::segeval::ManifestRecord {
        id: scene.id.clone(),
        scores_path: Some("scores.cas1".into()),
        mask_path: "gt_mask.pgm".into(),
        target_concept: None,
        label_map: Some(label_map.clone()),
        image_path: None,
    };
    let mut line = serde_json::to_string(&record).map_err(cakit::Error::from)?;
    line.push('\n');
    fs::write(out.join("manifest.jsonl"), line)?;

    let metrics = evaluate_multiclass(&[cakit::segeval::SegmentationSample {
        id: scene.id.clone(),
        map,
        gt: scene.gt.clone(),
        target_concept: None,
        label_map: Some(label_map.clone()),
    }])?;
    write_report_csv(&metrics, &out.join("report.csv"))?;
    let report = DemoReport {
        seed,
        sigma,
        concepts: vocab.concepts().to_vec(),
        label_map,
        metrics,
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

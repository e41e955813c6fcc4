use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::conceptattn::SaliencyMap;
use crate::error::{Error, Result};

use super::{
    average_precision, binarize_mean_threshold, miou, multiclass_argmax, pixel_accuracy,
    GroundTruthMask, LabelMask, IGNORE_LABEL,
};

/// One image's scores and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationSample {
    pub id: String,
    pub map: SaliencyMap,
    pub gt: GroundTruthMask,
    /// Concept scored in the single-object protocol.
    pub target_concept: Option<String>,
    /// Concept → ground-truth label for the multi-class protocol.
    pub label_map: Option<BTreeMap<String, u8>>,
}

/// Which classes the single-object mIoU averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MiouMode {
    /// Foreground and background IoU, averaged per sample.
    #[default]
    TwoClass,
    /// Foreground IoU only.
    ForegroundOnly,
    /// Every label of the multi-class mapping.
    Multiclass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub acc: f64,
    pub miou: f64,
    pub ap: Option<f64>,
}

/// Aggregate metrics: `acc` and `miou` are means of the per-sample values;
/// `map` is the mean AP over samples with at least one positive pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub miou: f64,
    pub map: Option<f64>,
    pub n_samples: usize,
    /// Samples left out of `map` for lack of positives.
    pub ap_excluded: usize,
    pub miou_mode: MiouMode,
    /// Sorted by sample id.
    pub per_sample: Vec<SampleMetrics>,
}

impl MetricsReport {
    /// Folds per-sample metrics in sample-id order.
    pub fn aggregate(mut per_sample: Vec<SampleMetrics>, miou_mode: MiouMode) -> Result<Self> {
        if per_sample.is_empty() {
            return Err(Error::Empty("sample list"));
        }
        per_sample.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = per_sample.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::Invalid(format!("duplicate sample id {:?}", w[0].id)));
        }
        let n = per_sample.len() as f64;
        let acc = per_sample.iter().map(|s| s.acc).sum::<f64>() / n;
        let miou = per_sample.iter().map(|s| s.miou).sum::<f64>() / n;
        let aps: Vec<f64> = per_sample.iter().filter_map(|s| s.ap).collect();
        let has_ap = miou_mode != MiouMode::Multiclass;
        let map = (has_ap && !aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
        Ok(Self {
            acc,
            miou,
            map,
            n_samples: per_sample.len(),
            ap_excluded: if has_ap {
                per_sample.len() - aps.len()
            } else {
                0
            },
            miou_mode,
            per_sample,
        })
    }
}

fn check_single_vocab(sample: &SegmentationSample, background: &[&str]) -> Result<usize> {
    let vocab = sample.map.vocabulary();
    let target = sample
        .target_concept
        .as_deref()
        .ok_or_else(|| Error::Invalid("no target concept".into()))?;
    let idx = vocab
        .index_of(target)
        .ok_or_else(|| Error::Invalid(format!("target {target:?} is not in the map vocabulary")))?;
    if let Some(b) = background.iter().find(|b| vocab.index_of(b).is_none()) {
        return Err(Error::Invalid(format!(
            "background concept {b:?} is not in the map vocabulary"
        )));
    }
    if (sample.map.img_h, sample.map.img_w) != sample.gt.shape() {
        return Err(Error::shape(
            "sample",
            (sample.map.img_h, sample.map.img_w),
            sample.gt.shape(),
        ));
    }
    Ok(idx)
}

/// Single-object metrics for one sample: the target plane is thresholded at
/// its mean for accuracy and IoU, and ranked as-is for AP.
pub fn score_single_object(
    sample: &SegmentationSample,
    background: &[&str],
    miou_mode: MiouMode,
) -> Result<SampleMetrics> {
    let idx = check_single_vocab(sample, background)?;
    let plane = sample.map.plane(idx);
    let pred = binarize_mean_threshold(&plane, sample.map.img_h, sample.map.img_w)?;
    let gt = sample.gt.to_binary();
    let classes: &[u8] = match miou_mode {
        MiouMode::ForegroundOnly => &[1],
        _ => &[0, 1],
    };
    Ok(SampleMetrics {
        id: sample.id.clone(),
        acc: pixel_accuracy(&pred, &gt)?,
        miou: miou(&pred, &gt, classes)?,
        ap: average_precision(&plane, &gt)?,
    })
}

pub fn evaluate_single_object(
    samples: &[SegmentationSample],
    background: &[&str],
) -> Result<MetricsReport> {
    evaluate_single_object_with(samples, background, MiouMode::TwoClass)
}

pub fn evaluate_single_object_with(
    samples: &[SegmentationSample],
    background: &[&str],
    miou_mode: MiouMode,
) -> Result<MetricsReport> {
    if miou_mode == MiouMode::Multiclass {
        return Err(Error::Invalid(
            "multiclass mIoU mode in single-object evaluation".into(),
        ));
    }
    let per = samples
        .iter()
        .map(|s| score_single_object(s, background, miou_mode).map_err(|e| e.in_sample(&s.id)))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::aggregate(per, miou_mode)
}

/// Label predicted for each concept: its `label_map` entry, or 0 for a
/// background concept without one.
pub fn concept_labels(sample: &SegmentationSample) -> Result<Vec<u8>> {
    let vocab = sample.map.vocabulary();
    let label_map = sample
        .label_map
        .as_ref()
        .ok_or_else(|| Error::Invalid("no label map".into()))?;
    if let Some(c) = label_map.keys().find(|c| vocab.index_of(c).is_none()) {
        return Err(Error::Invalid(format!(
            "label map concept {c:?} is not in the map vocabulary"
        )));
    }
    vocab
        .concepts()
        .iter()
        .enumerate()
        .map(|(i, c)| match label_map.get(c) {
            Some(&l) => Ok(l),
            None if vocab.is_background(i) => Ok(0),
            None => Err(Error::Invalid(format!("concept {c:?} has no label"))),
        })
        .collect()
}

/// Multi-class metrics for one sample: per-pixel argmax concept, mapped to
/// labels, scored with accuracy and mIoU.
pub fn score_multiclass(sample: &SegmentationSample) -> Result<SampleMetrics> {
    if (sample.map.img_h, sample.map.img_w) != sample.gt.shape() {
        return Err(Error::shape(
            "sample",
            (sample.map.img_h, sample.map.img_w),
            sample.gt.shape(),
        ));
    }
    let labels = concept_labels(sample)?;
    let known: BTreeSet<u8> = labels.iter().copied().collect();
    if let Some(&g) = sample
        .gt
        .labels
        .iter()
        .find(|&&g| g != IGNORE_LABEL && !known.contains(&g))
    {
        return Err(Error::Invalid(format!(
            "ground-truth label {g} has no concept"
        )));
    }
    let argmax = multiclass_argmax(&sample.map)?;
    let pred = LabelMask::new(
        argmax.height,
        argmax.width,
        argmax.labels.iter().map(|&c| labels[c as usize]).collect(),
    )?;
    let classes: Vec<u8> = known.into_iter().collect();
    Ok(SampleMetrics {
        id: sample.id.clone(),
        acc: pixel_accuracy(&pred, &sample.gt)?,
        miou: miou(&pred, &sample.gt, &classes)?,
        ap: None,
    })
}

pub fn evaluate_multiclass(samples: &[SegmentationSample]) -> Result<MetricsReport> {
    let per = samples
        .iter()
        .map(|s| score_multiclass(s).map_err(|e| e.in_sample(&s.id)))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::aggregate(per, MiouMode::Multiclass)
}

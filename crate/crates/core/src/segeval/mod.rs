//! Zero-shot segmentation evaluation: masks, metrics, the single-object and
//! multi-class protocols, and ablation sweeps.

mod ablation;
mod evaluate;
mod manifest;
mod metrics;
mod pgm;

pub use ablation::{
    run_ablation, scene_saliency, score_scene, trace_scene, AblationGrid, AblationParams,
    AblationRow, SceneSample, Sweep, SweepAxis,
};
pub use evaluate::{
    concept_labels, evaluate_multiclass, evaluate_single_object, evaluate_single_object_with,
    score_multiclass, score_single_object, MetricsReport, MiouMode, SampleMetrics,
    SegmentationSample,
};
pub use manifest::{Manifest, ManifestRecord};
pub use metrics::{
    average_precision, binarize_mean_threshold, miou, multiclass_argmax, pixel_accuracy,
};
pub use pgm::{read_pgm, scores_to_gray, write_pgm, GroundTruthMask, LabelMask, IGNORE_LABEL};

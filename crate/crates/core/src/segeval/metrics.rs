use crate::conceptattn::SaliencyMap;
use crate::error::{Error, Result};
use crate::numerics::Real;

use super::{LabelMask, IGNORE_LABEL};

/// Foreground iff the score is strictly above the map mean; ties go to
/// background.
pub fn binarize_mean_threshold<T: Real>(
    scores: &[T],
    height: usize,
    width: usize,
) -> Result<LabelMask> {
    if scores.len() != height * width || scores.is_empty() {
        return Err(Error::shape("binarize", (height, width), (scores.len(), 1)));
    }
    let mean = scores.iter().map(|v| v.as_f64()).sum::<f64>() / scores.len() as f64;
    LabelMask::new(
        height,
        width,
        scores.iter().map(|v| u8::from(v.as_f64() > mean)).collect(),
    )
}

/// Per-pixel index of the highest-scoring concept; ties go to the lowest
/// index.
pub fn multiclass_argmax<T: Real>(map: &SaliencyMap<T>) -> Result<LabelMask> {
    let r = map.n_concepts();
    if r > IGNORE_LABEL as usize {
        return Err(Error::Invalid(format!(
            "{r} concepts do not fit in 8-bit labels"
        )));
    }
    let labels = (0..map.scores.rows())
        .map(|i| {
            let row = map.scores.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best as u8
        })
        .collect();
    LabelMask::new(map.img_h, map.img_w, labels)
}

fn check_shapes(pred: &LabelMask, gt: &LabelMask) -> Result<()> {
    if pred.shape() != gt.shape() || pred.len() != gt.len() {
        return Err(Error::shape("metric", pred.shape(), gt.shape()));
    }
    Ok(())
}

/// Fraction of non-ignored pixels where `pred == gt`.
pub fn pixel_accuracy(pred: &LabelMask, gt: &LabelMask) -> Result<f64> {
    check_shapes(pred, gt)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        if g == IGNORE_LABEL {
            continue;
        }
        total += 1;
        hit += usize::from(p == g);
    }
    if total == 0 {
        return Err(Error::Empty("non-ignored pixel set"));
    }
    Ok(hit as f64 / total as f64)
}

/// Per-class IoU over non-ignored pixels, averaged over the classes of
/// `class_set` that occur in `pred` or `gt`.
pub fn miou(pred: &LabelMask, gt: &LabelMask, class_set: &[u8]) -> Result<f64> {
    check_shapes(pred, gt)?;
    if class_set.is_empty() {
        return Err(Error::Empty("class set"));
    }
    let mut sum = 0.0;
    let mut counted = 0usize;
    for &c in class_set {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
            if g == IGNORE_LABEL {
                continue;
            }
            inter += usize::from(p == c && g == c);
            union += usize::from(p == c || g == c);
        }
        if union > 0 {
            sum += inter as f64 / union as f64;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::Empty("set of classes present in pred or gt"));
    }
    Ok(sum / counted as f64)
}

/// Rank-based average precision of `scores` against a binary ground truth
/// (nonzero = positive, 255 ignored).
///
/// Pixels are ranked by descending score, ties by ascending pixel index.
/// Returns `None` when there are no positives.
pub fn average_precision<T: Real>(scores: &[T], gt: &LabelMask) -> Result<Option<f64>> {
    if scores.len() != gt.len() {
        return Err(Error::shape(
            "average_precision",
            (scores.len(), 1),
            gt.shape(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len())
        .filter(|&i| gt.labels[i] != IGNORE_LABEL)
        .collect();
    let positives = order.iter().filter(|&&i| gt.labels[i] != 0).count();
    if positives == 0 {
        return Ok(None);
    }
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if gt.labels[i] != 0 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(Some(sum / positives as f64))
}

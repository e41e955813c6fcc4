//! Planted scenes with known segmentations.
//!
//! Randomly initialized weights carry no shared geometry between the image
//! and concept streams, so saliency computed with them says nothing about
//! where a concept is. The planted model fixes that without training: the
//! image stream's parameters are copied from the prompt stream, positional
//! embeddings are zero, and the query/key projections are `sharpness · I`
//! with `V = I`, so every token attends mostly to tokens that share its
//! embedding. A pixel planted with a concept's embedding then follows exactly
//! the same trajectory as that concept's token, provided the prompt lists the
//! concepts in vocabulary order and no noise is added.

use std::collections::BTreeMap;

use crate::conceptattn::ConceptVocabulary;
use crate::error::{Error, Result};
use crate::mmdit::{MMDiTWeights, ModelConfig};
use crate::numerics::{Matrix, Rng, Stream};
use crate::segeval::{LabelMask, SceneSample};

/// Query/key gain of the planted model.
pub const DEFAULT_SHARPNESS: f64 = 2.0;

pub fn planted_weights(config: &ModelConfig, seed: u64, sharpness: f64) -> Result<MMDiTWeights> {
    let mut w = MMDiTWeights::<f64>::init(config, seed)?;
    let d = config.d_model;
    let gain = Matrix::identity(d).scale(sharpness);
    w.pos_embed = Matrix::zeros(config.n_image_tokens(), d);
    for layer in &mut w.layers {
        let p = &mut layer.prompt;
        p.q.weight = gain.clone();
        p.k.weight = gain.clone();
        p.v.weight = Matrix::identity(d);
        for lin in [&mut p.q, &mut p.k, &mut p.v] {
            lin.bias = vec![0.0; d];
        }
        layer.image = layer.prompt.clone();
    }
    Ok(w)
}

/// Assigns every pixel to the nearest of `k` distinct seeded centers (ties to
/// the lower center index). Each label owns at least its center pixel.
pub fn voronoi_layout(
    height: usize,
    width: usize,
    k: usize,
    rng: &mut Stream,
) -> Result<Vec<usize>> {
    let n = height * width;
    if k == 0 || k > n {
        return Err(Error::Invalid(format!(
            "{k} regions do not fit in {n} pixels"
        )));
    }
    let mut centers: Vec<usize> = Vec::with_capacity(k);
    while centers.len() < k {
        let c = rng.below(n);
        if !centers.contains(&c) {
            centers.push(c);
        }
    }
    Ok((0..n)
        .map(|i| {
            let (y, x) = ((i / width) as i64, (i % width) as i64);
            let dist = |c: usize| {
                let (cy, cx) = ((c / width) as i64, (c % width) as i64);
                (y - cy).pow(2) + (x - cx).pow(2)
            };
            (0..k).min_by_key(|&j| (dist(centers[j]), j)).unwrap()
        })
        .collect())
}

/// Image tokens: each pixel's concept embedding plus `sigma · N(0, 1)` noise.
pub fn plant_tokens(
    weights: &MMDiTWeights,
    vocab: &ConceptVocabulary,
    concept_of_pixel: &[usize],
    sigma: f64,
    noise: &mut Stream,
) -> Result<Matrix> {
    let emb = weights.embeddings.lookup(vocab.concepts())?;
    let d = weights.config.d_model;
    let rows = concept_of_pixel
        .iter()
        .map(|&c| {
            emb.row(c)
                .iter()
                .map(|&v| v + sigma * noise.normal())
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>();
    let m = Matrix::from_rows(&rows)?;
    debug_assert_eq!(m.cols(), d);
    Ok(m)
}

/// Multi-class scene: a Voronoi partition over all concepts. Background
/// concepts get label 0, the others labels 1, 2, … in vocabulary order.
pub fn multiclass_scene(
    weights: &MMDiTWeights,
    vocab: &ConceptVocabulary,
    sigma: f64,
    seed: u64,
) -> Result<SceneSample> {
    let cfg = &weights.config;
    let rng = Rng::new(seed);
    let layout = voronoi_layout(
        cfg.img_h,
        cfg.img_w,
        vocab.len(),
        &mut rng.stream("planted.layout"),
    )?;
    let x0 = plant_tokens(
        weights,
        vocab,
        &layout,
        sigma,
        &mut rng.stream("planted.noise"),
    )?;
    let mut label_map = BTreeMap::new();
    let mut next = 1u8;
    let mut concept_label = Vec::with_capacity(vocab.len());
    for (i, c) in vocab.concepts().iter().enumerate() {
        if vocab.is_background(i) {
            concept_label.push(0);
        } else {
            label_map.insert(c.clone(), next);
            concept_label.push(next);
            next += 1;
        }
    }
    let gt = LabelMask::new(
        cfg.img_h,
        cfg.img_w,
        layout.iter().map(|&c| concept_label[c]).collect(),
    )?;
    Ok(SceneSample {
        id: format!("planted-{seed}"),
        x0,
        prompt: vocab.concepts().to_vec(),
        vocab: vocab.clone(),
        gt,
        target_concept: None,
        label_map: Some(label_map),
    })
}

/// Single-object scene: a seeded rectangle of `target` over a Voronoi
/// partition of the background concepts. Ground truth is 1 on the target.
pub fn single_object_scene(
    weights: &MMDiTWeights,
    target: &str,
    background: &[&str],
    sigma: f64,
    seed: u64,
) -> Result<SceneSample> {
    let cfg = &weights.config;
    let (h, w) = (cfg.img_h, cfg.img_w);
    let mut concepts = vec![target.to_string()];
    concepts.extend(background.iter().map(|s| s.to_string()));
    let vocab = ConceptVocabulary::new(concepts, background)?;

    let rng = Rng::new(seed);
    let mut s = rng.stream("planted.layout");
    let mut layout: Vec<usize> = if background.is_empty() {
        vec![0; h * w]
    } else {
        voronoi_layout(h, w, background.len(), &mut s)?
            .into_iter()
            .map(|j| j + 1)
            .collect()
    };
    let rh = (h / 4).max(1) + s.below(h / 4 + 1);
    let rw = (w / 4).max(1) + s.below(w / 4 + 1);
    let (rh, rw) = (rh.min(h), rw.min(w));
    let top = s.below(h - rh + 1);
    let left = s.below(w - rw + 1);
    for y in top..top + rh {
        for x in left..left + rw {
            layout[y * w + x] = 0;
        }
    }
    let x0 = plant_tokens(
        weights,
        &vocab,
        &layout,
        sigma,
        &mut rng.stream("planted.noise"),
    )?;
    let gt = LabelMask::new(h, w, layout.iter().map(|&c| u8::from(c == 0)).collect())?;
    Ok(SceneSample {
        id: format!("planted-{target}-{seed}"),
        x0,
        prompt: vocab.concepts().to_vec(),
        vocab,
        gt,
        target_concept: Some(target.to_string()),
        label_map: None,
    })
}

/// Default multi-class vocabulary of the planted demo.
pub const DEMO_CONCEPTS: [&str; 4] = ["background", "cat", "dog", "car"];
/// Fixed background concepts of the planted single-object scenes.
pub const DEMO_BACKGROUND: [&str; 3] = ["background", "grass", "sky"];
/// Targets cycled through by [`single_object_scenes`].
pub const DEMO_TARGETS: [&str; 6] = ["cat", "dog", "car", "horse", "bird", "boat"];

/// `count` single-object scenes with targets cycling through
/// [`DEMO_TARGETS`] over the [`DEMO_BACKGROUND`] vocabulary.
pub fn single_object_scenes(
    weights: &MMDiTWeights,
    count: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<SceneSample>> {
    (0..count)
        .map(|i| {
            let target = DEMO_TARGETS[i % DEMO_TARGETS.len()];
            single_object_scene(
                weights,
                target,
                &DEMO_BACKGROUND,
                sigma,
                seed.wrapping_add(i as u64),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voronoi_covers_every_region() {
        let mut s = Rng::new(4).stream("v");
        let layout = voronoi_layout(8, 8, 5, &mut s).unwrap();
        for k in 0..5 {
            assert!(layout.contains(&k));
        }
        assert!(voronoi_layout(2, 2, 5, &mut s).is_err());
    }

    #[test]
    fn planted_streams_are_tied() {
        let w = planted_weights(&ModelConfig::default(), 1, DEFAULT_SHARPNESS).unwrap();
        for l in &w.layers {
            assert_eq!(l.image, l.prompt);
        }
        assert!(w.pos_embed.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_object_scene_has_target_and_background() {
        let w = planted_weights(&ModelConfig::default(), 1, DEFAULT_SHARPNESS).unwrap();
        let s = single_object_scene(&w, "cat", &DEMO_BACKGROUND, 0.0, 3).unwrap();
        assert!(s.gt.labels.contains(&1) && s.gt.labels.contains(&0));
        assert_eq!(s.vocab.concepts()[0], "cat");
        assert_eq!(s.x0.shape(), (256, 64));
    }
}

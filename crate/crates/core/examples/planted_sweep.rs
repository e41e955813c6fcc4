//! Multi-class accuracy of the planted demo scene across noise levels.
//!
//! ```text
//! cargo run --release -p cakit --example planted_sweep
//! ```

use cakit::conceptattn::{
    forward_with_concepts, ConceptAttentionMode, ConceptVocabulary, SaliencyOptions, SaliencyStack,
};
use cakit::mmdit::ModelConfig;
use cakit::planted::{multiclass_scene, planted_weights, DEFAULT_SHARPNESS, DEMO_CONCEPTS};
use cakit::segeval::{score_multiclass, SegmentationSample};

fn main() -> cakit::Result<()> {
    let cfg = ModelConfig::default();
    let vocab = ConceptVocabulary::from_strs(&DEMO_CONCEPTS, &["background"])?;
    let sigmas = [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0, 5.0];
    println!("sigma,min_acc,mean_acc,mean_miou");
    for sigma in sigmas {
        let (mut min_acc, mut sum_acc, mut sum_miou) = (f64::INFINITY, 0.0, 0.0);
        let seeds = 0..10u64;
        for seed in seeds.clone() {
            let weights = planted_weights(&cfg, seed, DEFAULT_SHARPNESS)?;
            let scene = multiclass_scene(&weights, &vocab, sigma, seed)?;
            let (traces, ctraces) = forward_with_concepts(
                &scene.prompt,
                &scene.x0,
                0,
                seed,
                &weights,
                &vocab,
                ConceptAttentionMode::CrossAndSelf,
            )?;
            let stack = SaliencyStack::build(
                &traces,
                &ctraces,
                SaliencyOptions::default(),
                cfg.img_h,
                cfg.img_w,
                &vocab,
                &cfg.hash(),
            )?;
            let map = stack.aggregate(&(0..cfg.n_layers).collect::<Vec<_>>())?;
            let m = score_multiclass(&SegmentationSample {
                id: scene.id.clone(),
                map,
                gt: scene.gt.clone(),
                target_concept: None,
                label_map: scene.label_map.clone(),
            })?;
            min_acc = min_acc.min(m.acc);
            sum_acc += m.acc;
            sum_miou += m.miou;
        }
        let n = seeds.count() as f64;
        println!(
            "{sigma},{min_acc:.4},{:.4},{:.4}",
            sum_acc / n,
            sum_miou / n
        );
    }
    Ok(())
}

mod common;

use cakit::conceptattn::{
    forward_with_concepts, non_interference_check, run_concept_stream, streams_bit_identical,
    ConceptAttentionMode, ConceptStream, ConceptVocabulary, HeadAggregation, SaliencyOptions,
    SaliencySpace, SaliencyStack,
};
use cakit::mmdit::forward_with_trace;
use cakit::Weights;
use common::*;

#[test]
fn concept_stream_never_touches_image_or_prompt() {
    for seed in 0..40 {
        let d = draw(seed);
        assert!(
            non_interference_check(&d.tokens, &d.x0, d.t, seed, &d.weights, &d.vocab).unwrap(),
            "seed {seed}"
        );
    }
}

#[test]
fn leaky_variant_is_caught() {
    for seed in 0..20 {
        let d = draw(seed);
        let honest = forward_with_trace(&d.tokens, &d.x0, d.t, seed, &d.weights).unwrap();
        let leaky = leaky_forward(&d.tokens, &d.x0, d.t, seed, &d.weights, &d.vocab);
        assert!(!streams_bit_identical(&honest, &leaky), "seed {seed}");
    }
}

#[test]
fn leaky_variant_differs_only_in_image_stream() {
    let d = draw(3);
    let honest = forward_with_trace(&d.tokens, &d.x0, d.t, 3, &d.weights).unwrap();
    let leaky = leaky_forward(&d.tokens, &d.x0, d.t, 3, &d.weights, &d.vocab);
    assert!(!honest[0].image.o.bit_eq(&leaky[0].image.o));
    assert!(honest[0].prompt.o.bit_eq(&leaky[0].prompt.o));
}

#[test]
fn post_hoc_and_inline_streams_agree() {
    for seed in 0..10 {
        let d = draw(seed);
        let (traces, inline) = forward_with_concepts(
            &d.tokens,
            &d.x0,
            d.t,
            seed,
            &d.weights,
            &d.vocab,
            ConceptAttentionMode::CrossAndSelf,
        )
        .unwrap();
        let post = run_concept_stream(
            &d.vocab,
            &traces,
            &d.weights,
            ConceptAttentionMode::CrossAndSelf,
        )
        .unwrap();
        assert_eq!(inline, post);
        for (a, b) in inline.iter().zip(inline.iter().skip(1)) {
            assert!(a.c_next.bit_eq(&b.c_in));
        }
    }
}

#[test]
fn concept_projections_use_prompt_weights() {
    let d = draw(5);
    let traces = forward_with_trace(&d.tokens, &d.x0, d.t, 5, &d.weights).unwrap();
    let ct = run_concept_stream(
        &d.vocab,
        &traces,
        &d.weights,
        ConceptAttentionMode::CrossAndSelf,
    )
    .unwrap();
    let layer = &d.weights.layers[0];
    let mp = layer.prompt.modulation(&traces[0].cond).unwrap();
    let mx = layer.image.modulation(&traces[0].cond).unwrap();
    let via_prompt = layer.prompt.project_qkv(&ct[0].c_in, &mp).unwrap();
    let via_image = layer.image.project_qkv(&ct[0].c_in, &mx).unwrap();
    assert!(ct[0].q_c.bit_eq(&via_prompt.q));
    assert!(ct[0].k_c.bit_eq(&via_prompt.k));
    assert!(!ct[0].q_c.bit_eq(&via_image.q));
}

#[test]
fn prompt_weight_edits_reach_the_concept_stream() {
    let d = draw(6);
    let traces = forward_with_trace(&d.tokens, &d.x0, d.t, 6, &d.weights).unwrap();
    let before = run_concept_stream(
        &d.vocab,
        &traces,
        &d.weights,
        ConceptAttentionMode::CrossAndSelf,
    )
    .unwrap();
    let mut edited = d.weights.clone();
    let w = &mut edited.layers[0].prompt.q.weight;
    let v = w.get(0, 0);
    w.set(0, 0, v + 1.0);
    let after = run_concept_stream(
        &d.vocab,
        &traces,
        &edited,
        ConceptAttentionMode::CrossAndSelf,
    )
    .unwrap();
    assert!(!before[0].q_c.bit_eq(&after[0].q_c));

    let mut image_only = d.weights.clone();
    let w = &mut image_only.layers[0].image.q.weight;
    w.set(0, 0, w.get(0, 0) + 1.0);
    let same = run_concept_stream(
        &d.vocab,
        &traces,
        &image_only,
        ConceptAttentionMode::CrossAndSelf,
    )
    .unwrap();
    assert!(before[0].q_c.bit_eq(&same[0].q_c));
}

fn zero_gates(w: &mut Weights) {
    for layer in &mut w.layers {
        let m = &mut layer.prompt.modulation;
        let d = m.weight.cols() / 6;
        for block in [2, 5] {
            for j in block * d..(block + 1) * d {
                for i in 0..m.weight.rows() {
                    m.weight.set(i, j, 0.0);
                }
                m.bias[j] = 0.0;
            }
        }
    }
}

#[test]
fn zero_gates_leave_concepts_unchanged() {
    let mut d = draw(8);
    zero_gates(&mut d.weights);
    let (_, ct) = forward_with_concepts(
        &d.tokens,
        &d.x0,
        d.t,
        8,
        &d.weights,
        &d.vocab,
        ConceptAttentionMode::CrossAndSelf,
    )
    .unwrap();
    for t in &ct {
        assert!(t.c_next.bit_eq(&t.c_in));
    }
}

#[test]
fn permuting_concepts_permutes_outputs() {
    for seed in 0..10 {
        let d = draw(seed);
        let r = d.vocab.len();
        let perm: Vec<usize> = (0..r).rev().collect();
        let pv = d.vocab.permuted(&perm).unwrap();
        for mode in [
            ConceptAttentionMode::CrossAndSelf,
            ConceptAttentionMode::CrossOnly,
        ] {
            let (traces, a) =
                forward_with_concepts(&d.tokens, &d.x0, d.t, seed, &d.weights, &d.vocab, mode)
                    .unwrap();
            let b = run_concept_stream(&pv, &traces, &d.weights, mode).unwrap();
            for (ta, tb) in a.iter().zip(&b) {
                for (i, &pi) in perm.iter().enumerate() {
                    for j in 0..ta.c_next.cols() {
                        assert!((tb.c_next.get(i, j) - ta.c_next.get(pi, j)).abs() < 1e-12);
                    }
                }
            }
            if mode == ConceptAttentionMode::CrossOnly {
                // Each concept sees only image keys, so the rows are computed
                // independently and permute bit for bit.
                for (ta, tb) in a.iter().zip(&b) {
                    for (i, &pi) in perm.iter().enumerate() {
                        assert_eq!(tb.o_c.row(i), ta.o_c.row(pi));
                    }
                }
            }
        }
    }
}

#[test]
fn layer_mismatch_is_rejected() {
    let d = draw(2);
    let traces = forward_with_trace(&d.tokens, &d.x0, d.t, 2, &d.weights).unwrap();
    let mut s =
        ConceptStream::new(&d.vocab, &d.weights, ConceptAttentionMode::CrossAndSelf).unwrap();
    if traces.len() > 1 {
        assert!(s.step(&traces[1]).is_err());
    }
    s.step(&traces[0]).unwrap();
    assert_eq!(s.state().layer, 1);
}

#[test]
fn unknown_concept_is_an_error() {
    let d = draw(1);
    let vocab = ConceptVocabulary::from_strs(&["not-a-token"], &[]).unwrap();
    assert!(forward_with_concepts(
        &d.tokens,
        &d.x0,
        d.t,
        1,
        &d.weights,
        &vocab,
        ConceptAttentionMode::CrossAndSelf
    )
    .is_err());
}

#[test]
fn layer_average_is_mean_of_single_layer_maps() {
    let d = draw(11);
    let n_layers = d.weights.config.n_layers;
    let (traces, ct) = forward_with_concepts(
        &d.tokens,
        &d.x0,
        d.t,
        11,
        &d.weights,
        &d.vocab,
        ConceptAttentionMode::CrossAndSelf,
    )
    .unwrap();
    let cfg = &d.weights.config;
    for space in SaliencySpace::ALL {
        for softmax in [false, true] {
            let opts = SaliencyOptions::new(space, softmax, HeadAggregation::Concat);
            let stack = SaliencyStack::build(
                &traces,
                &ct,
                opts,
                cfg.img_h,
                cfg.img_w,
                &d.vocab,
                &cfg.hash(),
            )
            .unwrap();
            let all: Vec<usize> = (0..n_layers).collect();
            let agg = stack.aggregate(&all).unwrap();
            let singles: Vec<_> = all
                .iter()
                .map(|&l| stack.aggregate(&[l]).unwrap())
                .collect();
            for i in 0..agg.scores.rows() {
                for j in 0..agg.scores.cols() {
                    let mean =
                        singles.iter().map(|m| m.scores.get(i, j)).sum::<f64>() / n_layers as f64;
                    assert!((agg.scores.get(i, j) - mean).abs() < 1e-12);
                }
            }
        }
    }
}

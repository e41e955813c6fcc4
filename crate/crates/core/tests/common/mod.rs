//! Naive loop oracles shared by the integration tests. Everything here works
//! on `Vec<Vec<f64>>` and does not touch the library's matrix kernels.
#![allow(dead_code)]

use cakit::mmdit::{Linear, ModelConfig, StreamWeights};
use cakit::numerics::Rng;
use cakit::Matrix;

pub type Rows = Vec<Vec<f64>>;

pub fn rows(m: &Matrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn max_diff(a: &Matrix, b: &Rows) -> f64 {
    assert_eq!(a.rows(), b.len());
    let mut worst = 0.0f64;
    for (i, row) in b.iter().enumerate() {
        assert_eq!(a.cols(), row.len());
        for (j, &v) in row.iter().enumerate() {
            worst = worst.max((a.get(i, j) - v).abs());
        }
    }
    worst
}

pub fn linear(x: &Rows, l: &Linear<f64>) -> Rows {
    let w = &l.weight;
    x.iter()
        .map(|row| {
            (0..w.cols())
                .map(|j| {
                    let mut s = l.bias[j];
                    for (k, &xv) in row.iter().enumerate() {
                        s += xv * w.get(k, j);
                    }
                    s
                })
                .collect()
        })
        .collect()
}

pub fn layer_norm(x: &Rows) -> Rows {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter()
                .map(|v| (v - mean) / (var + 1e-6).sqrt())
                .collect()
        })
        .collect()
}

pub fn gelu(v: f64) -> f64 {
    0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v.powi(3))).tanh())
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub struct Mods {
    pub shift_a: Vec<f64>,
    pub scale_a: Vec<f64>,
    pub gate_a: Vec<f64>,
    pub shift_m: Vec<f64>,
    pub scale_m: Vec<f64>,
    pub gate_m: Vec<f64>,
}

pub fn mods(s: &StreamWeights<f64>, cond: &[f64]) -> Mods {
    let c: Vec<f64> = cond.iter().map(|&x| x / (1.0 + (-x).exp())).collect();
    let out = &linear(&vec![c], &s.modulation)[0];
    let d = out.len() / 6;
    let b = |i: usize| out[i * d..(i + 1) * d].to_vec();
    Mods {
        shift_a: b(0),
        scale_a: b(1),
        gate_a: b(2),
        shift_m: b(3),
        scale_m: b(4),
        gate_m: b(5),
    }
}

pub fn modulate(x: &Rows, shift: &[f64], scale: &[f64]) -> Rows {
    layer_norm(x)
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(j, v)| (1.0 + scale[j]) * v + shift[j])
                .collect()
        })
        .collect()
}

/// Per-head softmax attention of `q` over `(k, v)`, heads concatenated.
pub fn attention(q: &Rows, k: &Rows, v: &Rows, n_heads: usize) -> Rows {
    let d = q[0].len();
    let hd = d / n_heads;
    let mut out = vec![vec![0.0; d]; q.len()];
    for h in 0..n_heads {
        let cols = h * hd..(h + 1) * hd;
        for (i, qi) in q.iter().enumerate() {
            let logits: Vec<f64> = k
                .iter()
                .map(|kj| cols.clone().map(|c| qi[c] * kj[c]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let w = softmax(&logits);
            for c in cols.clone() {
                out[i][c] = w.iter().zip(v).map(|(wj, vj)| wj * vj[c]).sum();
            }
        }
    }
    out
}

pub fn residuals(s: &StreamWeights<f64>, m: &Mods, x: &Rows, o: &Rows) -> Rows {
    let po = linear(o, &s.proj);
    let mid: Rows = x
        .iter()
        .zip(&po)
        .map(|(xr, pr)| {
            xr.iter()
                .enumerate()
                .map(|(j, v)| v + m.gate_a[j] * pr[j])
                .collect()
        })
        .collect();
    let h = modulate(&mid, &m.shift_m, &m.scale_m);
    let f: Rows = linear(&h, &s.fc1)
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    let f = linear(&f, &s.fc2);
    mid.iter()
        .zip(&f)
        .map(|(xr, fr)| {
            xr.iter()
                .enumerate()
                .map(|(j, v)| v + m.gate_m[j] * fr[j])
                .collect()
        })
        .collect()
}

pub struct QkvRows {
    pub q: Rows,
    pub k: Rows,
    pub v: Rows,
}

pub fn qkv(s: &StreamWeights<f64>, m: &Mods, x: &Rows) -> QkvRows {
    let h = modulate(x, &m.shift_a, &m.scale_a);
    QkvRows {
        q: linear(&h, &s.q),
        k: linear(&h, &s.k),
        v: linear(&h, &s.v),
    }
}

/// Small random configuration: at most 8 image tokens and 16 channels.
pub fn small_config(seed: u64) -> ModelConfig {
    let mut s = Rng::new(seed).stream("small_config");
    let n_heads = [1, 2, 4][s.below(3)];
    let hd = 1 + s.below(16 / n_heads);
    let d = (n_heads * hd).max(2);
    let d = d + d % n_heads;
    let (img_h, img_w) = [
        (1, 1),
        (1, 2),
        (2, 2),
        (2, 3),
        (2, 4),
        (1, 8),
        (3, 2),
        (1, 5),
    ][s.below(8)];
    ModelConfig {
        d_model: d,
        n_heads,
        n_layers: 1 + s.below(3),
        img_h,
        img_w,
        prompt_len: 4,
        mlp_ratio: 1 + s.below(3),
        schedule_len: 1000,
        ..ModelConfig::default()
    }
}

pub fn random_rows(seed: u64, name: &str, rows: usize, cols: usize) -> Rows {
    let mut s = Rng::new(seed).stream(name);
    (0..rows)
        .map(|_| (0..cols).map(|_| s.normal()).collect())
        .collect()
}

pub fn to_matrix(r: &Rows) -> Matrix {
    Matrix::from_rows(r).unwrap()
}

/// A deliberately broken forward pass: image queries also attend over the
/// concept keys and values. Used to show the non-interference check bites.
pub fn leaky_forward(
    tokens: &[String],
    x0: &Matrix,
    t: u32,
    noise_seed: u64,
    weights: &cakit::Weights,
    vocab: &cakit::conceptattn::ConceptVocabulary,
) -> Vec<cakit::LayerTrace> {
    use cakit::conceptattn::init_concepts;
    use cakit::mmdit::{multi_head_attention, prepare_inputs, HeadTrace, LayerTrace, StreamTrace};

    let inputs = prepare_inputs(tokens, x0, t, noise_seed, weights).unwrap();
    let (mut x, mut p) = (inputs.x.clone(), inputs.p.clone());
    let mut c = init_concepts(vocab, &weights.embeddings).unwrap().c;
    let n_heads = weights.config.n_heads;
    let mut out = Vec::new();
    for (i, layer) in weights.layers.iter().enumerate() {
        let mx = layer.image.modulation(&inputs.cond).unwrap();
        let mp = layer.prompt.modulation(&inputs.cond).unwrap();
        let qx = layer.image.project_qkv(&x, &mx).unwrap();
        let qp = layer.prompt.project_qkv(&p, &mp).unwrap();
        let qc = layer.prompt.project_qkv(&c, &mp).unwrap();
        let ax = multi_head_attention(
            &qx.q,
            &Matrix::vstack(&[&qx.k, &qp.k, &qc.k]).unwrap(),
            &Matrix::vstack(&[&qx.v, &qp.v, &qc.v]).unwrap(),
            n_heads,
        )
        .unwrap();
        let ap = multi_head_attention(
            &qp.q,
            &Matrix::vstack(&[&qx.k, &qp.k]).unwrap(),
            &Matrix::vstack(&[&qx.v, &qp.v]).unwrap(),
            n_heads,
        )
        .unwrap();
        let ac = multi_head_attention(
            &qc.q,
            &Matrix::vstack(&[&qx.k, &qc.k]).unwrap(),
            &Matrix::vstack(&[&qx.v, &qc.v]).unwrap(),
            n_heads,
        )
        .unwrap();
        let x_mid = layer.image.attention_residual(&x, &ax.output, &mx).unwrap();
        let p_mid = layer
            .prompt
            .attention_residual(&p, &ap.output, &mp)
            .unwrap();
        let c_mid = layer
            .prompt
            .attention_residual(&c, &ac.output, &mp)
            .unwrap();
        let x_next = layer.image.mlp_residual(&x_mid, &mx).unwrap();
        let p_next = layer.prompt.mlp_residual(&p_mid, &mp).unwrap();
        c = layer.prompt.mlp_residual(&c_mid, &mp).unwrap();
        let heads = ax
            .heads
            .iter()
            .zip(&ap.heads)
            .map(|(hx, hp)| HeadTrace {
                weights: hx.weights.clone(),
                o_x: hx.output.clone(),
                o_p: hp.output.clone(),
            })
            .collect();
        out.push(LayerTrace {
            layer: i,
            timestep: t,
            n_heads,
            cond: inputs.cond.clone(),
            x_in: x.clone(),
            p_in: p.clone(),
            image: StreamTrace {
                q: qx.q,
                k: qx.k,
                v: qx.v,
                o: ax.output,
            },
            prompt: StreamTrace {
                q: qp.q,
                k: qp.k,
                v: qp.v,
                o: ap.output,
            },
            heads,
            x_next: x_next.clone(),
            p_next: p_next.clone(),
        });
        x = x_next;
        p = p_next;
    }
    out
}

/// A random (config, weights, prompt, image, vocabulary) draw for stream
/// tests. Vocabulary and prompt are drawn from the config's token list.
pub struct Draw {
    pub weights: cakit::Weights,
    pub tokens: Vec<String>,
    pub x0: Matrix,
    pub t: u32,
    pub vocab: cakit::conceptattn::ConceptVocabulary,
}

pub fn draw(seed: u64) -> Draw {
    let cfg = small_config(seed);
    let weights = cakit::Weights::init(&cfg, seed.wrapping_mul(31)).unwrap();
    let mut s = Rng::new(seed).stream("draw");
    let pick = |s: &mut cakit::numerics::Stream, k: usize| -> Vec<String> {
        let mut pool = cfg.tokens.clone();
        (0..k).map(|_| pool.remove(s.below(pool.len()))).collect()
    };
    let n_tokens = 1 + s.below(cfg.prompt_len);
    let tokens = pick(&mut s, n_tokens);
    let n_concepts = 1 + s.below(4);
    let concepts = pick(&mut s, n_concepts);
    let vocab = cakit::conceptattn::ConceptVocabulary::new(concepts, &[] as &[&str]).unwrap();
    let x0 = to_matrix(&random_rows(seed, "x0", cfg.n_image_tokens(), cfg.d_model));
    let t = [0, 1, 250, 500, 999, 1000][s.below(6)];
    Draw {
        weights,
        tokens,
        x0,
        t,
        vocab,
    }
}

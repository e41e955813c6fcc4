use crate::error::{Error, Result};
use crate::numerics::{Matrix, Real, Rng};

use super::{mm_attention_layer, LayerTrace, MMDiTWeights};

/// Stream that supplies the Gaussian noise in [`noise_image`].
pub const NOISE_STREAM: &str = "noise";

/// Sinusoidal embedding of the raw timestep: `[cos(t·fᵢ)…, sin(t·fᵢ)…]` with
/// `fᵢ = 10000^(−i/half)`, zero-padded to odd widths.
pub fn timestep_embedding<T: Real>(t: u32, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = vec![T::zero(); dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = T::from_f64_lossy(arg.cos());
        out[half + i] = T::from_f64_lossy(arg.sin());
    }
    out
}

/// Rectified-flow interpolation `(1 − s)·x0 + s·ε` with `s = t/T` and `ε`
/// drawn row-major from `rng`'s [`NOISE_STREAM`].
///
/// At `t = 0` the input is returned unchanged; at `t = T` the result is `ε`
/// alone.
pub fn noise_image<T: Real>(
    x0: &Matrix<T>,
    t: u32,
    schedule_len: u32,
    rng: &Rng,
) -> Result<Matrix<T>> {
    if t > schedule_len {
        return Err(Error::OutOfRange(format!(
            "timestep {t} (schedule length {schedule_len})"
        )));
    }
    if t == 0 {
        return Ok(x0.clone());
    }
    let eps: Matrix<T> = rng
        .stream(NOISE_STREAM)
        .normal_matrix(x0.rows(), x0.cols(), 1.0);
    if t == schedule_len {
        return Ok(eps);
    }
    let s = T::from_f64_lossy(t as f64 / schedule_len as f64);
    x0.scale(T::one() - s).add(&eps.scale(s))
}

/// Inputs to the first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInputs<T = f64> {
    pub x: Matrix<T>,
    pub p: Matrix<T>,
    pub cond: Vec<T>,
    pub timestep: u32,
}

/// Embeds the prompt, noises `x0` to timestep `t` and adds positional
/// embeddings to the image tokens.
pub fn prepare_inputs<T: Real, S: AsRef<str>>(
    tokens: &[S],
    x0: &Matrix<T>,
    t: u32,
    noise_seed: u64,
    weights: &MMDiTWeights<T>,
) -> Result<ModelInputs<T>> {
    let cfg = &weights.config;
    if tokens.is_empty() || tokens.len() > cfg.prompt_len {
        return Err(Error::Invalid(format!(
            "prompt has {} tokens, model accepts 1..={}",
            tokens.len(),
            cfg.prompt_len
        )));
    }
    if x0.shape() != (cfg.n_image_tokens(), cfg.d_model) {
        return Err(Error::shape(
            "image tokens",
            x0.shape(),
            (cfg.n_image_tokens(), cfg.d_model),
        ));
    }
    let p = weights.embeddings.lookup(tokens)?;
    let z = noise_image(x0, t, cfg.schedule_len, &Rng::new(noise_seed))?;
    let x = z.add(&weights.pos_embed)?;
    Ok(ModelInputs {
        x,
        p,
        cond: timestep_embedding(t, cfg.d_model),
        timestep: t,
    })
}

/// Runs every layer, handing each trace to `on_layer` before the next layer
/// starts.
pub fn run_layers<T: Real>(
    inputs: &ModelInputs<T>,
    weights: &MMDiTWeights<T>,
    mut on_layer: impl FnMut(&LayerTrace<T>) -> Result<()>,
) -> Result<Vec<LayerTrace<T>>> {
    let n_heads = weights.config.n_heads;
    let mut traces: Vec<LayerTrace<T>> = Vec::with_capacity(weights.layers.len());
    for (i, layer) in weights.layers.iter().enumerate() {
        let (x, p) = match traces.last() {
            Some(prev) => (&prev.x_next, &prev.p_next),
            None => (&inputs.x, &inputs.p),
        };
        let trace = mm_attention_layer(x, p, layer, &inputs.cond, n_heads, i, inputs.timestep)?;
        on_layer(&trace)?;
        traces.push(trace);
    }
    Ok(traces)
}

/// Full forward pass returning one trace per layer.
pub fn forward_with_trace<T: Real, S: AsRef<str>>(
    tokens: &[S],
    x0: &Matrix<T>,
    t: u32,
    noise_seed: u64,
    weights: &MMDiTWeights<T>,
) -> Result<Vec<LayerTrace<T>>> {
    let inputs = prepare_inputs(tokens, x0, t, noise_seed, weights)?;
    run_layers(&inputs, weights, |_| Ok(()))
}

/// Seed of the fixed grayscale lift.
pub const IMAGE_LIFT_SEED: u64 = 0;

/// Lifts 8-bit grayscale pixels to tokens: `(g / 255)·w + b`, where `w` and
/// `b` are `1 × d` rows drawn from `Rng::new(IMAGE_LIFT_SEED)` streams
/// `"image_lift.weight"` and `"image_lift.bias"` with scale `1/√d`.
pub fn image_tokens_from_gray<T: Real>(pixels: &[u8], d_model: usize) -> Matrix<T> {
    let rng = Rng::new(IMAGE_LIFT_SEED);
    let scale = 1.0 / (d_model as f64).sqrt();
    let w: Matrix<T> = rng
        .stream("image_lift.weight")
        .normal_matrix(1, d_model, scale);
    let b: Matrix<T> = rng
        .stream("image_lift.bias")
        .normal_matrix(1, d_model, scale);
    Matrix::from_fn(pixels.len(), d_model, |i, j| {
        T::from_f64_lossy(pixels[i] as f64 / 255.0) * w.get(0, j) + b.get(0, j)
    })
}

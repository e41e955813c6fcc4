use crate::error::{Error, Result};
use crate::numerics::{
    gelu, layer_norm, matmul, matmul_transposed, row_softmax, silu, Matrix, Real, LAYER_NORM_EPS,
};

use super::{LayerWeights, StreamWeights};

/// Per-stream adaLN outputs for one layer: shift/scale before attention,
/// gate after the output projection, and the same triple around the MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct Modulation<T = f64> {
    pub shift_attn: Vec<T>,
    pub scale_attn: Vec<T>,
    pub gate_attn: Vec<T>,
    pub shift_mlp: Vec<T>,
    pub scale_mlp: Vec<T>,
    pub gate_mlp: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Qkv<T = f64> {
    pub q: Matrix<T>,
    pub k: Matrix<T>,
    pub v: Matrix<T>,
}

fn eps<T: Real>() -> T {
    T::from_f64_lossy(LAYER_NORM_EPS)
}

/// `(1 + scale) ⊙ lnorm(x) + shift`.
pub fn modulate<T: Real>(x: &Matrix<T>, shift: &[T], scale: &[T]) -> Result<Matrix<T>> {
    let one_plus: Vec<T> = scale.iter().map(|&s| T::one() + s).collect();
    layer_norm(x, eps())?
        .mul_row_broadcast(&one_plus)?
        .add_row_broadcast(shift)
}

impl<T: Real> StreamWeights<T> {
    pub fn modulation(&self, cond: &[T]) -> Result<Modulation<T>> {
        let d = self.q.d_out();
        let c = Matrix::from_vec(1, cond.len(), cond.to_vec())?;
        let out = self.modulation.forward(&silu(&c))?;
        if out.cols() != 6 * d {
            return Err(Error::shape("modulation", out.shape(), (1, 6 * d)));
        }
        let block = |i: usize| out.data()[i * d..(i + 1) * d].to_vec();
        Ok(Modulation {
            shift_attn: block(0),
            scale_attn: block(1),
            gate_attn: block(2),
            shift_mlp: block(3),
            scale_mlp: block(4),
            gate_mlp: block(5),
        })
    }

    /// Modulated layer norm followed by the q/k/v projections.
    pub fn project_qkv(&self, x: &Matrix<T>, m: &Modulation<T>) -> Result<Qkv<T>> {
        let h = modulate(x, &m.shift_attn, &m.scale_attn)?;
        Ok(Qkv {
            q: self.q.forward(&h)?,
            k: self.k.forward(&h)?,
            v: self.v.forward(&h)?,
        })
    }

    /// `x + α₁ ⊙ (P o)`.
    pub fn attention_residual(
        &self,
        x: &Matrix<T>,
        o: &Matrix<T>,
        m: &Modulation<T>,
    ) -> Result<Matrix<T>> {
        x.add(&self.proj.forward(o)?.mul_row_broadcast(&m.gate_attn)?)
    }

    pub fn mlp(&self, h: &Matrix<T>) -> Result<Matrix<T>> {
        self.fc2.forward(&gelu(&self.fc1.forward(h)?))
    }

    /// `x + α₂ ⊙ MLP((1 + γ₂) ⊙ lnorm(x) + β₂)`.
    pub fn mlp_residual(&self, x: &Matrix<T>, m: &Modulation<T>) -> Result<Matrix<T>> {
        let h = modulate(x, &m.shift_mlp, &m.scale_mlp)?;
        x.add(&self.mlp(&h)?.mul_row_broadcast(&m.gate_mlp)?)
    }
}

/// One head of a multi-head attention call.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadAttention<T = f64> {
    /// `queries × keys` softmax weights.
    pub weights: Matrix<T>,
    /// `queries × head_dim`.
    pub output: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput<T = f64> {
    /// Heads concatenated, `queries × d_model`.
    pub output: Matrix<T>,
    pub heads: Vec<HeadAttention<T>>,
}

/// Multi-head scaled dot-product attention, scale `1/√head_dim`.
pub fn multi_head_attention<T: Real>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    n_heads: usize,
) -> Result<AttentionOutput<T>> {
    if q.cols() != k.cols() || k.shape() != v.shape() {
        return Err(Error::shape("attention", q.shape(), k.shape()));
    }
    if n_heads == 0 || !q.cols().is_multiple_of(n_heads) {
        return Err(Error::Invalid(format!(
            "width {} not divisible into {n_heads} heads",
            q.cols()
        )));
    }
    let hd = q.cols() / n_heads;
    let scale = T::one() / T::from_usize_exact(hd).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = q.col_slice(h * hd, hd)?;
        let kh = k.col_slice(h * hd, hd)?;
        let vh = v.col_slice(h * hd, hd)?;
        let weights = row_softmax(&matmul_transposed(&qh, &kh)?, scale);
        let output = matmul(&weights, &vh)?;
        heads.push(HeadAttention { weights, output });
    }
    let parts: Vec<&Matrix<T>> = heads.iter().map(|h| &h.output).collect();
    Ok(AttentionOutput {
        output: Matrix::hstack(&parts)?,
        heads,
    })
}

/// Queries, keys, values and attention output of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamTrace<T = f64> {
    pub q: Matrix<T>,
    pub k: Matrix<T>,
    pub v: Matrix<T>,
    /// Heads concatenated, before the output projection.
    pub o: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadTrace<T = f64> {
    /// Joint `(n + l) × (n + l)` attention weights over `[image; prompt]`.
    pub weights: Matrix<T>,
    pub o_x: Matrix<T>,
    pub o_p: Matrix<T>,
}

/// Everything one MMAttn layer computed.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace<T = f64> {
    pub layer: usize,
    pub timestep: u32,
    pub n_heads: usize,
    pub cond: Vec<T>,
    pub x_in: Matrix<T>,
    pub p_in: Matrix<T>,
    pub image: StreamTrace<T>,
    pub prompt: StreamTrace<T>,
    pub heads: Vec<HeadTrace<T>>,
    pub x_next: Matrix<T>,
    pub p_next: Matrix<T>,
}

impl<T: Real> LayerTrace<T> {
    pub fn n_image(&self) -> usize {
        self.x_in.rows()
    }

    pub fn n_prompt(&self) -> usize {
        self.p_in.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.x_in.cols() / self.n_heads
    }

    /// Columns of `m` belonging to head `h`.
    pub fn head_slice(&self, m: &Matrix<T>, h: usize) -> Result<Matrix<T>> {
        let hd = self.head_dim();
        m.col_slice(h * hd, hd)
    }
}

/// One dual-stream MMAttn layer.
///
/// Each stream is modulated with its own adaLN parameters and projected with
/// its own q/k/v weights; attention runs jointly over `[image; prompt]`;
/// the outputs go back through each stream's own projection, gates and MLP.
/// The returned trace carries `x_next` and `p_next`.
pub fn mm_attention_layer<T: Real>(
    x: &Matrix<T>,
    p: &Matrix<T>,
    weights: &LayerWeights<T>,
    cond: &[T],
    n_heads: usize,
    layer: usize,
    timestep: u32,
) -> Result<LayerTrace<T>> {
    let d = weights.image.q.weight.rows();
    if x.cols() != d || p.cols() != d {
        return Err(Error::shape("mm_attention_layer", x.shape(), p.shape()));
    }
    if cond.len() != weights.image.modulation.weight.rows() {
        return Err(Error::shape(
            "mm_attention_layer cond",
            (1, cond.len()),
            weights.image.modulation.weight.shape(),
        ));
    }
    let n = x.rows();
    let l = p.rows();

    let mod_x = weights.image.modulation(cond)?;
    let mod_p = weights.prompt.modulation(cond)?;
    let qkv_x = weights.image.project_qkv(x, &mod_x)?;
    let qkv_p = weights.prompt.project_qkv(p, &mod_p)?;

    let q = Matrix::vstack(&[&qkv_x.q, &qkv_p.q])?;
    let k = Matrix::vstack(&[&qkv_x.k, &qkv_p.k])?;
    let v = Matrix::vstack(&[&qkv_x.v, &qkv_p.v])?;
    let attn = multi_head_attention(&q, &k, &v, n_heads)?;

    let o_x = attn.output.row_slice(0, n)?;
    let o_p = attn.output.row_slice(n, l)?;

    let x_mid = weights.image.attention_residual(x, &o_x, &mod_x)?;
    let p_mid = weights.prompt.attention_residual(p, &o_p, &mod_p)?;
    let x_next = weights.image.mlp_residual(&x_mid, &mod_x)?;
    let p_next = weights.prompt.mlp_residual(&p_mid, &mod_p)?;

    let heads = attn
        .heads
        .into_iter()
        .map(|h| {
            Ok(HeadTrace {
                o_x: h.output.row_slice(0, n)?,
                o_p: h.output.row_slice(n, l)?,
                weights: h.weights,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(LayerTrace {
        layer,
        timestep,
        n_heads,
        cond: cond.to_vec(),
        x_in: x.clone(),
        p_in: p.clone(),
        image: StreamTrace {
            q: qkv_x.q,
            k: qkv_x.k,
            v: qkv_x.v,
            o: o_x,
        },
        prompt: StreamTrace {
            q: qkv_p.q,
            k: qkv_p.k,
            v: qkv_p.v,
            o: o_p,
        },
        heads,
        x_next,
        p_next,
    })
}

//! Deterministic dense kernels and seeded random streams.

mod matrix;
mod rng;
mod scalar;

pub use matrix::{
    gelu, gelu_scalar, layer_norm, matmul, matmul_transposed, row_softmax, silu, Matrix,
    GELU_CUBIC, GELU_SQRT_2_OVER_PI, LAYER_NORM_EPS,
};
pub use rng::{Rng, Stream};
pub use scalar::Real;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{matmul, Matrix, Real, Rng};

use super::ModelConfig;

/// Affine map `x ↦ x·W + b` on row vectors. `weight` is `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T = f64> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(d_in, d_out),
            bias: vec![T::zero(); d_out],
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        matmul(x, &self.weight)?.add_row_broadcast(&self.bias)
    }

    pub fn d_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Parameters of one modality's residual stream inside an MMAttn layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamWeights<T = f64> {
    /// Conditioning → `(β₁, γ₁, α₁, β₂, γ₂, α₂)`, each `d_model` wide.
    pub modulation: Linear<T>,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    /// Output projection `P` applied to the attention output.
    pub proj: Linear<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T = f64> {
    pub image: StreamWeights<T>,
    pub prompt: StreamWeights<T>,
}

/// Token embedding rows plus the string → row map.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T = f64> {
    table: Matrix<T>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> EmbeddingTable<T> {
    pub fn new(tokens: &[String], table: Matrix<T>) -> Result<Self> {
        if table.rows() != tokens.len() {
            return Err(Error::shape(
                "embedding table",
                table.shape(),
                (tokens.len(), table.cols()),
            ));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { table, index })
    }

    pub fn row_of(&self, token: &str) -> Result<usize> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Stacks the embedding rows of `tokens` in order.
    pub fn lookup<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Matrix<T>> {
        let idx = tokens
            .iter()
            .map(|t| self.row_of(t.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        self.table.select_rows(&idx)
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.table
    }
}

/// All parameters of the toy MM-DiT.
#[derive(Debug, Clone, PartialEq)]
pub struct MMDiTWeights<T = f64> {
    pub config: ModelConfig,
    pub embeddings: EmbeddingTable<T>,
    /// Learned per-patch positional embeddings, `n × d_model`.
    pub pos_embed: Matrix<T>,
    pub layers: Vec<LayerWeights<T>>,
}

const STREAM_PARTS: [&str; 7] = ["modulation", "q", "k", "v", "proj", "fc1", "fc2"];

/// Ordered `(name, dims)` list of every tensor for `config`. This order is
/// the serialization order.
pub fn tensor_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.d_model;
    let hidden = config.mlp_hidden();
    let mut out = vec![
        ("embed.tokens".to_string(), vec![config.vocab_size(), d]),
        ("embed.pos".to_string(), vec![config.n_image_tokens(), d]),
    ];
    for l in 0..config.n_layers {
        for stream in ["image", "prompt"] {
            for part in STREAM_PARTS {
                let (i, o) = match part {
                    "modulation" => (d, 6 * d),
                    "fc1" => (d, hidden),
                    "fc2" => (hidden, d),
                    _ => (d, d),
                };
                out.push((format!("layers.{l}.{stream}.{part}.weight"), vec![i, o]));
                out.push((format!("layers.{l}.{stream}.{part}.bias"), vec![o]));
            }
        }
    }
    out
}

impl<T: Real> MMDiTWeights<T> {
    /// Scaled-Gaussian init: every tensor is drawn from the stream named after
    /// it with standard deviation `1/√d_model`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = Rng::new(seed);
        let scale = 1.0 / (config.d_model as f64).sqrt();
        Self::build(config, |name, dims| {
            let (r, c) = (dims[0], dims.get(1).copied().unwrap_or(1));
            Ok(rng.stream(name).normal_matrix::<T>(r, c, scale).into_data())
        })
    }

    /// Builds the weights by asking `fetch` for each tensor in layout order.
    pub(crate) fn build(
        config: &ModelConfig,
        mut fetch: impl FnMut(&str, &[usize]) -> Result<Vec<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let mut get = |name: &str, dims: &[usize]| -> Result<Matrix<T>> {
            let data = fetch(name, dims)?;
            Matrix::from_vec(dims[0], dims.get(1).copied().unwrap_or(1), data)
        };
        let layout = tensor_layout(config);
        let mut it = layout.iter();
        let mut next = || -> Result<Matrix<T>> {
            let (name, dims) = it.next().expect("layout covers every tensor");
            get(name, dims)
        };
        let tokens = next()?;
        let pos_embed = next()?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            let mut stream = || -> Result<StreamWeights<T>> {
                let mut lin = || -> Result<Linear<T>> {
                    let weight = next()?;
                    let bias = next()?.into_data();
                    Ok(Linear { weight, bias })
                };
                Ok(StreamWeights {
                    modulation: lin()?,
                    q: lin()?,
                    k: lin()?,
                    v: lin()?,
                    proj: lin()?,
                    fc1: lin()?,
                    fc2: lin()?,
                })
            };
            let image = stream()?;
            let prompt = stream()?;
            layers.push(LayerWeights { image, prompt });
        }
        Ok(Self {
            config: config.clone(),
            embeddings: EmbeddingTable::new(&config.tokens, tokens)?,
            pos_embed,
            layers,
        })
    }

    /// Tensors paired with their layout entries, in serialization order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut data: Vec<&[T]> = vec![self.embeddings.matrix().data(), self.pos_embed.data()];
        for layer in &self.layers {
            for s in [&layer.image, &layer.prompt] {
                for lin in [&s.modulation, &s.q, &s.k, &s.v, &s.proj, &s.fc1, &s.fc2] {
                    data.push(lin.weight.data());
                    data.push(&lin.bias);
                }
            }
        }
        tensor_layout(&self.config)
            .into_iter()
            .zip(data)
            .map(|((name, dims), d)| (name, dims, d))
            .collect()
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Real>(&self) -> MMDiTWeights<U> {
        let tensors: BTreeMap<String, Vec<U>> = self
            .named_tensors()
            .into_iter()
            .map(|(n, _, d)| (n, d.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect()))
            .collect();
        MMDiTWeights::build(&self.config, |name, _| Ok(tensors[name].clone()))
            .expect("cast preserves layout")
    }
}

//! Shared feature-interaction encoder and the two projection heads that map
//! each perturbed view to a `D`-dimensional representation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::models::{mlp, BoundDense, Dense};
use crate::numcore::{Graph, NodeId, NumError, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("expected input [B, {fields}, {dim}], got {got:?}")]
    Shape {
        fields: usize,
        dim: usize,
        got: Vec<usize>,
    },
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Transformer,
    Dnn,
    Crossnet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub layers: usize,
    /// Attention heads (transformer only); must divide `D`.
    pub heads: usize,
    /// Feed-forward width for the transformer (default `4·D`) or layer
    /// width for the DNN (default 400).
    pub hidden_width: Option<usize>,
    pub layer_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Transformer,
            layers: 3,
            heads: 2,
            hidden_width: None,
            layer_norm: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self, dim: usize) -> Result<(), EncoderError> {
        if self.layers < 1 {
            return Err(EncoderError::Config("layers must be >= 1".into()));
        }
        if self.hidden_width == Some(0) {
            return Err(EncoderError::Config("hidden_width must be >= 1".into()));
        }
        if self.kind == EncoderKind::Transformer && (self.heads == 0 || dim % self.heads != 0) {
            return Err(EncoderError::Config(format!(
                "heads ({}) must divide the embedding dimension ({dim})",
                self.heads
            )));
        }
        Ok(())
    }

    fn width(&self, dim: usize) -> usize {
        self.hidden_width.unwrap_or(match self.kind {
            EncoderKind::Transformer => 4 * dim,
            _ => 400,
        })
    }
}

/// One self-attention block: per-head Q/K/V maps, an output map, and a
/// two-layer feed-forward network, each with a residual connection.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLayer {
    pub query: Vec<Tensor>,
    pub key: Vec<Tensor>,
    pub value: Vec<Tensor>,
    pub output: Dense,
    pub ffn_in: Dense,
    pub ffn_out: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EncoderParams {
    Transformer(Vec<AttentionLayer>),
    Dnn(Vec<Dense>),
    Crossnet(Vec<Dense>),
}

/// Encoder parameters plus the projection heads for the two views.
#[derive(Clone, Debug, PartialEq)]
pub struct SslModule {
    pub config: EncoderConfig,
    pub fields: usize,
    pub dim: usize,
    pub encoder: EncoderParams,
    pub heads: [Dense; 2],
}

#[derive(Clone, Debug)]
struct BoundAttention {
    query: Vec<NodeId>,
    key: Vec<NodeId>,
    value: Vec<NodeId>,
    output: BoundDense,
    ffn_in: BoundDense,
    ffn_out: BoundDense,
}

#[derive(Clone, Debug)]
enum BoundEncoderParams {
    Transformer(Vec<BoundAttention>),
    Dnn(Vec<BoundDense>),
    Crossnet(Vec<BoundDense>),
}

#[derive(Clone, Debug)]
pub struct BoundSsl {
    encoder: BoundEncoderParams,
    pub heads: [BoundDense; 2],
    fields: usize,
    dim: usize,
    layer_norm: bool,
}

fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    Dense::init(fan_in, fan_out, rng).weight
}

impl SslModule {
    pub fn init(config: EncoderConfig, fields: usize, dim: usize, seed: u64) -> Result<Self, EncoderError> {
        config.validate(dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat = fields * dim;
        let width = config.width(dim);
        let (encoder, out_dim) = match config.kind {
            EncoderKind::Transformer => {
                let dh = dim / config.heads;
                let layers = (0..config.layers)
                    .map(|_| {
                        let per_head = |rng: &mut ChaCha8Rng| {
                            (0..config.heads).map(|_| glorot(dim, dh, rng)).collect::<Vec<_>>()
                        };
                        AttentionLayer {
                            query: per_head(&mut rng),
                            key: per_head(&mut rng),
                            value: per_head(&mut rng),
                            output: Dense::init(dim, dim, &mut rng),
                            ffn_in: Dense::init(dim, width, &mut rng),
                            ffn_out: Dense::init(width, dim, &mut rng),
                        }
                    })
                    .collect();
                (EncoderParams::Transformer(layers), flat)
            }
            EncoderKind::Dnn => {
                let mut fan_in = flat;
                let layers = (0..config.layers)
                    .map(|_| {
                        let d = Dense::init(fan_in, width, &mut rng);
                        fan_in = width;
                        d
                    })
                    .collect();
                (EncoderParams::Dnn(layers), width)
            }
            EncoderKind::Crossnet => {
                let layers = (0..config.layers).map(|_| Dense::init(flat, flat, &mut rng)).collect();
                (EncoderParams::Crossnet(layers), flat)
            }
        };
        let heads = [Dense::init(out_dim, dim, &mut rng), Dense::init(out_dim, dim, &mut rng)];
        Ok(Self {
            config,
            fields,
            dim,
            encoder,
            heads,
        })
    }

    /// Width of the encoder output fed to the projection heads.
    pub fn encoder_output_dim(&self) -> usize {
        self.heads[0].in_dim()
    }

    /// Parameters in graph registration order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        match &self.encoder {
            EncoderParams::Transformer(layers) => {
                for l in layers {
                    v.extend(l.query.iter().chain(&l.key).chain(&l.value));
                    v.extend(l.output.params());
                    v.extend(l.ffn_in.params());
                    v.extend(l.ffn_out.params());
                }
            }
            EncoderParams::Dnn(layers) | EncoderParams::Crossnet(layers) => {
                for l in layers {
                    v.extend(l.params());
                }
            }
        }
        for h in &self.heads {
            v.extend(h.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        match &mut self.encoder {
            EncoderParams::Transformer(layers) => {
                for l in layers {
                    v.extend(l.query.iter_mut().chain(&mut l.key).chain(&mut l.value));
                    v.extend(l.output.params_mut());
                    v.extend(l.ffn_in.params_mut());
                    v.extend(l.ffn_out.params_mut());
                }
            }
            EncoderParams::Dnn(layers) | EncoderParams::Crossnet(layers) => {
                for l in layers {
                    v.extend(l.params_mut());
                }
            }
        }
        for h in &mut self.heads {
            v.extend(h.params_mut());
        }
        v
    }

    pub fn bind(&self, g: &mut Graph) -> BoundSsl {
        let encoder = match &self.encoder {
            EncoderParams::Transformer(layers) => BoundEncoderParams::Transformer(
                layers
                    .iter()
                    .map(|l| BoundAttention {
                        query: l.query.iter().map(|t| g.param(t.clone())).collect(),
                        key: l.key.iter().map(|t| g.param(t.clone())).collect(),
                        value: l.value.iter().map(|t| g.param(t.clone())).collect(),
                        output: l.output.bind(g),
                        ffn_in: l.ffn_in.bind(g),
                        ffn_out: l.ffn_out.bind(g),
                    })
                    .collect(),
            ),
            EncoderParams::Dnn(layers) => BoundEncoderParams::Dnn(layers.iter().map(|l| l.bind(g)).collect()),
            EncoderParams::Crossnet(layers) => {
                BoundEncoderParams::Crossnet(layers.iter().map(|l| l.bind(g)).collect())
            }
        };
        let heads = [self.heads[0].bind(g), self.heads[1].bind(g)];
        BoundSsl {
            encoder,
            heads,
            fields: self.fields,
            dim: self.dim,
            layer_norm: self.config.layer_norm,
        }
    }
}

impl BoundSsl {
    /// Encodes a view `x: [B, F, D]` into `[B, encoder_output_dim]`.
    pub fn encode(&self, g: &mut Graph, x: NodeId) -> Result<NodeId, EncoderError> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 3 || shape[1] != self.fields || shape[2] != self.dim {
            return Err(EncoderError::Shape {
                fields: self.fields,
                dim: self.dim,
                got: shape,
            });
        }
        let b = shape[0];
        let flat_shape = [b, self.fields * self.dim];
        Ok(match &self.encoder {
            BoundEncoderParams::Transformer(layers) => {
                let mut h = x;
                for l in layers {
                    h = self.attention_block(g, h, l)?;
                }
                g.reshape(h, &flat_shape)?
            }
            BoundEncoderParams::Dnn(layers) => {
                let flat = g.reshape(x, &flat_shape)?;
                let mut unused = ChaCha8Rng::seed_from_u64(0);
                mlp(g, flat, layers, 0.0, false, true, &mut unused)?
            }
            BoundEncoderParams::Crossnet(layers) => {
                let x0 = g.reshape(x, &flat_shape)?;
                let mut h = x0;
                for l in layers {
                    let lin = l.apply(g, h)?;
                    let cross = g.mul(x0, lin)?;
                    h = g.add(cross, h)?;
                }
                h
            }
        })
    }

    fn attention_block(&self, g: &mut Graph, x: NodeId, l: &BoundAttention) -> Result<NodeId, NumError> {
        let dh = self.dim / l.query.len();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(l.query.len());
        for ((&wq, &wk), &wv) in l.query.iter().zip(&l.key).zip(&l.value) {
            let q = g.matmul(x, wq)?;
            let k = g.matmul(x, wk)?;
            let v = g.matmul(x, wv)?;
            let kt = g.transpose(k)?;
            let scores = g.matmul(q, kt)?;
            let scores = g.scale(scores, scale)?;
            let attn = g.softmax(scores)?;
            heads.push(g.matmul(attn, v)?);
        }
        let merged = if heads.len() == 1 { heads[0] } else { g.concat(&heads)? };
        let attended = l.output.apply(g, merged)?;
        let mut h = g.add(x, attended)?;
        if self.layer_norm {
            h = g.layer_norm(h, LAYER_NORM_EPS)?;
        }
        let hidden = l.ffn_in.apply(g, h)?;
        let hidden = g.relu(hidden)?;
        let ff = l.ffn_out.apply(g, hidden)?;
        h = g.add(h, ff)?;
        if self.layer_norm {
            h = g.layer_norm(h, LAYER_NORM_EPS)?;
        }
        Ok(h)
    }

    /// Projects an encoder output with head `view` (0 or 1) to `[B, D]`.
    pub fn project(&self, g: &mut Graph, h: NodeId, view: usize) -> Result<NodeId, EncoderError> {
        let head = &self.heads[view];
        let got = g.value(h).shape().to_vec();
        let expected = g.value(head.weight).shape()[0];
        if got.len() != 2 || got[1] != expected {
            return Err(EncoderError::Shape {
                fields: 1,
                dim: expected,
                got,
            });
        }
        Ok(head.apply(g, h)?)
    }

    /// `project(encode(x), view)`.
    pub fn represent(&self, g: &mut Graph, x: NodeId, view: usize) -> Result<NodeId, EncoderError> {
        let h = self.encode(g, x)?;
        self.project(g, h, view)
    }
}

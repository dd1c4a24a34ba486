//! Base CTR predictors (LR, FM, field-weighted FM, FM+DNN) and the
//! supervised log loss.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::EncodedDataset;
use crate::embedding::{read_f64s, read_u32, EmbeddingError, EmbeddingTable};
use crate::numcore::{sigmoid_f64, softplus, Graph, NodeId, NumError, Tensor};

pub const PREDICTOR_MAGIC: &[u8; 4] = b"CL4P";
pub const PREDICTOR_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid predictor config: {0}")]
    Config(String),
    #[error("field-pair weights must be symmetric with a zero diagonal")]
    AsymmetricFieldWeights,
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lr,
    Fm,
    Fwfm,
    FmDnn,
}

impl ModelKind {
    fn code(self) -> u32 {
        match self {
            ModelKind::Lr => 0,
            ModelKind::Fm => 1,
            ModelKind::Fwfm => 2,
            ModelKind::FmDnn => 3,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        Some(match c {
            0 => ModelKind::Lr,
            1 => ModelKind::Fm,
            2 => ModelKind::Fwfm,
            3 => ModelKind::FmDnn,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub kind: ModelKind,
    /// Widths of the DNN tower (FM+DNN only); must end in 1.
    pub dnn_widths: Vec<usize>,
    pub dropout: f64,
    /// Include the first-order `Σ w_i` term.
    pub use_linear: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Fm,
            dnn_widths: vec![400, 400, 400, 1],
            dropout: 0.5,
            use_linear: true,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.kind == ModelKind::FmDnn {
            if self.dnn_widths.is_empty() || self.dnn_widths.contains(&0) {
                return Err(ModelError::Config("dnn_widths must be non-empty and positive".into()));
            }
            if *self.dnn_widths.last().unwrap() != 1 {
                return Err(ModelError::Config("dnn_widths must end in 1".into()));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// One affine layer `x · W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    /// Glorot-normal weights, zero bias.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        Self {
            weight: Tensor::from_fn(&[fan_in, fan_out], || normal.sample(rng)),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&self, g: &mut Graph) -> BoundDense {
        BoundDense {
            weight: g.param(self.weight.clone()),
            bias: g.param(self.bias.clone()),
        }
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundDense {
    pub weight: NodeId,
    pub bias: NodeId,
}

impl BoundDense {
    pub fn apply(&self, g: &mut Graph, x: NodeId) -> Result<NodeId, NumError> {
        g.linear(x, self.weight, self.bias)
    }
}

/// Multi-layer perceptron; ReLU (and dropout in train mode) after every
/// layer except the last unless `relu_last` is set.
pub fn mlp<R: Rng>(
    g: &mut Graph,
    x: NodeId,
    layers: &[BoundDense],
    dropout: f64,
    train: bool,
    relu_last: bool,
    rng: &mut R,
) -> Result<NodeId, NumError> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        h = layer.apply(g, h)?;
        if i + 1 < layers.len() || relu_last {
            h = g.relu(h)?;
            h = g.dropout(h, dropout, train, rng)?;
        }
    }
    Ok(h)
}

/// FM second-order term of `e: [B, F, D]` via the square-of-sum identity; `[B]`.
pub fn fm_interaction(g: &mut Graph, e: NodeId) -> Result<NodeId, NumError> {
    let sum_f = g.sum_axis(e, 1)?;
    let sq_of_sum = g.square(sum_f)?;
    let sq = g.square(e)?;
    let sum_of_sq = g.sum_axis(sq, 1)?;
    let diff = g.sub(sq_of_sum, sum_of_sq)?;
    let per_instance = g.sum_axis(diff, 1)?;
    g.scale(per_instance, 0.5)
}

/// `Σ_{i<j} r_ij ⟨e_i, e_j⟩` for `e: [B, F, D]` and symmetric `r: [F, F]`; `[B]`.
pub fn fwfm_interaction(g: &mut Graph, e: NodeId, r: NodeId) -> Result<NodeId, NumError> {
    let f = g.value(r).shape()[0];
    // the diagonal never contributes and never receives gradient
    let off_diag = Tensor::from_fn(&[f, f], {
        let mut k = 0;
        move || {
            let v = if k / f == k % f { 0.0 } else { 1.0 };
            k += 1;
            v
        }
    });
    let r = g.mask_mul(r, off_diag)?;
    let et = g.transpose(e)?;
    let gram = g.matmul(e, et)?;
    let weighted = g.mul_broadcast(gram, r)?;
    let rows = g.sum_axis(weighted, 2)?;
    let total = g.sum_axis(rows, 1)?;
    g.scale(total, 0.5)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorParams {
    pub bias: Tensor,
    /// First-order weights, `[M, 1]`.
    pub linear: Tensor,
    /// Field-pair weights, `[F, F]` (FwFM only).
    pub field_pair: Option<Tensor>,
    pub dnn: Vec<Dense>,
}

/// A base CTR model over an embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    pub config: PredictorConfig,
    pub params: PredictorParams,
}

#[derive(Clone, Debug)]
pub struct BoundPredictor {
    pub bias: NodeId,
    pub linear: NodeId,
    pub field_pair: Option<NodeId>,
    pub dnn: Vec<BoundDense>,
}

impl Predictor {
    pub fn init(
        config: PredictorConfig,
        num_features: usize,
        num_fields: usize,
        dim: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field_pair = (config.kind == ModelKind::Fwfm).then(|| {
            let mut r = Tensor::ones(&[num_fields, num_fields]);
            for f in 0..num_fields {
                r.data_mut()[f * num_fields + f] = 0.0;
            }
            r
        });
        let mut dnn = Vec::new();
        if config.kind == ModelKind::FmDnn {
            let mut fan_in = num_fields * dim;
            for &w in &config.dnn_widths {
                dnn.push(Dense::init(fan_in, w, &mut rng));
                fan_in = w;
            }
        }
        Ok(Self {
            config,
            params: PredictorParams {
                bias: Tensor::scalar(0.0),
                linear: Tensor::zeros(&[num_features, 1]),
                field_pair,
                dnn,
            },
        })
    }

    /// Parameters in graph registration order.
    pub fn params(&self) -> Vec<&Tensor> {
        let p = &self.params;
        let mut v = vec![&p.bias, &p.linear];
        v.extend(p.field_pair.as_ref());
        for d in &p.dnn {
            v.extend(d.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let p = &mut self.params;
        let mut v = vec![&mut p.bias, &mut p.linear];
        v.extend(p.field_pair.as_mut());
        for d in &mut p.dnn {
            v.extend(d.params_mut());
        }
        v
    }

    pub fn bind(&self, g: &mut Graph) -> BoundPredictor {
        let p = &self.params;
        BoundPredictor {
            bias: g.param(p.bias.clone()),
            linear: g.param(p.linear.clone()),
            field_pair: p.field_pair.as_ref().map(|r| g.param(r.clone())),
            dnn: p.dnn.iter().map(|d| d.bind(g)).collect(),
        }
    }
}

impl BoundPredictor {
    /// Logits `[B]` for embeddings `e: [B, F, D]` of the instances in `batch`.
    pub fn logits<R: Rng>(
        &self,
        g: &mut Graph,
        config: &PredictorConfig,
        e: NodeId,
        batch: &[&[u32]],
        train: bool,
        rng: &mut R,
    ) -> Result<NodeId, NumError> {
        let b = batch.len();
        let shape = g.value(e).shape().to_vec();
        let (f, d) = (shape[1], shape[2]);
        let mut logit = match config.kind {
            ModelKind::Lr => g.input(Tensor::zeros(&[b])),
            ModelKind::Fm => fm_interaction(g, e)?,
            ModelKind::Fwfm => {
                let r = self.field_pair.expect("fwfm binds field-pair weights");
                fwfm_interaction(g, e, r)?
            }
            ModelKind::FmDnn => {
                let fm = fm_interaction(g, e)?;
                let flat = g.reshape(e, &[b, f * d])?;
                let out = mlp(g, flat, &self.dnn, config.dropout, train, false, rng)?;
                let out = g.reshape(out, &[b])?;
                g.add(fm, out)?
            }
        };
        if config.use_linear || config.kind == ModelKind::Lr {
            let idx = batch.iter().flat_map(|inst| inst.iter().map(|&i| i as usize)).collect();
            let w = g.gather(self.linear, idx)?;
            let w = g.reshape(w, &[b, f])?;
            let lin = g.sum_axis(w, 1)?;
            logit = g.add(logit, lin)?;
        }
        g.add_broadcast(logit, self.bias)
    }
}

/// Inference model: embedding table plus base predictor. Holds no
/// self-supervised parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CtrModel {
    pub table: EmbeddingTable,
    pub predictor: Predictor,
}

impl CtrModel {
    /// Click probabilities for every instance, in eval mode.
    pub fn predict(&self, ds: &EncodedDataset) -> Result<Vec<f64>, ModelError> {
        Ok(self.predict_logits(ds)?.into_iter().map(predict_proba).collect())
    }

    pub fn predict_logits(&self, ds: &EncodedDataset) -> Result<Vec<f64>, ModelError> {
        const CHUNK: usize = 4096;
        let mut out = Vec::with_capacity(ds.len());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut start = 0;
        while start < ds.len() {
            let end = (start + CHUNK).min(ds.len());
            let batch: Vec<&[u32]> = (start..end).map(|i| ds.instance(i)).collect();
            let mut g = Graph::new();
            let table = g.input(self.table.weight().clone());
            let bound = self.predictor.bind(&mut g);
            let e = self.table.lookup_batch(&mut g, table, &batch)?;
            let z = bound.logits(&mut g, &self.predictor.config, e, &batch, false, &mut rng)?;
            out.extend_from_slice(g.value(z).data());
            start = end;
        }
        Ok(out)
    }

    /// Writes the `CL4E` section followed by the `CL4P` section.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        self.table.write_to(&mut w)?;
        let cfg = &self.predictor.config;
        let p = &self.predictor.params;
        w.write_all(PREDICTOR_MAGIC)?;
        w.write_all(&PREDICTOR_VERSION.to_le_bytes())?;
        w.write_all(&cfg.kind.code().to_le_bytes())?;
        w.write_all(&[u8::from(cfg.use_linear)])?;
        w.write_all(&cfg.dropout.to_le_bytes())?;
        w.write_all(&(cfg.dnn_widths.len() as u32).to_le_bytes())?;
        for &width in &cfg.dnn_widths {
            w.write_all(&(width as u32).to_le_bytes())?;
        }
        let mut tensors: Vec<&Tensor> = vec![&p.bias, &p.linear];
        w.write_all(&[u8::from(p.field_pair.is_some())])?;
        tensors.extend(p.field_pair.as_ref());
        for d in &p.dnn {
            tensors.extend(d.params());
        }
        for t in tensors {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ModelError> {
        let table = EmbeddingTable::read_from(&mut r)?;
        let bad = |m: &str| ModelError::Config(format!("checkpoint: {m}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PREDICTOR_MAGIC {
            return Err(bad("missing CL4P section"));
        }
        if read_u32(&mut r)? != PREDICTOR_VERSION {
            return Err(bad("unsupported CL4P version"));
        }
        let kind = ModelKind::from_code(read_u32(&mut r)?).ok_or_else(|| bad("unknown model kind"))?;
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)?;
        let use_linear = byte[0] != 0;
        let dropout = read_f64s(&mut r, 1)?[0];
        let nw = read_u32(&mut r)? as usize;
        let mut dnn_widths = Vec::with_capacity(nw);
        for _ in 0..nw {
            dnn_widths.push(read_u32(&mut r)? as usize);
        }
        let config = PredictorConfig { kind, dnn_widths, dropout, use_linear };
        let (m, f, d) = (table.num_features(), table.num_fields(), table.dim());
        let mut predictor = Predictor::init(config, m, f, d, 0)?;
        r.read_exact(&mut byte)?;
        if (byte[0] != 0) != predictor.params.field_pair.is_some() {
            return Err(bad("field-pair section does not match model kind"));
        }
        for t in predictor.params_mut() {
            let data = read_f64s(&mut r, t.len())?;
            t.data_mut().copy_from_slice(&data);
        }
        Ok(Self { table, predictor })
    }
}

fn single_instance(e: &Tensor) -> Result<(Graph, NodeId), ModelError> {
    if e.rank() != 2 {
        return Err(ModelError::Config(format!("E must be F x D, got {:?}", e.shape())));
    }
    let (f, d) = (e.shape()[0], e.shape()[1]);
    let mut g = Graph::new();
    let node = g.input(e.clone().reshaped(&[1, f, d])?);
    Ok((g, node))
}

/// FM logit of one `F × D` embedding matrix.
pub fn fm_logit(e: &Tensor, linear: &[f64], bias: f64) -> Result<f64, ModelError> {
    let (mut g, node) = single_instance(e)?;
    let inter = fm_interaction(&mut g, node)?;
    Ok(bias + linear.iter().sum::<f64>() + g.value(inter).item()?)
}

/// Field-weighted FM logit; `r` must be symmetric `F × F`.
pub fn fwfm_logit(e: &Tensor, r: &Tensor, linear: &[f64], bias: f64) -> Result<f64, ModelError> {
    let f = e.shape()[0];
    if r.shape() != [f, f] {
        return Err(ModelError::Config(format!("r must be {f} x {f}")));
    }
    for i in 0..f {
        for j in 0..f {
            if r.data()[i * f + j] != r.data()[j * f + i] {
                return Err(ModelError::AsymmetricFieldWeights);
            }
        }
    }
    let (mut g, node) = single_instance(e)?;
    let rn = g.input(r.clone());
    let inter = fwfm_interaction(&mut g, node, rn)?;
    Ok(bias + linear.iter().sum::<f64>() + g.value(inter).item()?)
}

/// MLP logit of a flattened embedding matrix.
pub fn dnn_logit<R: Rng>(
    e: &Tensor,
    layers: &[Dense],
    dropout: f64,
    train: bool,
    rng: &mut R,
) -> Result<f64, ModelError> {
    if layers.last().map(Dense::out_dim) != Some(1) {
        return Err(ModelError::Config("last layer must have width 1".into()));
    }
    let mut g = Graph::new();
    let x = g.input(e.clone().reshaped(&[1, e.len()])?);
    let bound: Vec<BoundDense> = layers.iter().map(|l| l.bind(&mut g)).collect();
    let out = mlp(&mut g, x, &bound, dropout, train, false, rng)?;
    Ok(g.value(out).item()?)
}

pub fn predict_proba(logit: f64) -> f64 {
    sigmoid_f64(logit)
}

/// Mean binary cross entropy computed from logits.
pub fn bce_loss(logits: &[f64], labels: &[u8]) -> f64 {
    let n = logits.len().max(1) as f64;
    logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| softplus(z) - f64::from(y) * z)
        .sum::<f64>()
        / n
}

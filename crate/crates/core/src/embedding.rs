//! The feature embedding table `M × D` and its field partition.

use std::io::{Read, Write};
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numcore::{Graph, NodeId, NumError, Tensor};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"CL4E";
pub const EMBEDDING_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("field ranges must partition [0, M) in order")]
    BadRanges,
    #[error("embedding dimension must be >= 1")]
    ZeroDim,
    #[error("field {field}: index {index} outside {range:?}")]
    OutOfField {
        field: usize,
        index: usize,
        range: Range<usize>,
    },
    #[error("instance has {found} indices, table has {expected} fields")]
    Arity { expected: usize, found: usize },
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitScheme {
    Normal { std: f64 },
    Zeros,
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::Normal { std: 0.01 }
    }
}

/// Samples an `m × d` matrix.
pub fn init_matrix(m: usize, d: usize, scheme: InitScheme, seed: u64) -> Tensor {
    match scheme {
        InitScheme::Zeros => Tensor::zeros(&[m, d]),
        InitScheme::Normal { std } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, std).expect("finite std");
            Tensor::from_fn(&[m, d], || normal.sample(&mut rng))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    weight: Tensor,
    field_ranges: Vec<Range<usize>>,
}

impl EmbeddingTable {
    pub fn new(weight: Tensor, field_ranges: Vec<Range<usize>>) -> Result<Self, EmbeddingError> {
        if weight.rank() != 2 {
            return Err(EmbeddingError::Format(format!("weight must be M x D, got {:?}", weight.shape())));
        }
        if weight.shape()[1] == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        let mut next = 0;
        for r in &field_ranges {
            if r.start != next || r.end <= r.start {
                return Err(EmbeddingError::BadRanges);
            }
            next = r.end;
        }
        if next != weight.shape()[0] {
            return Err(EmbeddingError::BadRanges);
        }
        Ok(Self { weight, field_ranges })
    }

    pub fn init(
        field_ranges: Vec<Range<usize>>,
        dim: usize,
        scheme: InitScheme,
        seed: u64,
    ) -> Result<Self, EmbeddingError> {
        let m = field_ranges.last().map_or(0, |r| r.end);
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        Self::new(init_matrix(m, dim, scheme, seed), field_ranges)
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Tensor {
        &mut self.weight
    }

    pub fn num_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn num_fields(&self) -> usize {
        self.field_ranges.len()
    }

    pub fn field_ranges(&self) -> &[Range<usize>] {
        &self.field_ranges
    }

    pub fn row(&self, index: usize) -> &[f64] {
        self.weight.row(index)
    }

    fn check_instance(&self, instance: &[u32]) -> Result<(), EmbeddingError> {
        if instance.len() != self.field_ranges.len() {
            return Err(EmbeddingError::Arity {
                expected: self.field_ranges.len(),
                found: instance.len(),
            });
        }
        for (f, (&i, r)) in instance.iter().zip(&self.field_ranges).enumerate() {
            if !r.contains(&(i as usize)) {
                return Err(EmbeddingError::OutOfField {
                    field: f,
                    index: i as usize,
                    range: r.clone(),
                });
            }
        }
        Ok(())
    }

    /// The `F × D` embedding matrix of one instance.
    pub fn lookup(&self, instance: &[u32]) -> Result<Tensor, EmbeddingError> {
        self.check_instance(instance)?;
        let d = self.dim();
        let mut data = Vec::with_capacity(instance.len() * d);
        for &i in instance {
            data.extend_from_slice(self.row(i as usize));
        }
        Ok(Tensor::new(vec![instance.len(), d], data)?)
    }

    /// Differentiable batch lookup against `table`, a graph node holding this
    /// table's weight. Produces `[B, F, D]`.
    pub fn lookup_batch(
        &self,
        g: &mut Graph,
        table: NodeId,
        batch: &[&[u32]],
    ) -> Result<NodeId, EmbeddingError> {
        let mut flat = Vec::with_capacity(batch.len() * self.num_fields());
        for inst in batch {
            self.check_instance(inst)?;
            flat.extend(inst.iter().map(|&i| i as usize));
        }
        let rows = g.gather(table, flat)?;
        Ok(g.reshape(rows, &[batch.len(), self.num_fields(), self.dim()])?)
    }

    /// Writes the `CL4E` section.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), EmbeddingError> {
        w.write_all(EMBEDDING_MAGIC)?;
        for v in [
            EMBEDDING_VERSION,
            self.num_features() as u32,
            self.num_fields() as u32,
            self.dim() as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for r in &self.field_ranges {
            w.write_all(&(r.start as u32).to_le_bytes())?;
            w.write_all(&(r.end as u32).to_le_bytes())?;
        }
        for v in self.weight.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, EmbeddingError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != EMBEDDING_MAGIC {
            return Err(EmbeddingError::Format("missing CL4E section".into()));
        }
        let version = read_u32(&mut r)?;
        if version != EMBEDDING_VERSION {
            return Err(EmbeddingError::Format(format!("unsupported version {version}")));
        }
        let m = read_u32(&mut r)? as usize;
        let f = read_u32(&mut r)? as usize;
        let d = read_u32(&mut r)? as usize;
        let mut ranges = Vec::with_capacity(f);
        for _ in 0..f {
            let s = read_u32(&mut r)? as usize;
            let e = read_u32(&mut r)? as usize;
            ranges.push(s..e);
        }
        let data = read_f64s(&mut r, m * d)?;
        Self::new(Tensor::new(vec![m, d], data)?, ranges)
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut raw = vec![0u8; n * 8];
    r.read_exact(&mut raw)?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

//! Embedding perturbations producing two masked views of an instance.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numcore::{Graph, NodeId, NumError, Tensor};
use crate::seed;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AugmentError {
    #[error("mask proportion must lie in [0, 1], got {0}")]
    Proportion(f64),
    #[error("expected an F x D matrix, got shape {0:?}")]
    Shape(Vec<usize>),
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMethod {
    Random,
    Feature,
    Dimension,
}

/// Perturbation operator and its mask proportion (fraction zeroed).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSpec {
    pub method: MaskMethod,
    pub p: f64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            method: MaskMethod::Random,
            p: 0.4,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if (0.0..=1.0).contains(&self.p) {
            Ok(())
        } else {
            Err(AugmentError::Proportion(self.p))
        }
    }
}

/// Number of rows zeroed by the feature mask, `⌊p·F⌋`.
pub fn feature_mask_len(p: f64, f: usize) -> usize {
    // tolerate representation error such as 0.7 * 10 = 7.000000000000001
    ((p * f as f64) + 1e-9).floor().min(f as f64) as usize
}

/// A 0/1 mask of shape `[f, d]`.
pub fn sample_mask<R: Rng + ?Sized>(method: MaskMethod, p: f64, f: usize, d: usize, rng: &mut R) -> Vec<f64> {
    let mut m = vec![1.0; f * d];
    match method {
        MaskMethod::Random => {
            for v in &mut m {
                if rng.gen::<f64>() < p {
                    *v = 0.0;
                }
            }
        }
        MaskMethod::Feature => {
            for row in sample(rng, f, feature_mask_len(p, f)) {
                m[row * d..(row + 1) * d].fill(0.0);
            }
        }
        MaskMethod::Dimension => {
            let cols: Vec<bool> = (0..d).map(|_| rng.gen::<f64>() < p).collect();
            for row in m.chunks_mut(d) {
                for (v, &zero) in row.iter_mut().zip(&cols) {
                    if zero {
                        *v = 0.0;
                    }
                }
            }
        }
    }
    m
}

fn apply<R: Rng + ?Sized>(e: &Tensor, method: MaskMethod, p: f64, rng: &mut R) -> Result<Tensor, AugmentError> {
    if e.rank() != 2 {
        return Err(AugmentError::Shape(e.shape().to_vec()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(AugmentError::Proportion(p));
    }
    let (f, d) = (e.shape()[0], e.shape()[1]);
    let mask = sample_mask(method, p, f, d, rng);
    let data = e.data().iter().zip(&mask).map(|(v, m)| if *m == 0.0 { 0.0 } else { *v }).collect();
    Ok(Tensor::new(e.shape().to_vec(), data)?)
}

/// Zeroes each entry independently with probability `p`.
pub fn random_mask<R: Rng + ?Sized>(e: &Tensor, p: f64, rng: &mut R) -> Result<Tensor, AugmentError> {
    apply(e, MaskMethod::Random, p, rng)
}

/// Zeroes a uniformly chosen set of exactly `⌊p·F⌋` rows.
pub fn feature_mask<R: Rng + ?Sized>(e: &Tensor, p: f64, rng: &mut R) -> Result<Tensor, AugmentError> {
    apply(e, MaskMethod::Feature, p, rng)
}

/// Zeroes the same randomly chosen columns in every row.
pub fn dimension_mask<R: Rng + ?Sized>(e: &Tensor, p: f64, rng: &mut R) -> Result<Tensor, AugmentError> {
    apply(e, MaskMethod::Dimension, p, rng)
}

/// Two independently masked views of `e`.
pub fn make_views<R: Rng + ?Sized>(e: &Tensor, spec: &MaskSpec, rng: &mut R) -> Result<(Tensor, Tensor), AugmentError> {
    Ok((apply(e, spec.method, spec.p, rng)?, apply(e, spec.method, spec.p, rng)?))
}

/// Masks for both views of a `[B, F, D]` batch. Instance `ids[b]` draws from
/// its own stream keyed by `(seed, epoch, id)`, so the masks do not depend on
/// batch composition.
pub fn batch_masks(spec: &MaskSpec, shape: &[usize], seed: u64, epoch: u64, ids: &[u64]) -> (Tensor, Tensor) {
    let (f, d) = (shape[1], shape[2]);
    let mut m1 = Vec::with_capacity(ids.len() * f * d);
    let mut m2 = Vec::with_capacity(ids.len() * f * d);
    for &id in ids {
        let mut rng = seed::stream(seed, "mask", epoch, id);
        m1.extend(sample_mask(spec.method, spec.p, f, d, &mut rng));
        m2.extend(sample_mask(spec.method, spec.p, f, d, &mut rng));
    }
    let shape = shape.to_vec();
    (
        Tensor::new(shape.clone(), m1).expect("mask size"),
        Tensor::new(shape, m2).expect("mask size"),
    )
}

/// Differentiable views of the batch embeddings `e: [B, F, D]`.
pub fn batch_views(
    g: &mut Graph,
    e: NodeId,
    spec: &MaskSpec,
    seed: u64,
    epoch: u64,
    ids: &[u64],
) -> Result<(NodeId, NodeId), AugmentError> {
    spec.validate()?;
    let shape = g.value(e).shape().to_vec();
    if shape.len() != 3 || shape[0] != ids.len() {
        return Err(AugmentError::Shape(shape));
    }
    let (m1, m2) = batch_masks(spec, &shape, seed, epoch, ids);
    Ok((g.mask_mul(e, m1)?, g.mask_mul(e, m2)?))
}

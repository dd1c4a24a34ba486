use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, EncodedDataset, Vocabulary};
use crate::numcore::sigmoid_f64;

/// Synthetic long-tail CTR task.
///
/// Each field draws its token by Zipf rank (`P(rank k) ∝ k^-s`). Every token
/// carries a hidden latent vector; the label logit is the sum over field
/// pairs of scaled latent inner products plus Gaussian noise, so the task is
/// exactly representable by a factorization machine and a rare token is
/// only learnable from its few occurrences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub fields: usize,
    pub features_per_field: usize,
    pub zipf_exponent: f64,
    pub instances: usize,
    /// Seed for the hidden pairwise weights.
    pub weight_seed: u64,
    /// Seed for instance sampling.
    pub sample_seed: u64,
    /// Standard deviation of the logit noise; `inf` gives coin-flip labels.
    pub noise: f64,
    /// Standard deviation of each pairwise interaction term.
    pub weight_scale: f64,
    pub latent_dim: usize,
    pub bias: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            fields: 6,
            features_per_field: 500,
            zipf_exponent: 1.2,
            instances: 200_000,
            weight_seed: 7,
            sample_seed: 11,
            noise: 0.5,
            weight_scale: 0.6,
            latent_dim: 4,
            bias: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let mut problems = Vec::new();
        if self.fields < 2 {
            problems.push("fields must be >= 2".to_string());
        }
        if self.features_per_field < 2 {
            problems.push("features_per_field must be >= 2".to_string());
        }
        if self.instances < 1 {
            problems.push("instances must be >= 1".to_string());
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            problems.push("zipf_exponent must be finite and >= 0".to_string());
        }
        if !(self.noise >= 0.0) {
            problems.push("noise must be >= 0".to_string());
        }
        if !(self.weight_scale >= 0.0 && self.weight_scale.is_finite()) {
            problems.push("weight_scale must be finite and >= 0".to_string());
        }
        if self.latent_dim < 1 {
            problems.push("latent_dim must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(DataError::Invalid(problems.join("; ")))
        }
    }
}

/// Zipf rank weights `k^-s` for ranks `1..=n`.
pub(crate) fn zipf_weights(n: usize, s: f64) -> Vec<f64> {
    (1..=n).map(|k| (k as f64).powf(-s)).collect()
}

/// Generates the dataset and its vocabulary (counts filled from the data).
pub fn synth_generate(cfg: &SynthConfig) -> Result<(EncodedDataset, Vocabulary), DataError> {
    cfg.validate()?;
    let (f, n) = (cfg.fields, cfg.features_per_field);
    let mut vocab = Vocabulary::synthetic(&vec![n; f]);
    let starts: Vec<usize> = vocab.fields().iter().map(|fv| fv.start + 1).collect();

    let mut wrng = ChaCha8Rng::seed_from_u64(cfg.weight_seed);
    let k = cfg.latent_dim;
    let latent: Vec<f64> = (0..f * n * k).map(|_| wrng.sample(StandardNormal)).collect();
    let pair_scale = cfg.weight_scale / (k as f64).sqrt();

    let zipf = WeightedIndex::new(zipf_weights(n, cfg.zipf_exponent))
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sample_seed);
    let mut indices = Vec::with_capacity(cfg.instances * f);
    let mut labels = Vec::with_capacity(cfg.instances);
    let mut tokens = vec![0usize; f];
    for _ in 0..cfg.instances {
        for t in tokens.iter_mut() {
            *t = zipf.sample(&mut rng);
        }
        let mut score = cfg.bias;
        for a in 0..f {
            let va = &latent[(a * n + tokens[a]) * k..][..k];
            for b in a + 1..f {
                let vb = &latent[(b * n + tokens[b]) * k..][..k];
                score += pair_scale * va.iter().zip(vb).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        let eps: f64 = rng.sample(StandardNormal);
        let logit = if cfg.noise == 0.0 { score } else { score + cfg.noise * eps };
        let p = sigmoid_f64(logit);
        labels.push(u8::from(rng.gen::<f64>() < p));
        indices.extend(tokens.iter().zip(&starts).map(|(&t, &s)| (s + t) as u32));
    }
    let ds = EncodedDataset::new(f, indices, labels)?;
    vocab.set_counts(&ds.feature_counts(vocab.num_features()))?;
    Ok((ds, vocab))
}

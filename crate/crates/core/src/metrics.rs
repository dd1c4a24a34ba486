//! AUC, log loss, and log loss bucketed by feature frequency.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::EncodedDataset;
use crate::models::{CtrModel, ModelError};

/// Probability clamp applied before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-15;

pub const DEFAULT_BOUNDARIES: [f64; 6] = [1.0, 5.0, 10.0, 20.0, 50.0, f64::INFINITY];

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("AUC undefined: labels contain a single class")]
    SingleClass,
    #[error("length mismatch: {0} scores vs {1} labels")]
    Length(usize, usize),
    #[error("bucket boundaries must be strictly increasing with at least two entries")]
    Boundaries,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Mann–Whitney AUC with tied scores credited one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::Length(scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; a tie group shares its average rank
        let avg = (i + j) as f64 / 2.0 + 1.0;
        let group_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += avg * group_pos as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean binary cross entropy with probabilities clamped to `[1e-15, 1 − 1e-15]`.
pub fn logloss(probas: &[f64], labels: &[u8]) -> f64 {
    let total: f64 = probas
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / probas.len().max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// `None` when the labels contain a single class.
    pub auc: Option<f64>,
    pub logloss: f64,
    pub count: usize,
}

pub fn evaluate_probas(probas: &[f64], labels: &[u8]) -> Result<EvalResult, MetricsError> {
    let auc = match auc(probas, labels) {
        Ok(a) => Some(a),
        Err(MetricsError::SingleClass) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalResult {
        auc,
        logloss: logloss(probas, labels),
        count: labels.len(),
    })
}

pub fn evaluate(model: &CtrModel, ds: &EncodedDataset) -> Result<EvalResult, MetricsError> {
    evaluate_probas(&model.predict(ds)?, ds.labels())
}

/// Instance-level summary of its features' training frequencies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketStatistic {
    #[default]
    Min,
    Mean,
}

pub fn instance_frequencies(ds: &EncodedDataset, counts: &[u64], stat: BucketStatistic) -> Vec<f64> {
    (0..ds.len())
        .map(|i| {
            let freqs = ds.instance(i).iter().map(|&j| counts.get(j as usize).copied().unwrap_or(0));
            match stat {
                BucketStatistic::Min => freqs.min().unwrap_or(0) as f64,
                BucketStatistic::Mean => freqs.sum::<u64>() as f64 / ds.num_fields() as f64,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    /// `None` for an empty bucket.
    pub logloss: Option<f64>,
    /// Baseline log loss minus model log loss.
    pub delta_logloss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBucketReport {
    pub statistic: BucketStatistic,
    pub buckets: Vec<Bucket>,
}

impl FrequencyBucketReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket_low,bucket_high,count,logloss,delta_logloss\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for b in &self.buckets {
            let _ = writeln!(out, "{},{},{},{},{}", b.low, b.high, b.count, opt(b.logloss), opt(b.delta_logloss));
        }
        out
    }
}

/// Bucket `k` covers `[boundaries[k], boundaries[k + 1])`. Values below the
/// first boundary join the first bucket and values at or above the last join
/// the last, so the buckets partition every instance.
pub fn bucket_of(value: f64, boundaries: &[f64]) -> usize {
    let last = boundaries.len() - 2;
    boundaries[1..=last].iter().take_while(|&&b| value >= b).count()
}

/// Per-bucket log loss of `probas`, with `baseline − model` deltas when a
/// baseline is given.
pub fn frequency_bucket_logloss(
    probas: &[f64],
    baseline: Option<&[f64]>,
    labels: &[u8],
    frequencies: &[f64],
    boundaries: &[f64],
    statistic: BucketStatistic,
) -> Result<FrequencyBucketReport, MetricsError> {
    if boundaries.len() < 2 || boundaries.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(MetricsError::Boundaries);
    }
    if probas.len() != labels.len() || frequencies.len() != labels.len() {
        return Err(MetricsError::Length(probas.len(), labels.len()));
    }
    if let Some(b) = baseline {
        if b.len() != labels.len() {
            return Err(MetricsError::Length(b.len(), labels.len()));
        }
    }
    let k = boundaries.len() - 1;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &v) in frequencies.iter().enumerate() {
        members[bucket_of(v, boundaries)].push(i);
    }
    let buckets = members
        .iter()
        .enumerate()
        .map(|(b, idx)| {
            let pick = |src: &[f64]| idx.iter().map(|&i| src[i]).collect::<Vec<_>>();
            let ys: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            let ll = (!idx.is_empty()).then(|| logloss(&pick(probas), &ys));
            let delta = match (baseline, ll) {
                (Some(base), Some(ll)) => Some(logloss(&pick(base), &ys) - ll),
                _ => None,
            };
            Bucket {
                low: boundaries[b],
                high: boundaries[b + 1],
                count: idx.len(),
                logloss: ll,
                delta_logloss: delta,
            }
        })
        .collect();
    Ok(FrequencyBucketReport { statistic, buckets })
}

/// Buckets `test` by the training frequencies in `counts` and scores `model`
/// (and optionally `baseline`) per bucket.
pub fn frequency_bucket_report(
    model: &CtrModel,
    baseline: Option<&CtrModel>,
    test: &EncodedDataset,
    counts: &[u64],
    boundaries: &[f64],
    statistic: BucketStatistic,
) -> Result<FrequencyBucketReport, MetricsError> {
    let probas = model.predict(test)?;
    let base = baseline.map(|b| b.predict(test)).transpose()?;
    let freqs = instance_frequencies(test, counts, statistic);
    frequency_bucket_logloss(&probas, base.as_deref(), test.labels(), &freqs, boundaries, statistic)
}

/// Boundaries splitting `values` into `k` groups of roughly equal size,
/// from `-inf` to `inf`. Duplicate cut points are merged.
pub fn quantile_boundaries(values: &[f64], k: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = vec![f64::NEG_INFINITY];
    for q in 1..k {
        let cut = sorted[(q * sorted.len()) / k];
        if cut > *out.last().unwrap() {
            out.push(cut);
        }
    }
    out.push(f64::INFINITY);
    out
}

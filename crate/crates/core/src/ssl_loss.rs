//! Self-supervised signals: the view-agreement contrastive loss, feature
//! alignment within fields, field uniformity across fields, and their
//! weighted combination with the supervised loss.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::numcore::{Graph, NodeId, NumError, Tensor, NORM_FLOOR};

/// Vocabularies up to this size may use the exact full-vocabulary mode.
pub const FULL_VOCAB_LIMIT: usize = 20_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SslError {
    #[error("loss weights must be nonnegative (alpha = {alpha}, beta = {beta})")]
    NegativeWeight { alpha: f64, beta: f64 },
    #[error("full-vocabulary mode needs M <= {FULL_VOCAB_LIMIT}, got {0}")]
    VocabularyTooLarge(usize),
    #[error("index {index} of field {field} lies outside {range:?}")]
    OutOfField {
        field: usize,
        index: u32,
        range: Range<usize>,
    },
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Distinct feature indices per field for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchFieldIndex {
    fields: Vec<Vec<u32>>,
    batch_size: usize,
}

impl BatchFieldIndex {
    /// Collects the distinct indices of each field (sorted ascending).
    pub fn from_batch(batch: &[&[u32]], num_fields: usize) -> Self {
        let mut fields = vec![Vec::new(); num_fields];
        for inst in batch {
            for (f, &i) in inst.iter().enumerate() {
                fields[f].push(i);
            }
        }
        for f in &mut fields {
            f.sort_unstable();
            f.dedup();
        }
        Self {
            fields,
            batch_size: batch.len(),
        }
    }

    /// Every feature of the vocabulary.
    pub fn full(field_ranges: &[Range<usize>]) -> Result<Self, SslError> {
        let m = field_ranges.last().map_or(0, |r| r.end);
        if m > FULL_VOCAB_LIMIT {
            return Err(SslError::VocabularyTooLarge(m));
        }
        Ok(Self {
            fields: field_ranges.iter().map(|r| (r.start as u32..r.end as u32).collect()).collect(),
            batch_size: 0,
        })
    }

    pub fn fields(&self) -> &[Vec<u32>] {
        &self.fields
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn num_features(&self) -> usize {
        self.fields.iter().map(Vec::len).sum()
    }

    pub fn validate(&self, field_ranges: &[Range<usize>]) -> Result<(), SslError> {
        for (f, (idx, r)) in self.fields.iter().zip(field_ranges).enumerate() {
            if let Some(&bad) = idx.iter().find(|&&i| !r.contains(&(i as usize))) {
                return Err(SslError::OutOfField {
                    field: f,
                    index: bad,
                    range: r.clone(),
                });
            }
        }
        Ok(())
    }

    /// Ordered same-field pairs `Σ_f n_f (n_f − 1)`.
    pub fn alignment_pairs(&self) -> usize {
        self.fields.iter().map(|f| f.len() * f.len().saturating_sub(1)).sum()
    }

    /// Ordered cross-field pairs `n² − Σ_f n_f²`.
    pub fn uniformity_pairs(&self) -> usize {
        let n = self.num_features();
        n * n - self.fields.iter().map(|f| f.len() * f.len()).sum::<usize>()
    }

    fn flat(&self) -> Vec<usize> {
        self.fields.iter().flatten().map(|&i| i as usize).collect()
    }

    fn lengths(&self) -> Vec<usize> {
        self.fields.iter().map(Vec::len).collect()
    }
}

/// `(1/B) Σ_i ‖h1_i − h2_i‖²` for `[B, D]` inputs.
pub fn contrastive_loss(g: &mut Graph, h1: NodeId, h2: NodeId) -> Result<NodeId, SslError> {
    let diff = g.sub(h1, h2)?;
    let sq = g.square(diff)?;
    let total = g.sum(sq)?;
    let b = g.value(h1).shape()[0].max(1);
    Ok(g.scale(total, 1.0 / b as f64)?)
}

/// Sum of squared distances over ordered same-field pairs of indexed rows of
/// `table`, divided by the pair count when `normalize` is set.
pub fn feature_alignment(
    g: &mut Graph,
    table: NodeId,
    index: &BatchFieldIndex,
    normalize: bool,
) -> Result<NodeId, SslError> {
    let pairs = index.alignment_pairs();
    if pairs == 0 {
        return Ok(g.input(Tensor::scalar(0.0)));
    }
    let d = g.value(table).shape()[1];
    let rows = g.gather(table, index.flat())?;
    // Σ_{i≠j} ‖e_i − e_j‖² = 2n Σ‖e_i‖² − 2‖Σ e_i‖² per field
    let weights: Vec<f64> = index
        .fields
        .iter()
        .flat_map(|f| std::iter::repeat(2.0 * f.len() as f64).take(f.len() * d))
        .collect();
    let sq = g.square(rows)?;
    let weighted = g.mask_mul(sq, Tensor::new(vec![index.num_features(), d], weights)?)?;
    let self_term = g.sum(weighted)?;
    let sums = g.segment_sum(rows, index.lengths())?;
    let sums_sq = g.square(sums)?;
    let cross = g.sum(sums_sq)?;
    let cross = g.scale(cross, 2.0)?;
    let total = g.sub(self_term, cross)?;
    Ok(if normalize {
        g.scale(total, 1.0 / pairs as f64)?
    } else {
        total
    })
}

/// Sum of cosine similarities over ordered cross-field pairs of indexed rows
/// of `table`, divided by the pair count when `normalize` is set. Rows with
/// norm below the floor contribute zero.
pub fn field_uniformity(
    g: &mut Graph,
    table: NodeId,
    index: &BatchFieldIndex,
    normalize: bool,
) -> Result<NodeId, SslError> {
    let pairs = index.uniformity_pairs();
    if pairs == 0 {
        return Ok(g.input(Tensor::scalar(0.0)));
    }
    let rows = g.gather(table, index.flat())?;
    let unit = g.l2_normalize_rows(rows)?;
    // Σ_{f≠g} Σ u_i·u_j = ‖Σ_all u‖² − Σ_f ‖Σ_{i∈f} u_i‖²
    let all = g.sum_axis(unit, 0)?;
    let all_sq = g.square(all)?;
    let all_sq = g.sum(all_sq)?;
    let per_field = g.segment_sum(unit, index.lengths())?;
    let per_field_sq = g.square(per_field)?;
    let within = g.sum(per_field_sq)?;
    let total = g.sub(all_sq, within)?;
    Ok(if normalize {
        g.scale(total, 1.0 / pairs as f64)?
    } else {
        total
    })
}

fn eval_on_table(
    table: &Tensor,
    index: &BatchFieldIndex,
    normalize: bool,
    f: fn(&mut Graph, NodeId, &BatchFieldIndex, bool) -> Result<NodeId, SslError>,
) -> Result<f64, SslError> {
    let mut g = Graph::new();
    let t = g.input(table.clone());
    let out = f(&mut g, t, index, normalize)?;
    Ok(g.value(out).item()?)
}

/// [`feature_alignment`] evaluated on a plain table.
pub fn feature_alignment_value(table: &Tensor, index: &BatchFieldIndex, normalize: bool) -> Result<f64, SslError> {
    eval_on_table(table, index, normalize, feature_alignment)
}

/// [`field_uniformity`] evaluated on a plain table.
pub fn field_uniformity_value(table: &Tensor, index: &BatchFieldIndex, normalize: bool) -> Result<f64, SslError> {
    eval_on_table(table, index, normalize, field_uniformity)
}

/// The four loss terms and their weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_ctr: f64,
    pub l_cl: f64,
    pub l_a: f64,
    pub l_u: f64,
    pub l_total: f64,
    pub alpha: f64,
    pub beta: f64,
}

pub fn check_weights(alpha: f64, beta: f64) -> Result<(), SslError> {
    if alpha >= 0.0 && beta >= 0.0 {
        Ok(())
    } else {
        Err(SslError::NegativeWeight { alpha, beta })
    }
}

/// `L_ctr + α·L_cl + β·(L_a + L_u)`.
pub fn total_loss(l_ctr: f64, l_cl: f64, l_a: f64, l_u: f64, alpha: f64, beta: f64) -> Result<LossBundle, SslError> {
    check_weights(alpha, beta)?;
    Ok(LossBundle {
        l_ctr,
        l_cl,
        l_a,
        l_u,
        l_total: l_ctr + alpha * l_cl + beta * (l_a + l_u),
        alpha,
        beta,
    })
}

/// Geometry of the indexed embeddings: mean Euclidean distance between
/// distinct features of the same field and mean absolute cosine between
/// features of different fields.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RepresentationStats {
    pub intra_field_distance: f64,
    pub cross_field_abs_cos: f64,
}

impl RepresentationStats {
    pub fn measure(table: &Tensor, index: &BatchFieldIndex) -> Self {
        let d = table.shape()[1];
        let row = |i: u32| &table.data()[i as usize * d..(i as usize + 1) * d];
        let (mut dist, mut dist_n) = (0.0, 0usize);
        for f in &index.fields {
            for (a, &i) in f.iter().enumerate() {
                for &j in &f[a + 1..] {
                    dist += row(i).iter().zip(row(j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                    dist_n += 1;
                }
            }
        }
        let units: Vec<Vec<Vec<f64>>> = index
            .fields
            .iter()
            .map(|f| {
                f.iter()
                    .map(|&i| {
                        let r = row(i);
                        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if n < NORM_FLOOR {
                            vec![0.0; d]
                        } else {
                            r.iter().map(|v| v / n).collect()
                        }
                    })
                    .collect()
            })
            .collect();
        let (mut cos, mut cos_n) = (0.0, 0usize);
        for (a, fa) in units.iter().enumerate() {
            for fb in &units[a + 1..] {
                for u in fa {
                    for v in fb {
                        cos += u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>().abs();
                        cos_n += 1;
                    }
                }
            }
        }
        Self {
            intra_field_distance: if dist_n == 0 { 0.0 } else { dist / dist_n as f64 },
            cross_field_abs_cos: if cos_n == 0 { 0.0 } else { cos / cos_n as f64 },
        }
    }
}

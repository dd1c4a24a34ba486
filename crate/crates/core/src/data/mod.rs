//! Multi-field categorical data: vocabularies, encoding, frequency
//! statistics, splits, and a synthetic long-tail generator.

mod io;
mod synth;
mod vocab;

use std::collections::HashSet;
use std::io::Read;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use io::{read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use synth::{synth_generate, SynthConfig};
pub use vocab::{FieldVocab, Vocabulary, OOV_TOKEN};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("empty input")]
    Empty,
    #[error("line {line}: expected {expected} fields, found {found}")]
    MissingField {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("index {index} is outside the range of field {field}")]
    IndexOutOfField { field: usize, index: usize },
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Ordered field names plus the label column name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    fields: Vec<String>,
    label: String,
}

impl Schema {
    pub fn new(fields: Vec<String>, label: impl Into<String>) -> Result<Self, DataError> {
        let label = label.into();
        if fields.len() < 2 {
            return Err(DataError::Invalid(format!("need at least 2 fields, got {}", fields.len())));
        }
        let mut seen = HashSet::new();
        for f in &fields {
            if !seen.insert(f.as_str()) || *f == label {
                return Err(DataError::Invalid(format!("duplicate field name {f:?}")));
            }
        }
        Ok(Self { fields, label })
    }

    pub fn fields(&self) -> &[String] {
        &self.fields
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }
}

/// One raw record: a token per field and a binary label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Row {
    pub tokens: Vec<String>,
    pub label: u8,
}

/// Reads delimited text with a header row. Every column other than the
/// label is a field unless `fields` selects a subset.
pub fn read_delimited<R: Read>(
    reader: R,
    delimiter: u8,
    label: &str,
    fields: Option<&[String]>,
) -> Result<(Schema, Vec<Row>), DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Malformed { line: 1, reason: e.to_string() })?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let label_col = header
        .iter()
        .position(|h| h == label)
        .ok_or_else(|| DataError::Malformed { line: 1, reason: format!("no label column {label:?}") })?;
    let field_names: Vec<String> = match fields {
        Some(f) => f.to_vec(),
        None => header.iter().filter(|h| *h != label).cloned().collect(),
    };
    let cols = field_names
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::Malformed { line: 1, reason: format!("no column {name:?}") })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let schema = Schema::new(field_names, label)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| DataError::Malformed { line, reason: e.to_string() })?;
        if rec.len() != header.len() {
            return Err(DataError::Malformed {
                line,
                reason: format!("expected {} columns, found {}", header.len(), rec.len()),
            });
        }
        let label = match rec[label_col].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(DataError::Malformed { line, reason: format!("label {other:?} is not 0 or 1") })
            }
        };
        let tokens = cols.iter().map(|&c| rec[c].trim().to_string()).collect();
        rows.push(Row { tokens, label });
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    Ok((schema, rows))
}

/// Encoded instances: `F` global feature indices and a label each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedDataset {
    num_fields: usize,
    indices: Vec<u32>,
    labels: Vec<u8>,
}

impl EncodedDataset {
    pub fn new(num_fields: usize, indices: Vec<u32>, labels: Vec<u8>) -> Result<Self, DataError> {
        if num_fields == 0 || indices.len() != num_fields * labels.len() {
            return Err(DataError::Invalid(format!(
                "{} indices for {} instances of {} fields",
                indices.len(),
                labels.len(),
                num_fields
            )));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(DataError::Invalid("labels must be 0 or 1".into()));
        }
        Ok(Self { num_fields, indices, labels })
    }

    /// Encodes raw rows against a vocabulary.
    pub fn encode(rows: &[Row], vocab: &Vocabulary) -> Result<Self, DataError> {
        let mut indices = Vec::with_capacity(rows.len() * vocab.num_fields());
        for (i, row) in rows.iter().enumerate() {
            let enc = vocab.encode(row).map_err(|e| match e {
                DataError::MissingField { expected, found, .. } => DataError::MissingField { line: i + 1, expected, found },
                other => other,
            })?;
            indices.extend(enc);
        }
        Self::new(vocab.num_fields(), indices, rows.iter().map(|r| r.label).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_fields(&self) -> usize {
        self.num_fields
    }

    pub fn instance(&self, i: usize) -> &[u32] {
        &self.indices[i * self.num_fields..(i + 1) * self.num_fields]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn positive_rate(&self) -> f64 {
        self.labels.iter().map(|&y| y as f64).sum::<f64>() / self.len().max(1) as f64
    }

    /// Instances at the given positions, in that order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut indices = Vec::with_capacity(rows.len() * self.num_fields);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            indices.extend_from_slice(self.instance(r));
            labels.push(self.labels[r]);
        }
        Self { num_fields: self.num_fields, indices, labels }
    }

    /// Checks every index against its field's range.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), DataError> {
        if vocab.num_fields() != self.num_fields {
            return Err(DataError::Invalid(format!(
                "dataset has {} fields, vocabulary {}",
                self.num_fields,
                vocab.num_fields()
            )));
        }
        let ranges = vocab.field_ranges();
        for i in 0..self.len() {
            for (f, (&idx, r)) in self.instance(i).iter().zip(&ranges).enumerate() {
                if !r.contains(&(idx as usize)) {
                    return Err(DataError::IndexOutOfField { field: f, index: idx as usize });
                }
            }
        }
        Ok(())
    }

    /// Occurrence count of every global index in this dataset.
    pub fn feature_counts(&self, num_features: usize) -> Vec<u64> {
        let mut counts = vec![0u64; num_features];
        for &i in &self.indices {
            if let Some(c) = counts.get_mut(i as usize) {
                *c += 1;
            }
        }
        counts
    }
}

/// Sorted `(frequency, cumulative fraction of features)` points.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyCdf {
    pub points: Vec<(u64, f64)>,
}

impl FrequencyCdf {
    pub fn from_counts(counts: &[u64]) -> Self {
        let mut sorted = counts.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let mut points: Vec<(u64, f64)> = Vec::new();
        for (i, &c) in sorted.iter().enumerate() {
            let last_of_value = i + 1 == n || sorted[i + 1] != c;
            if last_of_value {
                let frac = if i + 1 == n { 1.0 } else { (i + 1) as f64 / n as f64 };
                points.push((c, frac));
            }
        }
        Self { points }
    }

    /// Fraction of features with count at most `threshold`.
    pub fn fraction_at_most(&self, threshold: u64) -> f64 {
        self.points
            .iter()
            .take_while(|(v, _)| *v <= threshold)
            .last()
            .map(|p| p.1)
            .unwrap_or(0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,cumulative_fraction\n");
        for (v, f) in &self.points {
            s.push_str(&format!("{v},{f}\n"));
        }
        s
    }
}

/// Cumulative distribution of in-vocabulary feature frequencies.
pub fn frequency_cdf(vocab: &Vocabulary) -> FrequencyCdf {
    FrequencyCdf::from_counts(&vocab.token_counts())
}

/// Random partition into three parts with the given proportions.
pub fn split(
    dataset: &EncodedDataset,
    ratios: [f64; 3],
    seed: u64,
) -> Result<[EncodedDataset; 3], DataError> {
    let n = dataset.len();
    if n < 3 {
        return Err(DataError::Invalid(format!("cannot split {n} instances three ways")));
    }
    if ratios.iter().any(|&r| r <= 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::Invalid(format!("split ratios {ratios:?} must be positive and sum to 1")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n0 = ((ratios[0] * n as f64).round() as usize).min(n);
    let n1 = ((ratios[1] * n as f64).round() as usize).min(n - n0);
    Ok([
        dataset.subset(&order[..n0]),
        dataset.subset(&order[n0..n0 + n1]),
        dataset.subset(&order[n0 + n1..]),
    ])
}

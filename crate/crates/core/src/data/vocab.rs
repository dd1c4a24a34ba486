use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{DataError, Row, Schema};

/// Placeholder token reported by [`Vocabulary::decode`] for OOV slots.
pub const OOV_TOKEN: &str = "<oov>";

/// Vocabulary of one field. The field occupies the global index range
/// `start .. start + 1 + tokens.len()`; `start` itself is the OOV slot and
/// token `i` (lexicographic order) is `start + 1 + i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldVocab {
    pub name: String,
    pub start: usize,
    pub tokens: Vec<String>,
    /// Occurrence counts indexed by local slot (slot 0 is OOV).
    pub counts: Vec<u64>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

impl FieldVocab {
    fn new(name: String, start: usize, tokens: Vec<String>, counts: Vec<u64>) -> Self {
        let mut v = Self {
            name,
            start,
            tokens,
            counts,
            lookup: HashMap::new(),
        };
        v.rebuild_lookup();
        v
    }

    fn rebuild_lookup(&mut self) {
        self.lookup = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), self.start + 1 + i))
            .collect();
    }

    pub fn size(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.size()
    }

    pub fn oov_index(&self) -> usize {
        self.start
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.lookup.get(token).copied().unwrap_or(self.start)
    }
}

/// Per-field token to global-index maps with contiguous field ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    fields: Vec<FieldVocab>,
}

impl Vocabulary {
    /// Builds a vocabulary; tokens seen fewer than `min_count` times fall
    /// into their field's OOV slot.
    pub fn build(rows: &[Row], schema: &Schema, min_count: u64) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        let f = schema.num_fields();
        let mut tallies: Vec<BTreeMap<&str, u64>> = vec![BTreeMap::new(); f];
        for (line, row) in rows.iter().enumerate() {
            if row.tokens.len() != f {
                return Err(DataError::MissingField {
                    line: line + 1,
                    expected: f,
                    found: row.tokens.len(),
                });
            }
            for (tally, tok) in tallies.iter_mut().zip(&row.tokens) {
                *tally.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut fields = Vec::with_capacity(f);
        let mut start = 0;
        for (name, tally) in schema.fields().iter().zip(tallies) {
            let mut tokens = Vec::new();
            let mut counts = vec![0u64];
            for (tok, c) in tally {
                if c >= min_count.max(1) {
                    tokens.push(tok.to_string());
                    counts.push(c);
                } else {
                    counts[0] += c;
                }
            }
            let fv = FieldVocab::new(name.clone(), start, tokens, counts);
            start += fv.size();
            fields.push(fv);
        }
        Ok(Self { fields })
    }

    /// A vocabulary of `sizes[f]` synthetic tokens per field (plus OOV slots).
    pub fn synthetic(sizes: &[usize]) -> Self {
        let mut start = 0;
        let fields = sizes
            .iter()
            .enumerate()
            .map(|(f, &n)| {
                let width = n.to_string().len();
                let tokens = (0..n).map(|t| format!("t{t:0width$}")).collect();
                let fv = FieldVocab::new(format!("f{f}"), start, tokens, vec![0; n + 1]);
                start += fv.size();
                fv
            })
            .collect();
        Self { fields }
    }

    pub fn fields(&self) -> &[FieldVocab] {
        &self.fields
    }

    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    /// Total number of global indices `M` (OOV slots included).
    pub fn num_features(&self) -> usize {
        self.fields.iter().map(FieldVocab::size).sum()
    }

    pub fn field_sizes(&self) -> Vec<usize> {
        self.fields.iter().map(FieldVocab::size).collect()
    }

    pub fn field_ranges(&self) -> Vec<Range<usize>> {
        self.fields.iter().map(FieldVocab::range).collect()
    }

    /// Field owning a global index.
    pub fn field_of(&self, index: usize) -> Option<usize> {
        self.fields.iter().position(|f| f.range().contains(&index))
    }

    /// Per-global-index occurrence counts.
    pub fn counts(&self) -> Vec<u64> {
        self.fields.iter().flat_map(|f| f.counts.iter().copied()).collect()
    }

    /// Counts of in-vocabulary tokens only (OOV slots excluded).
    pub fn token_counts(&self) -> Vec<u64> {
        self.fields
            .iter()
            .flat_map(|f| f.counts[1..].iter().copied())
            .collect()
    }

    pub fn set_counts(&mut self, counts: &[u64]) -> Result<(), DataError> {
        if counts.len() != self.num_features() {
            return Err(DataError::Invalid(format!(
                "{} counts for {} features",
                counts.len(),
                self.num_features()
            )));
        }
        for f in &mut self.fields {
            f.counts = counts[f.range()].to_vec();
        }
        Ok(())
    }

    pub fn encode(&self, row: &Row) -> Result<Vec<u32>, DataError> {
        self.encode_tokens(&row.tokens)
    }

    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<u32>, DataError> {
        if tokens.len() != self.fields.len() {
            return Err(DataError::MissingField {
                line: 0,
                expected: self.fields.len(),
                found: tokens.len(),
            });
        }
        Ok(self
            .fields
            .iter()
            .zip(tokens)
            .map(|(f, t)| f.index_of(t.as_ref()) as u32)
            .collect())
    }

    /// Inverse of [`Vocabulary::encode`]; OOV slots decode to [`OOV_TOKEN`].
    pub fn decode(&self, instance: &[u32]) -> Result<Vec<String>, DataError> {
        if instance.len() != self.fields.len() {
            return Err(DataError::Invalid(format!(
                "instance has {} indices for {} fields",
                instance.len(),
                self.fields.len()
            )));
        }
        self.fields
            .iter()
            .zip(instance)
            .enumerate()
            .map(|(fi, (f, &i))| {
                let i = i as usize;
                if !f.range().contains(&i) {
                    return Err(DataError::IndexOutOfField { field: fi, index: i });
                }
                Ok(if i == f.start {
                    OOV_TOKEN.to_string()
                } else {
                    f.tokens[i - f.start - 1].clone()
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String, DataError> {
        serde_json::to_string_pretty(self).map_err(|e| DataError::Invalid(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, DataError> {
        let mut v: Self = serde_json::from_str(s).map_err(|e| DataError::Invalid(e.to_string()))?;
        let mut start = 0;
        for f in &mut v.fields {
            if f.start != start || f.counts.len() != f.size() {
                return Err(DataError::Invalid(format!("field {} has inconsistent ranges", f.name)));
            }
            start += f.size();
            f.rebuild_lookup();
        }
        Ok(v)
    }
}

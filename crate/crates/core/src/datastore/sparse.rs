//! BM25 inverted index.
//!
//! ```text
//! score(D, Q) = sum over query tokens t present in D of
//!     ln(1 + (N - df + 0.5) / (df + 0.5)) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |D| / avgdl))
//! ```
//!
//! Repeated query tokens contribute once per occurrence.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{DatastoreError, ScoredId};
use crate::text::tokenize;

pub const SPARSE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), DatastoreError> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(DatastoreError::InvalidParameter(format!("k1 must be >= 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(DatastoreError::InvalidParameter(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc_id: String,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseIndex {
    pub format_version: u32,
    pub params: Bm25Params,
    pub doc_count: usize,
    pub avg_doc_len: f64,
    pub doc_lengths: BTreeMap<String, usize>,
    pub doc_freq: BTreeMap<String, usize>,
    /// Postings sorted by doc id.
    pub postings: BTreeMap<String, Vec<Posting>>,
}

impl SparseIndex {
    /// Builds from `(doc_id, text)` pairs. Ids must be unique.
    pub fn build<'a, I>(docs: I, params: Bm25Params) -> Result<Self, DatastoreError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        params.validate()?;
        let mut doc_lengths = BTreeMap::new();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();

        let mut sorted: Vec<(&str, &str)> = docs.into_iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(b.0));
        for (id, text) in sorted {
            let tokens = tokenize(text);
            doc_lengths.insert(id.to_string(), tokens.len());
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, tf) in tf {
                postings.entry(term).or_default().push(Posting { doc_id: id.to_string(), tf });
            }
        }
        if doc_lengths.is_empty() {
            return Err(DatastoreError::EmptyDatastore(String::new()));
        }

        let doc_count = doc_lengths.len();
        let avg_doc_len = doc_lengths.values().sum::<usize>() as f64 / doc_count as f64;
        let doc_freq = postings.iter().map(|(t, p)| (t.clone(), p.len())).collect();
        Ok(SparseIndex {
            format_version: SPARSE_FORMAT_VERSION,
            params,
            doc_count,
            avg_doc_len,
            doc_lengths,
            doc_freq,
            postings,
        })
    }

    pub fn idf(&self, term: &str) -> f64 {
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        let n = self.doc_count as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    pub fn term_frequency(&self, term: &str, doc_id: &str) -> u32 {
        self.postings
            .get(term)
            .and_then(|ps| ps.binary_search_by(|p| p.doc_id.as_str().cmp(doc_id)).ok().map(|i| ps[i].tf))
            .unwrap_or(0)
    }

    fn term_weight(&self, tf: u32, doc_len: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = if self.avg_doc_len > 0.0 { doc_len as f64 / self.avg_doc_len } else { 0.0 };
        tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
    }

    /// Top-`k` documents sharing at least one token with `query`.
    pub fn search(&self, query: &str, k: usize) -> Vec<ScoredId> {
        let mut scores: HashMap<&str, f64> = HashMap::new();
        for term in tokenize(query) {
            let Some(postings) = self.postings.get(&term) else { continue };
            let idf = self.idf(&term);
            for p in postings {
                let len = self.doc_lengths[&p.doc_id];
                *scores.entry(p.doc_id.as_str()).or_default() += idf * self.term_weight(p.tf, len);
            }
        }
        let mut hits: Vec<ScoredId> =
            scores.into_iter().map(|(id, score)| ScoredId { doc_id: id.to_string(), score }).collect();
        super::rank(&mut hits);
        hits.truncate(k);
        hits
    }
}

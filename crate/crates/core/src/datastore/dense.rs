//! IVF index with optional 8-bit scalar quantization.
//!
//! Vectors are partitioned by their nearest (L2) coarse centroid. A search
//! probes the `nprobe` closest partitions and scores every candidate, after
//! decoding, with the index metric. Full-precision vectors are kept alongside
//! the lists so exact search can serve as a brute-force reference.

use serde::{Deserialize, Serialize};

use super::kmeans;
use super::sq8::{ScalarQuantizer, SqRange};
use super::{DatastoreError, ScoredId};

pub const DENSE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    InnerProduct,
    Euclidean,
}

impl Metric {
    /// Higher is better. Euclidean scores are negated squared distances.
    pub fn score(self, query: &[f32], v: &[f32]) -> f64 {
        match self {
            Metric::InnerProduct => query.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum(),
            Metric::Euclidean => -kmeans::l2_squared(query, v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantizer {
    None,
    #[default]
    Sq8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub dim: usize,
    /// Defaults to `ceil(sqrt(N))` clamped to `[1, N]`.
    pub nlist: Option<usize>,
    pub metric: Metric,
    pub quantizer: Quantizer,
    pub seed: u64,
}

impl DenseParams {
    pub fn new(dim: usize) -> Self {
        DenseParams { dim, nlist: None, metric: Metric::default(), quantizer: Quantizer::default(), seed: 0 }
    }
}

pub fn default_nlist(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).clamp(1, n.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Code {
    Full(Vec<f32>),
    Sq8(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListEntry {
    pub doc_id: String,
    pub code: Code,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawVector {
    pub doc_id: String,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseIndex {
    pub format_version: u32,
    pub dim: usize,
    pub metric: Metric,
    pub nlist: usize,
    pub centroids: Vec<Vec<f32>>,
    pub quantizer: Quantizer,
    pub sq_params: Option<Vec<SqRange>>,
    pub lists: Vec<Vec<ListEntry>>,
    pub embedder_name: String,
    pub seed: u64,
    /// Full-precision vectors sorted by doc id.
    pub vectors: Vec<RawVector>,
}

impl DenseIndex {
    /// Builds over `(doc_id, vector)` items. Ids must be unique; order does not
    /// matter since items are sorted by id first.
    pub fn build(
        mut items: Vec<(String, Vec<f32>)>,
        params: &DenseParams,
        embedder_name: &str,
    ) -> Result<Self, DatastoreError> {
        if items.is_empty() {
            return Err(DatastoreError::EmptyDatastore(String::new()));
        }
        if let Some((_, v)) = items.iter().find(|(_, v)| v.len() != params.dim) {
            return Err(DatastoreError::DimensionMismatch { expected: params.dim, actual: v.len() });
        }
        let n = items.len();
        let nlist = params.nlist.unwrap_or_else(|| default_nlist(n));
        if nlist == 0 {
            return Err(DatastoreError::InvalidParameter("nlist must be >= 1".into()));
        }
        if nlist > n {
            return Err(DatastoreError::NlistTooLarge { nlist, documents: n });
        }
        items.sort_by(|a, b| a.0.cmp(&b.0));

        let vectors: Vec<Vec<f32>> = items.iter().map(|(_, v)| v.clone()).collect();
        let centroids = kmeans::train(&vectors, nlist, params.seed);
        let sq = match params.quantizer {
            Quantizer::None => None,
            Quantizer::Sq8 => Some(ScalarQuantizer::train(&vectors, params.dim)),
        };

        let mut lists: Vec<Vec<ListEntry>> = vec![Vec::new(); nlist];
        for (id, v) in &items {
            let code = match &sq {
                None => Code::Full(v.clone()),
                Some(q) => Code::Sq8(q.encode(v)),
            };
            lists[kmeans::nearest(&centroids, v)].push(ListEntry { doc_id: id.clone(), code });
        }

        Ok(DenseIndex {
            format_version: DENSE_FORMAT_VERSION,
            dim: params.dim,
            metric: params.metric,
            nlist,
            centroids,
            quantizer: params.quantizer,
            sq_params: sq.map(|q| q.ranges),
            lists,
            embedder_name: embedder_name.to_string(),
            seed: params.seed,
            vectors: items.into_iter().map(|(doc_id, vector)| RawVector { doc_id, vector }).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    fn quantizer(&self) -> Option<ScalarQuantizer> {
        self.sq_params.as_ref().map(|ranges| ScalarQuantizer { ranges: ranges.clone() })
    }

    fn check_query(&self, query: &[f32]) -> Result<(), DatastoreError> {
        if query.len() != self.dim {
            return Err(DatastoreError::DimensionMismatch { expected: self.dim, actual: query.len() });
        }
        Ok(())
    }

    /// Approximate top-`k` over the `nprobe` nearest partitions.
    pub fn search(&self, query: &[f32], k: usize, nprobe: usize) -> Result<Vec<ScoredId>, DatastoreError> {
        self.check_query(query)?;
        if nprobe == 0 || nprobe > self.nlist {
            return Err(DatastoreError::NprobeOutOfRange { nprobe, nlist: self.nlist });
        }
        let mut order: Vec<(f64, usize)> =
            self.centroids.iter().enumerate().map(|(i, c)| (kmeans::l2_squared(c, query), i)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let sq = self.quantizer();
        let mut hits = Vec::new();
        for &(_, list) in order.iter().take(nprobe) {
            for entry in &self.lists[list] {
                hits.push(ScoredId { doc_id: entry.doc_id.clone(), score: self.entry_score(query, entry, sq.as_ref())? });
            }
        }
        Ok(top_k(hits, k))
    }

    /// Brute-force top-`k` over the full-precision vectors.
    pub fn exact_search(&self, query: &[f32], k: usize) -> Result<Vec<ScoredId>, DatastoreError> {
        self.check_query(query)?;
        let hits = self
            .vectors
            .iter()
            .map(|r| ScoredId { doc_id: r.doc_id.clone(), score: self.metric.score(query, &r.vector) })
            .collect();
        Ok(top_k(hits, k))
    }

    /// Brute-force top-`k` over the vectors as stored in the lists (decoded).
    pub fn exact_search_reconstructed(&self, query: &[f32], k: usize) -> Result<Vec<ScoredId>, DatastoreError> {
        self.check_query(query)?;
        let sq = self.quantizer();
        let mut hits = Vec::with_capacity(self.len());
        for entry in self.lists.iter().flatten() {
            hits.push(ScoredId { doc_id: entry.doc_id.clone(), score: self.entry_score(query, entry, sq.as_ref())? });
        }
        Ok(top_k(hits, k))
    }

    fn entry_score(&self, query: &[f32], entry: &ListEntry, sq: Option<&ScalarQuantizer>) -> Result<f64, DatastoreError> {
        match (&entry.code, sq) {
            (Code::Full(v), _) => Ok(self.metric.score(query, v)),
            (Code::Sq8(codes), Some(q)) => Ok(self.metric.score(query, &q.decode(codes))),
            (Code::Sq8(_), None) => Err(DatastoreError::Corrupt("sq8 codes without quantizer ranges".into())),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("dense index serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatastoreError> {
        let idx: DenseIndex = serde_json::from_slice(bytes).map_err(|e| DatastoreError::Corrupt(e.to_string()))?;
        if idx.format_version != DENSE_FORMAT_VERSION {
            return Err(DatastoreError::Corrupt(format!("unsupported dense format {}", idx.format_version)));
        }
        Ok(idx)
    }
}

fn top_k(mut hits: Vec<ScoredId>, k: usize) -> Vec<ScoredId> {
    super::rank(&mut hits);
    hits.truncate(k);
    hits
}

//! Document collections with sparse (BM25) and dense (IVF) retrieval.

mod dense;
mod ingest;
pub mod kmeans;
mod sparse;
pub mod sq8;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dense::{default_nlist, Code, DenseIndex, DenseParams, ListEntry, Metric, Quantizer, RawVector};
pub use ingest::{parse_jsonl, DocumentInput};
pub use sparse::{Bm25Params, Posting, SparseIndex};

use crate::error::{ErrorClass, ErrorCode};
use crate::modelhub::ModelHub;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Document { id: id.into(), title: title.into(), text: text.into() }
    }

    /// Text fed to both indexes: title, a space, then the body.
    pub fn indexed_text(&self) -> String {
        format!("{} {}", self.title, self.text)
    }
}

/// An index hit before the document is attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredId {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub doc_id: String,
    pub score: f64,
    pub document: Document,
}

/// Score descending, then doc id ascending.
pub(crate) fn rank(hits: &mut [ScoredId]) {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Sparse,
    Dense,
}

impl std::fmt::Display for IndexKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IndexKind::Sparse => "sparse",
            IndexKind::Dense => "dense",
        })
    }
}

impl std::str::FromStr for IndexKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sparse" => Ok(IndexKind::Sparse),
            "dense" => Ok(IndexKind::Dense),
            other => Err(format!("unknown index kind `{other}` (expected sparse or dense)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatastoreError {
    #[error("datastore `{0}` already exists")]
    DuplicateName(String),
    #[error("invalid datastore name `{0}`: expected 1-64 characters from [a-z0-9_-]")]
    InvalidName(String),
    #[error("unknown datastore `{0}`")]
    UnknownDatastore(String),
    #[error("document `{0}` has empty text")]
    EmptyText(String),
    #[error("datastore `{0}` has no documents")]
    EmptyDatastore(String),
    #[error("{0}")]
    InvalidParameter(String),
    #[error("no {kind} index built for datastore `{datastore}`")]
    IndexNotBuilt { datastore: String, kind: IndexKind },
    #[error("unknown embedder `{0}`")]
    UnknownEmbedder(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("nlist {nlist} exceeds document count {documents}")]
    NlistTooLarge { nlist: usize, documents: usize },
    #[error("nprobe {nprobe} outside [1, {nlist}]")]
    NprobeOutOfRange { nprobe: usize, nlist: usize },
    #[error("embedder unavailable: {0}")]
    EmbedderUnavailable(String),
    #[error("line {line}: {reason}")]
    Ingest { line: usize, reason: String },
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(String),
}

impl ErrorCode for DatastoreError {
    fn code(&self) -> &'static str {
        match self {
            DatastoreError::DuplicateName(_) => "DuplicateName",
            DatastoreError::InvalidName(_) => "InvalidName",
            DatastoreError::UnknownDatastore(_) => "UnknownDatastore",
            DatastoreError::EmptyText(_) => "EmptyText",
            DatastoreError::EmptyDatastore(_) => "EmptyDatastore",
            DatastoreError::InvalidParameter(_) => "InvalidParameter",
            DatastoreError::IndexNotBuilt { .. } => "IndexNotBuilt",
            DatastoreError::UnknownEmbedder(_) => "UnknownEmbedder",
            DatastoreError::DimensionMismatch { .. } => "DimensionMismatch",
            DatastoreError::NlistTooLarge { .. } => "NlistTooLarge",
            DatastoreError::NprobeOutOfRange { .. } => "NprobeOutOfRange",
            DatastoreError::EmbedderUnavailable(_) => "EmbedderUnavailable",
            DatastoreError::Ingest { .. } => "ParseError",
            DatastoreError::Corrupt(_) => "CorruptIndex",
            DatastoreError::Io(_) => "Io",
        }
    }

    fn class(&self) -> ErrorClass {
        match self {
            DatastoreError::UnknownDatastore(_) | DatastoreError::UnknownEmbedder(_) => ErrorClass::NotFound,
            DatastoreError::EmbedderUnavailable(_) => ErrorClass::Remote,
            DatastoreError::Corrupt(_) | DatastoreError::Io(_) => ErrorClass::Internal,
            _ => ErrorClass::Validation,
        }
    }
}

impl From<std::io::Error> for DatastoreError {
    fn from(e: std::io::Error) -> Self {
        DatastoreError::Io(e.to_string())
    }
}

pub fn validate_name(name: &str) -> Result<(), DatastoreError> {
    let ok = (1..=64).contains(&name.len())
        && name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-');
    if ok {
        Ok(())
    } else {
        Err(DatastoreError::InvalidName(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStatus {
    pub built: bool,
    /// Documents changed since the index was built.
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatastoreInfo {
    pub name: String,
    pub document_count: usize,
    pub sparse: IndexStatus,
    pub dense: IndexStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedder: Option<String>,
}

#[derive(Debug, Default)]
struct Datastore {
    docs: BTreeMap<String, Document>,
    /// Bumped on every upsert that changes content.
    generation: u64,
    sparse: Option<(Arc<SparseIndex>, u64)>,
    dense: Option<(Arc<DenseIndex>, u64)>,
}

impl Datastore {
    fn info(&self, name: &str) -> DatastoreInfo {
        let status = |built: Option<u64>| IndexStatus {
            built: built.is_some(),
            stale: built.is_some_and(|g| g != self.generation),
        };
        DatastoreInfo {
            name: name.to_string(),
            document_count: self.docs.len(),
            sparse: status(self.sparse.as_ref().map(|s| s.1)),
            dense: status(self.dense.as_ref().map(|d| d.1)),
            embedder: self.dense.as_ref().map(|d| d.0.embedder_name.clone()),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredMeta {
    generation: u64,
    sparse_generation: Option<u64>,
    dense_generation: Option<u64>,
}

/// All datastores of one deployment.
///
/// Indexes are immutable `Arc`s: a rebuild swaps the pointer, so searches that
/// already hold the old index finish against it.
#[derive(Debug, Default)]
pub struct DatastoreRegistry {
    stores: RwLock<BTreeMap<String, Arc<RwLock<Datastore>>>>,
}

impl DatastoreRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    fn store(&self, name: &str) -> Result<Arc<RwLock<Datastore>>, DatastoreError> {
        self.stores.read().get(name).cloned().ok_or_else(|| DatastoreError::UnknownDatastore(name.to_string()))
    }

    pub fn create_datastore(&self, name: &str) -> Result<DatastoreInfo, DatastoreError> {
        validate_name(name)?;
        let mut stores = self.stores.write();
        if stores.contains_key(name) {
            return Err(DatastoreError::DuplicateName(name.to_string()));
        }
        let store = Datastore::default();
        let info = store.info(name);
        stores.insert(name.to_string(), Arc::new(RwLock::new(store)));
        Ok(info)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.stores.read().contains_key(name)
    }

    pub fn list(&self) -> Vec<DatastoreInfo> {
        let stores: Vec<_> = self.stores.read().iter().map(|(n, s)| (n.clone(), s.clone())).collect();
        stores.into_iter().map(|(n, s)| s.read().info(&n)).collect()
    }

    pub fn info(&self, name: &str) -> Result<DatastoreInfo, DatastoreError> {
        Ok(self.store(name)?.read().info(name))
    }

    /// Stores `docs`, replacing existing ids. Returns how many ids were new.
    /// Validation happens before anything is written.
    pub fn upsert_documents(&self, name: &str, docs: Vec<Document>) -> Result<usize, DatastoreError> {
        let store = self.store(name)?;
        if let Some(bad) = docs.iter().find(|d| d.text.trim().is_empty()) {
            return Err(DatastoreError::EmptyText(bad.id.clone()));
        }
        let mut store = store.write();
        let mut added = 0;
        let mut changed = false;
        for doc in docs {
            match store.docs.insert(doc.id.clone(), doc.clone()) {
                None => {
                    added += 1;
                    changed = true;
                }
                Some(old) => changed |= old != doc,
            }
        }
        if changed {
            store.generation += 1;
        }
        Ok(added)
    }

    /// Converts ingestion inputs into documents, assigning `doc-<n>` ids to
    /// entries without one, then upserts them.
    pub fn ingest(&self, name: &str, inputs: Vec<DocumentInput>) -> Result<usize, DatastoreError> {
        let store = self.store(name)?;
        let docs = {
            let store = store.read();
            let mut next = store.docs.len();
            let mut taken: std::collections::BTreeSet<String> = inputs.iter().filter_map(|i| i.id.clone()).collect();
            inputs
                .into_iter()
                .map(|input| {
                    let id = input.id.unwrap_or_else(|| loop {
                        next += 1;
                        let candidate = format!("doc-{next}");
                        if !store.docs.contains_key(&candidate) && taken.insert(candidate.clone()) {
                            break candidate;
                        }
                    });
                    Document { id, title: input.title.unwrap_or_default(), text: input.text }
                })
                .collect::<Vec<_>>()
        };
        self.upsert_documents(name, docs)
    }

    pub fn document(&self, name: &str, id: &str) -> Result<Option<Document>, DatastoreError> {
        Ok(self.store(name)?.read().docs.get(id).cloned())
    }

    pub fn document_count(&self, name: &str) -> Result<usize, DatastoreError> {
        Ok(self.store(name)?.read().docs.len())
    }

    pub fn build_sparse_index(&self, name: &str, params: Bm25Params) -> Result<Arc<SparseIndex>, DatastoreError> {
        params.validate()?;
        let store = self.store(name)?;
        let (texts, generation) = {
            let store = store.read();
            let texts: Vec<(String, String)> =
                store.docs.values().map(|d| (d.id.clone(), d.indexed_text())).collect();
            (texts, store.generation)
        };
        if texts.is_empty() {
            return Err(DatastoreError::EmptyDatastore(name.to_string()));
        }
        let index = Arc::new(SparseIndex::build(texts.iter().map(|(i, t)| (i.as_str(), t.as_str())), params)?);
        store.write().sparse = Some((index.clone(), generation));
        Ok(index)
    }

    pub async fn build_dense_index(
        &self,
        name: &str,
        embedder: &str,
        params: &DenseParams,
        hub: &ModelHub,
    ) -> Result<Arc<DenseIndex>, DatastoreError> {
        let store = self.store(name)?;
        let (docs, generation) = {
            let store = store.read();
            let docs: Vec<(String, String)> =
                store.docs.values().map(|d| (d.id.clone(), d.indexed_text())).collect();
            (docs, store.generation)
        };
        if docs.is_empty() {
            return Err(DatastoreError::EmptyDatastore(name.to_string()));
        }
        let spec = hub.get(embedder).ok_or_else(|| DatastoreError::UnknownEmbedder(embedder.to_string()))?;
        if spec.task != crate::modelhub::Task::Embedding {
            return Err(DatastoreError::UnknownEmbedder(embedder.to_string()));
        }
        if let Some(dim) = spec.embedding_dim() {
            if dim != params.dim {
                return Err(DatastoreError::DimensionMismatch { expected: params.dim, actual: dim });
            }
        }
        let nlist = params.nlist.unwrap_or_else(|| default_nlist(docs.len()));
        if nlist > docs.len() {
            return Err(DatastoreError::NlistTooLarge { nlist, documents: docs.len() });
        }

        let (ids, texts): (Vec<String>, Vec<String>) = docs.into_iter().unzip();
        let vectors =
            hub.embed(embedder, texts).await.map_err(|e| DatastoreError::EmbedderUnavailable(e.to_string()))?;
        if vectors.len() != ids.len() {
            return Err(DatastoreError::EmbedderUnavailable(format!(
                "embedder returned {} vectors for {} documents",
                vectors.len(),
                ids.len()
            )));
        }
        let index = Arc::new(DenseIndex::build(ids.into_iter().zip(vectors).collect(), params, embedder)?);
        store.write().dense = Some((index.clone(), generation));
        Ok(index)
    }

    pub fn sparse_index(&self, name: &str) -> Result<Arc<SparseIndex>, DatastoreError> {
        self.store(name)?.read().sparse.as_ref().map(|s| s.0.clone()).ok_or_else(|| {
            DatastoreError::IndexNotBuilt { datastore: name.to_string(), kind: IndexKind::Sparse }
        })
    }

    pub fn dense_index(&self, name: &str) -> Result<Arc<DenseIndex>, DatastoreError> {
        self.store(name)?.read().dense.as_ref().map(|d| d.0.clone()).ok_or_else(|| {
            DatastoreError::IndexNotBuilt { datastore: name.to_string(), kind: IndexKind::Dense }
        })
    }

    fn attach(&self, name: &str, hits: Vec<ScoredId>) -> Result<Vec<RetrievalResult>, DatastoreError> {
        let store = self.store(name)?;
        let store = store.read();
        // Hits for documents that vanished cannot happen (no deletes), but a
        // stale index may reference replaced text; the current text is served.
        Ok(hits
            .into_iter()
            .filter_map(|h| {
                store.docs.get(&h.doc_id).map(|d| RetrievalResult { doc_id: h.doc_id, score: h.score, document: d.clone() })
            })
            .collect())
    }

    pub fn sparse_search(&self, name: &str, query: &str, k: usize) -> Result<Vec<RetrievalResult>, DatastoreError> {
        check_k(k)?;
        let index = self.sparse_index(name)?;
        self.attach(name, index.search(query, k))
    }

    pub async fn dense_search(
        &self,
        name: &str,
        query: &str,
        k: usize,
        nprobe: usize,
        hub: &ModelHub,
    ) -> Result<Vec<RetrievalResult>, DatastoreError> {
        check_k(k)?;
        let index = self.dense_index(name)?;
        if nprobe == 0 || nprobe > index.nlist {
            return Err(DatastoreError::NprobeOutOfRange { nprobe, nlist: index.nlist });
        }
        let q = self.embed_query(&index, query, hub).await?;
        let hits = index.search(&q, k, nprobe)?;
        self.attach(name, hits)
    }

    pub async fn exact_search(
        &self,
        name: &str,
        query: &str,
        k: usize,
        hub: &ModelHub,
    ) -> Result<Vec<RetrievalResult>, DatastoreError> {
        check_k(k)?;
        let index = self.dense_index(name)?;
        let q = self.embed_query(&index, query, hub).await?;
        let hits = index.exact_search(&q, k)?;
        self.attach(name, hits)
    }

    async fn embed_query(&self, index: &DenseIndex, query: &str, hub: &ModelHub) -> Result<Vec<f32>, DatastoreError> {
        let mut vs = hub
            .embed(&index.embedder_name, vec![query.to_string()])
            .await
            .map_err(|e| DatastoreError::EmbedderUnavailable(e.to_string()))?;
        match vs.pop() {
            Some(v) if vs.is_empty() => Ok(v),
            _ => Err(DatastoreError::EmbedderUnavailable("embedder returned no vector".into())),
        }
    }

    /// Serialized form of the current index.
    pub fn index_bytes(&self, name: &str, kind: IndexKind) -> Result<Vec<u8>, DatastoreError> {
        Ok(match kind {
            IndexKind::Sparse => serde_json::to_vec(&*self.sparse_index(name)?).expect("sparse index serializes"),
            IndexKind::Dense => self.dense_index(name)?.to_bytes(),
        })
    }

    /// Writes every datastore under `dir/<name>/`.
    pub fn save(&self, dir: &Path) -> Result<(), DatastoreError> {
        let names: Vec<String> = self.stores.read().keys().cloned().collect();
        for name in names {
            self.save_one(dir, &name)?;
        }
        Ok(())
    }

    pub fn save_one(&self, dir: &Path, name: &str) -> Result<(), DatastoreError> {
        let store = self.store(name)?;
        let store = store.read();
        let path = dir.join(name);
        fs::create_dir_all(&path)?;
        let mut docs = String::new();
        for d in store.docs.values() {
            docs.push_str(&serde_json::to_string(d).expect("document serializes"));
            docs.push('\n');
        }
        fs::write(path.join("documents.jsonl"), docs)?;
        let meta = StoredMeta {
            generation: store.generation,
            sparse_generation: store.sparse.as_ref().map(|s| s.1),
            dense_generation: store.dense.as_ref().map(|d| d.1),
        };
        fs::write(path.join("meta.json"), serde_json::to_vec_pretty(&meta).expect("meta serializes"))?;
        match &store.sparse {
            Some((idx, _)) => fs::write(path.join("sparse.json"), serde_json::to_vec(&**idx).expect("serializes"))?,
            None => remove_if_exists(&path.join("sparse.json"))?,
        }
        match &store.dense {
            Some((idx, _)) => fs::write(path.join("dense.json"), idx.to_bytes())?,
            None => remove_if_exists(&path.join("dense.json"))?,
        }
        Ok(())
    }

    /// Loads every datastore directory found under `dir`.
    pub fn load(dir: &Path) -> Result<Self, DatastoreError> {
        let registry = DatastoreRegistry::new();
        if !dir.exists() {
            return Ok(registry);
        }
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let name = entry.file_name().to_string_lossy().into_owned();
            if validate_name(&name).is_err() {
                continue;
            }
            let path = entry.path();
            let mut store = Datastore::default();
            let docs = fs::read_to_string(path.join("documents.jsonl")).unwrap_or_default();
            for (i, line) in docs.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let d: Document = serde_json::from_str(line)
                    .map_err(|e| DatastoreError::Corrupt(format!("{name}/documents.jsonl:{}: {e}", i + 1)))?;
                store.docs.insert(d.id.clone(), d);
            }
            let meta: Option<StoredMeta> = match fs::read(path.join("meta.json")) {
                Ok(b) => Some(serde_json::from_slice(&b).map_err(|e| DatastoreError::Corrupt(e.to_string()))?),
                Err(_) => None,
            };
            store.generation = meta.as_ref().map_or(0, |m| m.generation);
            if let Ok(bytes) = fs::read(path.join("sparse.json")) {
                let idx: SparseIndex =
                    serde_json::from_slice(&bytes).map_err(|e| DatastoreError::Corrupt(e.to_string()))?;
                let g = meta.as_ref().and_then(|m| m.sparse_generation).unwrap_or(store.generation);
                store.sparse = Some((Arc::new(idx), g));
            }
            if let Ok(bytes) = fs::read(path.join("dense.json")) {
                let g = meta.as_ref().and_then(|m| m.dense_generation).unwrap_or(store.generation);
                store.dense = Some((Arc::new(DenseIndex::from_bytes(&bytes)?), g));
            }
            registry.stores.write().insert(name, Arc::new(RwLock::new(store)));
        }
        Ok(registry)
    }
}

fn check_k(k: usize) -> Result<(), DatastoreError> {
    if k == 0 {
        return Err(DatastoreError::InvalidParameter("k must be >= 1".into()));
    }
    Ok(())
}

fn remove_if_exists(path: &Path) -> std::io::Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e),
        _ => Ok(()),
    }
}

//! Fixtures shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::net::SocketAddr;
use std::time::Duration;

use axum::body::Bytes;
use axum::http::StatusCode;
use axum::routing::post;
use axum::Router;
use qahub_core::datastore::{DatastoreRegistry, DenseParams, Document, IndexKind};
use qahub_core::modelhub::{ModelHub, Task, WorkerSpec};
use qahub_core::skillrt::{Hosting, PipelineConfig, SkillSpec, SkillType, Visibility};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One planted fact: the document text, the question and the expected span.
pub struct Fact {
    pub doc_id: String,
    pub text: &'static str,
    pub question: &'static str,
    pub answer: &'static str,
}

const FACTS: [(&str, &str, &str); 20] = [
    ("Velmora is the capital of Trastania.", "What is the capital of Trastania?", "Velmora"),
    ("Brannock discovered the comet Ixalia in 1843.", "Who discovered the comet Ixalia?", "Brannock"),
    ("Quillon invented the harmonic telegraph.", "Who invented the harmonic telegraph?", "Quillon"),
    ("The Oskarel glacier fed the lake Nimrath.", "Which lake was fed by the Oskarel glacier?", "Nimrath"),
    ("Tessaly painted the mural Dawnwake.", "Who painted the mural Dawnwake?", "Tessaly"),
    ("Kordhavn is the largest port of Ulmaria.", "What is the largest port of Ulmaria?", "Kordhavn"),
    ("Merevin composed the opera Starfall.", "Who composed the opera Starfall?", "Merevin"),
    ("Draskel founded the Vantori guild.", "Who founded the Vantori guild?", "Draskel"),
    ("The Pelune river empties into Corvas bay.", "The Pelune river empties into which bay?", "Corvas"),
    ("Faylen designed the Ardent Hollow gardens.", "Who designed the Ardent Hollow gardens?", "Faylen"),
    ("Ysolde translated the Marrow codex.", "Who translated the Marrow codex?", "Ysolde"),
    ("Hollin is the tallest summit of Brecca.", "What is the tallest summit of Brecca?", "Hollin"),
    ("Gravenor coached the Tarrow rowing crew.", "Who coached the Tarrow rowing crew?", "Gravenor"),
    ("Calloway patented the Zephrine alloy.", "Who patented the Zephrine alloy?", "Calloway"),
    ("Ombrek wrote the treatise Lumen.", "Who wrote the treatise Lumen?", "Ombrek"),
    ("Saltmere is the oldest university of Dravia.", "What is the oldest university of Dravia?", "Saltmere"),
    ("Rhiannel mapped the Quorin archipelago.", "Who mapped the Quorin archipelago?", "Rhiannel"),
    ("Osgood built the Fennick lighthouse.", "Who built the Fennick lighthouse?", "Osgood"),
    ("Wendrith sculpted the statue Verity.", "Who sculpted the statue Verity?", "Wendrith"),
    ("Jorvaal is the official currency of Meridia.", "What is the official currency of Meridia?", "Jorvaal"),
];

const COMMON_WORDS: &[&str] = &[
    "people", "city", "village", "market", "winter", "summer", "road", "bridge", "farm", "harvest", "school",
    "teacher", "student", "music", "garden", "forest", "mountain", "valley", "coast", "island", "boat", "train",
    "station", "library", "book", "story", "history", "museum", "festival", "church", "castle", "tower", "wall",
    "gate", "street", "house", "family", "child", "mother", "father", "brother", "sister", "friend", "king",
    "queen", "army", "battle", "treaty", "trade", "merchant", "coin", "bread", "wine", "cheese", "fish", "bird",
    "horse", "dog", "cat", "sheep", "wool", "cloth", "iron", "copper", "gold", "silver", "stone", "wood", "paper",
    "ink", "letter", "song", "dance", "game", "team", "season", "weather", "rain", "snow", "wind", "storm",
    "morning", "evening", "night", "day", "week", "month", "year", "century", "old", "new", "small", "large",
    "early", "late", "quiet", "busy", "famous", "local", "northern", "southern", "eastern", "western", "river",
    "lake", "sea", "hill", "field", "road", "walked", "built", "opened", "closed", "visited", "grew", "sold",
    "carried", "heard",
];

const FILLER: &[&str] = &["the", "a", "of", "in", "and", "was", "to", "on", "at", "it"];

/// Sentences of common words, none containing a fact's names.
pub fn distractors(count: usize, seed: u64) -> Vec<Document> {
    let mut rng = rng(seed);
    (0..count)
        .map(|i| {
            let sentences = rng.random_range(1..=3);
            let mut text = String::new();
            for s in 0..sentences {
                let len = rng.random_range(6..=14);
                let words: Vec<&str> = (0..len)
                    .map(|_| if rng.random_bool(0.3) { *FILLER.choose(&mut rng).unwrap() } else { *COMMON_WORDS.choose(&mut rng).unwrap() })
                    .collect();
                if s > 0 {
                    text.push(' ');
                }
                let mut sentence = words.join(" ");
                sentence[..1].make_ascii_uppercase();
                text.push_str(&sentence);
                text.push('.');
            }
            Document::new(format!("d{i:04}"), "", text)
        })
        .collect()
}

pub fn facts() -> Vec<Fact> {
    FACTS
        .iter()
        .enumerate()
        .map(|(i, &(text, question, answer))| Fact { doc_id: format!("fact-{i:02}"), text, question, answer })
        .collect()
}

/// The open-domain corpus: 500 distractors plus the 20 planted facts.
pub fn planted_corpus() -> (Vec<Document>, Vec<Fact>) {
    let facts = facts();
    let mut docs = distractors(500, 11);
    docs.extend(facts.iter().map(|f| Document::new(f.doc_id.clone(), "", f.text)));
    (docs, facts)
}

pub async fn planted_datastore(hub: &ModelHub) -> (DatastoreRegistry, Vec<Fact>) {
    let (docs, facts) = planted_corpus();
    let reg = DatastoreRegistry::new();
    reg.create_datastore("kb").unwrap();
    reg.upsert_documents("kb", docs).unwrap();
    reg.build_sparse_index("kb", Default::default()).unwrap();
    let mut params = DenseParams::new(256);
    params.seed = 7;
    reg.build_dense_index("kb", "hash-embed-256", &params, hub).await.unwrap();
    (reg, facts)
}

pub fn open_domain_skill(index: IndexKind, retrieve_k: usize) -> SkillSpec {
    SkillSpec {
        name: format!("open-{index}"),
        description: "open-domain extractive QA".into(),
        skill_type: SkillType::Extractive,
        requires_context: false,
        visibility: Visibility::Public,
        hosting: Hosting::Internal,
        endpoint: None,
        pipeline: Some(PipelineConfig {
            datastore: Some("kb".into()),
            index: Some(index),
            retrieve_k,
            reader_worker: "span-reader".into(),
            reader_topk: 1,
            nprobe: None,
        }),
    }
}

pub fn context_skill(name: &str, skill_type: SkillType, reader: &str, visibility: Visibility) -> SkillSpec {
    SkillSpec {
        name: name.into(),
        description: String::new(),
        skill_type,
        requires_context: true,
        visibility,
        hosting: Hosting::Internal,
        endpoint: None,
        pipeline: Some(PipelineConfig {
            datastore: None,
            index: None,
            retrieve_k: 1,
            reader_worker: reader.into(),
            reader_topk: 1,
            nprobe: None,
        }),
    }
}

pub fn remote_skill(name: &str, endpoint: &str) -> SkillSpec {
    SkillSpec {
        name: name.into(),
        description: String::new(),
        skill_type: SkillType::Abstractive,
        requires_context: false,
        visibility: Visibility::Public,
        hosting: Hosting::Remote,
        endpoint: Some(endpoint.into()),
        pipeline: None,
    }
}

/// Abstractive worker that always answers `answer`.
pub fn constant_worker(name: &str, answer: &str) -> WorkerSpec {
    WorkerSpec::builtin(name, Task::Abstractive).with_param("kind", "constant").with_param("answer", answer)
}

/// Serves `router` on an ephemeral local port.
pub async fn spawn(router: Router) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
    addr
}

/// A remote endpoint that waits `delay`, then replies with `status` and `body`.
pub async fn spawn_fixed(delay: Duration, status: u16, body: &'static str) -> String {
    let handler = move |_: Bytes| async move {
        tokio::time::sleep(delay).await;
        (StatusCode::from_u16(status).unwrap(), [("content-type", "application/json")], body)
    };
    let addr = spawn(Router::new().route("/", post(handler))).await;
    format!("http://{addr}/")
}

pub const GOOD_OUTPUT: &str = r#"{"skill_id":"remote","answers":[{"text":"forty two","score":0.9}]}"#;

/// An address nothing listens on.
pub async fn dead_endpoint() -> String {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}/")
}

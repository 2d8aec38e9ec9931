//! Self-hosted question answering: datastores with sparse and dense retrieval,
//! a model hub with deterministic stub workers and remote routing, skills that
//! compose the two, a behavioural testing engine, and an HTTP gateway.

pub mod behave;
pub mod datastore;
pub mod error;
pub mod gateway;
pub mod modelhub;
pub mod platform;
pub mod principal;
pub mod skillrt;
pub mod text;

pub use behave::{BehaviouralTestSuite, TestReport};
pub use datastore::{DatastoreRegistry, Document, RetrievalResult};
pub use error::{ErrorClass, ErrorCode};
pub use gateway::{Gateway, GatewayConfig};
pub use modelhub::{ModelHub, WorkerSpec};
pub use platform::{Platform, PlatformError};
pub use principal::Principal;
pub use skillrt::{QueryOutput, QueryRequest, Skill, SkillSpec};

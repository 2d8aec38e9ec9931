//! The shared state behind the gateway and the CLI, with on-disk persistence.
//!
//! ```text
//! <data_dir>/datastores/<name>/{documents.jsonl,meta.json,sparse.json,dense.json}
//! <data_dir>/workers.json
//! <data_dir>/skills.json
//! <data_dir>/reports/<skill_id>.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use thiserror::Error;

use crate::behave::{export_report, parse_report, BehaveError, TestReport};
use crate::datastore::{DatastoreError, DatastoreRegistry};
use crate::modelhub::{ModelError, ModelHub, WorkerSpec};
use crate::skillrt::{http_client, Skill, SkillRegistry, SkillRuntime};

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt state file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error(transparent)]
    Datastore(#[from] DatastoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Report(#[from] BehaveError),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PlatformError + '_ {
    move |source| PlatformError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug)]
pub struct Platform {
    pub datastores: DatastoreRegistry,
    pub models: ModelHub,
    pub skills: SkillRegistry,
    reports: RwLock<BTreeMap<String, TestReport>>,
    http: reqwest::Client,
    data_dir: Option<PathBuf>,
}

impl Default for Platform {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl Platform {
    /// Fresh state with the stock workers and no persistence.
    pub fn in_memory() -> Self {
        Platform {
            datastores: DatastoreRegistry::new(),
            models: ModelHub::with_stock_workers(),
            skills: SkillRegistry::new(),
            reports: RwLock::new(BTreeMap::new()),
            http: http_client(),
            data_dir: None,
        }
    }

    /// Loads state from `dir`, creating it (with stock workers) if empty.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, PlatformError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let datastores = DatastoreRegistry::load(&dir.join("datastores"))?;

        let workers_path = dir.join("workers.json");
        let models = match fs::read(&workers_path) {
            Ok(bytes) => {
                let specs: Vec<WorkerSpec> = serde_json::from_slice(&bytes)
                    .map_err(|e| PlatformError::Corrupt { path: workers_path.clone(), message: e.to_string() })?;
                let hub = ModelHub::new();
                for spec in specs {
                    hub.deploy(spec)?;
                }
                hub
            }
            Err(_) => ModelHub::with_stock_workers(),
        };

        let skills_path = dir.join("skills.json");
        let skills = match fs::read(&skills_path) {
            Ok(bytes) => {
                let skills: Vec<Skill> = serde_json::from_slice(&bytes)
                    .map_err(|e| PlatformError::Corrupt { path: skills_path.clone(), message: e.to_string() })?;
                SkillRegistry::from_skills(skills)
            }
            Err(_) => SkillRegistry::new(),
        };

        let mut reports = BTreeMap::new();
        let reports_dir = dir.join("reports");
        if let Ok(entries) = fs::read_dir(&reports_dir) {
            for entry in entries {
                let path = entry.map_err(io(&reports_dir))?.path();
                if path.extension().is_some_and(|e| e == "json") {
                    let report = parse_report(&fs::read(&path).map_err(io(&path))?)?;
                    reports.insert(report.skill_id.clone(), report);
                }
            }
        }

        let platform = Platform {
            datastores,
            models,
            skills,
            reports: RwLock::new(reports),
            http: http_client(),
            data_dir: Some(dir),
        };
        platform.persist_workers()?;
        Ok(platform)
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.data_dir.as_deref()
    }

    pub fn runtime(&self) -> SkillRuntime<'_> {
        SkillRuntime { skills: &self.skills, datastores: &self.datastores, models: &self.models, http: &self.http }
    }

    pub fn store_report(&self, report: TestReport) -> Result<(), PlatformError> {
        if let Some(dir) = &self.data_dir {
            let dir = dir.join("reports");
            fs::create_dir_all(&dir).map_err(io(&dir))?;
            let path = dir.join(format!("{}.json", report.skill_id));
            fs::write(&path, export_report(&report)).map_err(io(&path))?;
        }
        self.reports.write().insert(report.skill_id.clone(), report);
        Ok(())
    }

    /// Most recent report for a skill.
    pub fn report(&self, skill_id: &str) -> Option<TestReport> {
        self.reports.read().get(skill_id).cloned()
    }

    pub fn persist_datastore(&self, name: &str) -> Result<(), PlatformError> {
        if let Some(dir) = &self.data_dir {
            self.datastores.save_one(&dir.join("datastores"), name)?;
        }
        Ok(())
    }

    pub fn persist_workers(&self) -> Result<(), PlatformError> {
        if let Some(dir) = &self.data_dir {
            let path = dir.join("workers.json");
            let bytes = serde_json::to_vec_pretty(&self.models.list()).expect("workers serialize");
            fs::write(&path, bytes).map_err(io(&path))?;
        }
        Ok(())
    }

    pub fn persist_skills(&self) -> Result<(), PlatformError> {
        if let Some(dir) = &self.data_dir {
            let path = dir.join("skills.json");
            let bytes = serde_json::to_vec_pretty(&self.skills.all()).expect("skills serialize");
            fs::write(&path, bytes).map_err(io(&path))?;
        }
        Ok(())
    }

    /// Drops a removed skill's report, in memory and on disk.
    pub fn forget_report(&self, skill_id: &str) -> Result<(), PlatformError> {
        self.reports.write().remove(skill_id);
        if let Some(dir) = &self.data_dir {
            let path = dir.join("reports").join(format!("{skill_id}.json"));
            match fs::remove_file(&path) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(io(&path)(e)),
                _ => {}
            }
        }
        Ok(())
    }
}

//! On-disk session and edit-job store: one JSON document per session, per
//! edit job and per idempotent response.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use topoedit::edit::{CandidateSet, EditConfig, EditRecord, EditRequest};
use topoedit::io::grid_hash;
use topoedit::{DensityField, ProblemSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub action: String,
    pub edit_id: Option<String>,
    pub candidate: Option<usize>,
    pub refine_steps: Option<usize>,
    pub record: Option<EditRecord>,
    pub compliance: f64,
    pub field_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub source: String,
    pub spec: ProblemSpec,
    pub original: DensityField,
    /// Current working design; edits start from it.
    pub field: DensityField,
    pub compliance: f64,
    pub history: Vec<HistoryEntry>,
}

impl Session {
    pub fn field_hash(&self) -> String {
        grid_hash(self.field.grid())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditJob {
    pub edit_id: String,
    pub session_id: String,
    pub status: JobStatus,
    pub request: EditRequest,
    pub config: EditConfig,
    /// Hash of the working field the edit started from.
    pub base_hash: String,
    pub error: Option<JobError>,
    pub result: Option<CandidateSet>,
}

/// A stored response replayed for a repeated idempotency key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredResponse {
    pub status: u16,
    pub body: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

fn read_doc<T: DeserializeOwned>(path: &Path) -> std::io::Result<Option<T>> {
    match fs::read(path) {
        Ok(b) => serde_json::from_slice(&b).map(Some).map_err(std::io::Error::other),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

fn write_doc<T: Serialize>(path: &Path, v: &T) -> std::io::Result<()> {
    write_atomic(path, &serde_json::to_vec(v).map_err(std::io::Error::other)?)
}

/// Ids are generated server-side; anything else is rejected before it
/// reaches the filesystem.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
}

impl Store {
    /// Opens (creating if needed) a store. Jobs left queued or running by a
    /// previous process are marked failed.
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let s = Self { root: root.into() };
        for d in ["sessions", "edits", "idempotency"] {
            fs::create_dir_all(s.root.join(d))?;
        }
        for entry in fs::read_dir(s.root.join("edits"))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                if let Some(mut job) = read_doc::<EditJob>(&path)? {
                    if matches!(job.status, JobStatus::Queued | JobStatus::Running) {
                        job.status = JobStatus::Failed;
                        job.error = Some(JobError { code: "interrupted".into(), message: "service restarted before the job finished".into() });
                        write_doc(&path, &job)?;
                    }
                }
            }
        }
        Ok(s)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn session_path(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(format!("{id}.json"))
    }

    fn edit_path(&self, id: &str) -> PathBuf {
        self.root.join("edits").join(format!("{id}.json"))
    }

    pub fn save_session(&self, s: &Session) -> std::io::Result<()> {
        write_doc(&self.session_path(&s.id), s)?;
        // Inspectable copy of the working design.
        write_atomic(&self.root.join("sessions").join(format!("{}.pgm", s.id)), &topoedit::io::grid_to_pgm(s.field.grid()))
    }

    pub fn load_session(&self, id: &str) -> std::io::Result<Option<Session>> {
        if !valid_id(id) {
            return Ok(None);
        }
        read_doc(&self.session_path(id))
    }

    pub fn save_edit(&self, j: &EditJob) -> std::io::Result<()> {
        write_doc(&self.edit_path(&j.edit_id), j)
    }

    pub fn load_edit(&self, id: &str) -> std::io::Result<Option<EditJob>> {
        if !valid_id(id) {
            return Ok(None);
        }
        read_doc(&self.edit_path(id))
    }

    fn idem_path(&self, key: &str) -> PathBuf {
        self.root.join("idempotency").join(format!("{key}.json"))
    }

    pub fn load_response(&self, key: &str) -> std::io::Result<Option<StoredResponse>> {
        read_doc(&self.idem_path(key))
    }

    pub fn save_response(&self, key: &str, r: &StoredResponse) -> std::io::Result<()> {
        write_doc(&self.idem_path(key), r)
    }
}

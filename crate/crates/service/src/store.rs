use std::fs;
use std::path::{Path, PathBuf};

use tlens_core::pipeline::artifact::{CONFIG, MANIFEST};
use tlens_core::pipeline::{Manifest, RunConfig};

use crate::error::ApiError;

/// Read-only view over an artifact root: one directory per published run.
#[derive(Debug, Clone)]
pub struct ArtifactStore {
    root: PathBuf,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl ArtifactStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Published run ids, sorted. Hidden (in-progress) directories are skipped.
    pub fn run_ids(&self) -> Result<Vec<String>, ApiError> {
        let entries = fs::read_dir(&self.root).map_err(|e| ApiError::internal(format!("{}: {e}", self.root.display())))?;
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(MANIFEST).is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| valid_id(id))
            .collect();
        ids.sort();
        Ok(ids)
    }

    fn run_dir(&self, id: &str) -> Result<PathBuf, ApiError> {
        let dir = self.root.join(id);
        if !valid_id(id) || !dir.join(MANIFEST).is_file() {
            return Err(ApiError::not_found(format!("unknown run `{id}`")));
        }
        Ok(dir)
    }

    pub fn read(&self, id: &str, rel: &str) -> Result<Vec<u8>, ApiError> {
        let path = self.run_dir(id)?.join(rel);
        fs::read(&path).map_err(|_| ApiError::not_found(format!("run `{id}` has no `{rel}`")))
    }

    pub fn json<T: serde::de::DeserializeOwned>(&self, id: &str, rel: &str) -> Result<T, ApiError> {
        let bytes = self.read(id, rel)?;
        serde_json::from_slice(&bytes).map_err(|e| ApiError::internal(format!("{rel}: {e}")))
    }

    pub fn manifest(&self, id: &str) -> Result<Manifest, ApiError> {
        self.json(id, MANIFEST)
    }

    pub fn config(&self, id: &str) -> Result<RunConfig, ApiError> {
        self.json(id, CONFIG)
    }
}

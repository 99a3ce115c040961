use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::event_io::{read_events_with_bounds, ViewStream};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Descriptor of one multi-view recording, stored as
/// `<root>/<recording_id>/manifest.json` next to its `view<k>.csv` files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordingManifest {
    pub recording_id: String,
    pub label: usize,
    pub subject: u64,
    #[serde(rename = "V")]
    pub views: usize,
    #[serde(rename = "X")]
    pub width: u32,
    #[serde(rename = "Y")]
    pub height: u32,
    pub t_begin: u64,
    pub t_end: u64,
    pub view_files: Vec<String>,
}

impl RecordingManifest {
    pub fn view_file_name(k: usize) -> String {
        format!("view{k}.csv")
    }

    pub fn dir(&self, root: &Path) -> PathBuf {
        root.join(&self.recording_id)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.view_files.len() != self.views {
            return Err(PipelineError::Manifest(format!(
                "{}: V = {} but {} view files listed",
                self.recording_id,
                self.views,
                self.view_files.len()
            )));
        }
        Ok(())
    }

    /// Reads view `k` with the manifest's resolution and time bounds.
    pub fn read_view(&self, root: &Path, k: usize) -> Result<ViewStream, PipelineError> {
        let file = self.view_files.get(k).ok_or_else(|| {
            PipelineError::Manifest(format!("{}: no view {k}", self.recording_id))
        })?;
        Ok(read_events_with_bounds(
            &self.dir(root).join(file),
            self.width,
            self.height,
            Some((self.t_begin, self.t_end)),
        )?)
    }

    pub fn read_all_views(&self, root: &Path) -> Result<Vec<ViewStream>, PipelineError> {
        self.validate()?;
        (0..self.views).map(|k| self.read_view(root, k)).collect()
    }

    pub fn save(&self, root: &Path) -> Result<(), PipelineError> {
        let dir = self.dir(root);
        fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").map_err(|e| PipelineError::io(&path, e))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }
}

/// Every manifest under `root`, sorted by recording id.
pub fn load_manifests(root: &Path) -> Result<Vec<RecordingManifest>, PipelineError> {
    let entries = fs::read_dir(root).map_err(|e| PipelineError::io(root, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| PipelineError::io(root, e))?;
        let path = entry.path().join(MANIFEST_FILE);
        if path.is_file() {
            out.push(RecordingManifest::load(&path)?);
        }
    }
    out.sort_by(|a, b| a.recording_id.cmp(&b.recording_id));
    Ok(out)
}

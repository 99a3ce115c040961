use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rayon::prelude::*;

use super::{load_manifests, DatasetSplit, PipelineError, RecordingManifest, SampleRef};
use crate::event_io::{normalize_volume, render_volume, NormalizedVolume};

/// A dataset directory and its manifests keyed by recording id.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifests: IndexMap<String, RecordingManifest>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, PipelineError> {
        let manifests = load_manifests(root)?
            .into_iter()
            .map(|m| (m.recording_id.clone(), m))
            .collect();
        Ok(Self {
            root: root.to_path_buf(),
            manifests,
        })
    }

    pub fn manifest_list(&self) -> Vec<RecordingManifest> {
        self.manifests.values().cloned().collect()
    }

    pub fn get(&self, id: &str) -> Result<&RecordingManifest, PipelineError> {
        self.manifests
            .get(id)
            .ok_or_else(|| PipelineError::Manifest(format!("unknown recording {id}")))
    }

    pub fn classes(&self) -> usize {
        self.manifests.values().map(|m| m.label + 1).max().unwrap_or(0)
    }
}

/// Reads every view of a recording and turns it into `T` normalized frames.
pub fn prepare_recording(
    manifest: &RecordingManifest,
    root: &Path,
    windows: usize,
) -> Result<Vec<NormalizedVolume>, PipelineError> {
    manifest
        .read_all_views(root)?
        .iter()
        .map(|s| Ok(normalize_volume(&render_volume(s, windows, s.width, s.height)?)))
        .collect()
}

/// Preprocessed model input.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub recording_id: String,
    pub label: usize,
    pub views: Vec<usize>,
    pub volumes: Vec<NormalizedVolume>,
}

impl Sample {
    pub fn volume_refs(&self) -> Vec<&NormalizedVolume> {
        self.volumes.iter().collect()
    }
}

/// Materializes `refs`; with `one_view_each` every reference becomes one
/// sample per view.
pub fn prepare_samples(
    dataset: &Dataset,
    refs: &[SampleRef],
    windows: usize,
    one_view_each: bool,
) -> Result<Vec<Sample>, PipelineError> {
    let ids: Vec<&str> = refs
        .iter()
        .map(|r| r.recording_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let loaded: HashMap<&str, Vec<NormalizedVolume>> = ids
        .par_iter()
        .map(|&id| {
            let m = dataset.get(id)?;
            Ok((id, prepare_recording(m, &dataset.root, windows)?))
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut out = Vec::new();
    for r in refs {
        let m = dataset.get(&r.recording_id)?;
        let vols = &loaded[r.recording_id.as_str()];
        if let Some(&bad) = r.views.iter().find(|&&v| v >= vols.len()) {
            return Err(PipelineError::Split(format!(
                "{} has no view {bad}",
                r.recording_id
            )));
        }
        let groups: Vec<Vec<usize>> = if one_view_each {
            r.views.iter().map(|&v| vec![v]).collect()
        } else {
            vec![r.views.clone()]
        };
        for views in groups {
            out.push(Sample {
                recording_id: r.recording_id.clone(),
                label: m.label,
                volumes: views.iter().map(|&v| vols[v].clone()).collect(),
                views,
            });
        }
    }
    Ok(out)
}

/// Splits every sample into single-view samples.
pub fn one_view_each(samples: &[Sample]) -> Vec<Sample> {
    samples
        .iter()
        .flat_map(|s| {
            s.views.iter().zip(&s.volumes).map(|(&v, vol)| Sample {
                recording_id: s.recording_id.clone(),
                label: s.label,
                views: vec![v],
                volumes: vec![vol.clone()],
            })
        })
        .collect()
}

/// The three partitions of a split, preprocessed for `T` windows.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Views per training sample.
    pub views: usize,
    pub classes: usize,
}

impl PreparedSplit {
    pub fn load(dataset: &Dataset, split: &DatasetSplit, windows: usize) -> Result<Self, PipelineError> {
        Ok(Self {
            train: prepare_samples(dataset, &split.train, windows, false)?,
            val: prepare_samples(dataset, &split.val, windows, false)?,
            test: prepare_samples(dataset, &split.test, windows, false)?,
            views: split.model_views(),
            classes: dataset.classes(),
        })
    }
}

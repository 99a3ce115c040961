use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PipelineError, RecordingManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    CrossSubject,
    CrossView,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Partition {
    Train,
    Val,
    Test,
}

/// One model input: a recording seen through a subset of its views.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRef {
    pub recording_id: String,
    pub views: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub mode: SplitMode,
    pub seed: u64,
    pub train_subjects: Vec<u64>,
    pub val_subjects: Vec<u64>,
    pub test_subjects: Vec<u64>,
    pub train_views: Vec<usize>,
    pub val_views: Vec<usize>,
    pub test_views: Vec<usize>,
    pub train: Vec<SampleRef>,
    pub val: Vec<SampleRef>,
    pub test: Vec<SampleRef>,
}

impl DatasetSplit {
    pub fn partition(&self, p: Partition) -> &[SampleRef] {
        match p {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }

    /// Views per training sample, which is the view count the model is built for.
    pub fn model_views(&self) -> usize {
        self.train_views.len()
    }

    /// Cross-subject split from explicit subject lists; every recording of a
    /// listed subject goes to that partition with all of its views.
    pub fn by_subjects(
        manifests: &[RecordingManifest],
        train: &[u64],
        val: &[u64],
        test: &[u64],
    ) -> Result<Self, PipelineError> {
        let views = common_views(manifests)?;
        let t: BTreeSet<u64> = train.iter().copied().collect();
        let v: BTreeSet<u64> = val.iter().copied().collect();
        let s: BTreeSet<u64> = test.iter().copied().collect();
        if !t.is_disjoint(&v) || !t.is_disjoint(&s) || !v.is_disjoint(&s) {
            return Err(PipelineError::Split("subject lists overlap".into()));
        }
        let all: Vec<usize> = (0..views).collect();
        let pick = |set: &BTreeSet<u64>| {
            manifests
                .iter()
                .filter(|m| set.contains(&m.subject))
                .map(|m| SampleRef {
                    recording_id: m.recording_id.clone(),
                    views: all.clone(),
                })
                .collect()
        };
        Ok(Self {
            mode: SplitMode::CrossSubject,
            seed: 0,
            train: pick(&t),
            val: pick(&v),
            test: pick(&s),
            train_subjects: t.into_iter().collect(),
            val_subjects: v.into_iter().collect(),
            test_subjects: s.into_iter().collect(),
            train_views: all.clone(),
            val_views: all.clone(),
            test_views: all,
        })
    }
}

fn common_views(manifests: &[RecordingManifest]) -> Result<usize, PipelineError> {
    let first = manifests
        .first()
        .ok_or_else(|| PipelineError::Split("no recordings".into()))?;
    if let Some(m) = manifests.iter().find(|m| m.views != first.views) {
        return Err(PipelineError::Split(format!(
            "{} has {} views, {} has {}",
            m.recording_id, m.views, first.recording_id, first.views
        )));
    }
    Ok(first.views)
}

/// Splits `manifests` deterministically in `seed`.
///
/// Cross-subject: shuffled subjects, `floor(n / 10)` each for validation and
/// test, the rest for training. Cross-view: shuffled view indices, the last
/// one for test, the one before it for validation when `val_views == 1`;
/// training samples carry all remaining views, held-out samples one view.
pub fn make_splits(
    manifests: &[RecordingManifest],
    mode: SplitMode,
    seed: u64,
    val_views: usize,
) -> Result<DatasetSplit, PipelineError> {
    let views = common_views(manifests)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        SplitMode::CrossSubject => {
            let mut subjects: Vec<u64> = manifests
                .iter()
                .map(|m| m.subject)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if subjects.len() < 10 {
                return Err(PipelineError::Split(format!(
                    "cross-subject needs at least 10 subjects, got {}",
                    subjects.len()
                )));
            }
            subjects.shuffle(&mut rng);
            let tenth = subjects.len() / 10;
            let (val, rest) = subjects.split_at(tenth);
            let (test, train) = rest.split_at(tenth);
            let mut split = DatasetSplit::by_subjects(manifests, train, val, test)?;
            split.seed = seed;
            Ok(split)
        }
        SplitMode::CrossView => {
            if val_views > 1 {
                return Err(PipelineError::Split("at most one validation view".into()));
            }
            let held = 1 + val_views;
            if views < held + 1 {
                return Err(PipelineError::Split(format!(
                    "cross-view needs at least {} views, got {views}",
                    held + 1
                )));
            }
            let mut order: Vec<usize> = (0..views).collect();
            order.shuffle(&mut rng);
            let test_view = order[views - 1];
            let val_view = (val_views == 1).then(|| order[views - 2]);
            let mut train_views = order[..views - held].to_vec();
            train_views.sort_unstable();
            let subjects: Vec<u64> = manifests
                .iter()
                .map(|m| m.subject)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let single = |v: usize| {
                manifests
                    .iter()
                    .map(|m| SampleRef {
                        recording_id: m.recording_id.clone(),
                        views: vec![v],
                    })
                    .collect::<Vec<_>>()
            };
            Ok(DatasetSplit {
                mode,
                seed,
                train_subjects: subjects.clone(),
                val_subjects: if val_view.is_some() { subjects.clone() } else { Vec::new() },
                test_subjects: subjects,
                train: manifests
                    .iter()
                    .map(|m| SampleRef {
                        recording_id: m.recording_id.clone(),
                        views: train_views.clone(),
                    })
                    .collect(),
                val: val_view.map(single).unwrap_or_default(),
                test: single(test_view),
                train_views,
                val_views: val_view.into_iter().collect(),
                test_views: vec![test_view],
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn manifests(subjects: u64, classes: usize, views: usize) -> Vec<RecordingManifest> {
        let mut out = Vec::new();
        for s in 0..subjects {
            for c in 0..classes {
                out.push(RecordingManifest {
                    recording_id: format!("a{c:03}_s{s:06}"),
                    label: c,
                    subject: s,
                    views,
                    width: 8,
                    height: 8,
                    t_begin: 0,
                    t_end: 100,
                    view_files: (0..views).map(RecordingManifest::view_file_name).collect(),
                });
            }
        }
        out
    }

    #[test]
    fn ratios() {
        let s = make_splits(&manifests(105, 2, 3), SplitMode::CrossSubject, 1, 1).unwrap();
        assert_eq!(
            (s.train_subjects.len(), s.val_subjects.len(), s.test_subjects.len()),
            (85, 10, 10)
        );
        assert_eq!(s.train.len(), 170);
        let s = make_splits(&manifests(10, 2, 3), SplitMode::CrossSubject, 1, 1).unwrap();
        assert_eq!(
            (s.train_subjects.len(), s.val_subjects.len(), s.test_subjects.len()),
            (8, 1, 1)
        );
        let s = make_splits(&manifests(19, 1, 3), SplitMode::CrossSubject, 1, 1).unwrap();
        assert_eq!(s.train_subjects.len(), 17);
    }

    #[test]
    fn too_few() {
        assert!(make_splits(&manifests(9, 2, 3), SplitMode::CrossSubject, 0, 1).is_err());
        assert!(make_splits(&manifests(10, 2, 2), SplitMode::CrossView, 0, 1).is_err());
        assert!(make_splits(&manifests(10, 2, 2), SplitMode::CrossView, 0, 0).is_ok());
        assert!(make_splits(&[], SplitMode::CrossView, 0, 0).is_err());
    }

    #[test]
    fn cross_view_samples() {
        let m = manifests(3, 2, 6);
        let s = make_splits(&m, SplitMode::CrossView, 4, 1).unwrap();
        assert_eq!(s.train_views.len(), 4);
        assert_eq!(s.model_views(), 4);
        assert_eq!(s.train.len(), 6);
        assert_eq!(s.val.len(), 6);
        assert_eq!(s.test.len(), 6);
        assert!(s.test.iter().all(|r| r.views == s.test_views));
        let s0 = make_splits(&m, SplitMode::CrossView, 4, 0).unwrap();
        assert_eq!(s0.train_views.len(), 5);
        assert!(s0.val.is_empty());
    }

    #[test]
    fn explicit_subjects() {
        let m = manifests(12, 2, 3);
        let s = DatasetSplit::by_subjects(&m, &[0, 1, 2], &[3], &[4, 5]).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 4));
        assert!(DatasetSplit::by_subjects(&m, &[0, 1], &[1], &[2]).is_err());
    }
}

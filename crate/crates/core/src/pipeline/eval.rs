use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::load_run;
use super::{prepare_samples, Dataset, DatasetSplit, Partition, PipelineError, Sample};
use crate::model::{self, ModelConfig, Variant};
use crate::numerics::{cross_entropy_value, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopM {
    pub top1: f64,
    pub top3: f64,
    pub top5: f64,
    pub samples: usize,
}

/// Zero-based rank of `label`: classes scoring higher, plus equal-scoring
/// classes with a smaller index.
pub fn rank_of(logits: &[f64], label: usize) -> Result<usize, PipelineError> {
    let target = *logits.get(label).ok_or(PipelineError::Label {
        label,
        classes: logits.len(),
    })?;
    Ok(logits
        .iter()
        .enumerate()
        .filter(|&(j, &l)| l > target || (l == target && j < label))
        .count())
}

pub fn top_m(logits: &[Vec<f64>], labels: &[usize]) -> Result<TopM, PipelineError> {
    if logits.len() != labels.len() {
        return Err(PipelineError::Config(format!(
            "{} logit rows for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let mut hits = [0usize; 3];
    for (l, &y) in logits.iter().zip(labels) {
        let r = rank_of(l, y)?;
        for (h, m) in hits.iter_mut().zip([1, 3, 5]) {
            *h += usize::from(r < m);
        }
    }
    let n = labels.len().max(1) as f64;
    Ok(TopM {
        top1: hits[0] as f64 / n,
        top3: hits[1] as f64 / n,
        top5: hits[2] as f64 / n,
        samples: labels.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: TopM,
    pub mean_loss: f64,
}

pub fn evaluate_samples(
    cfg: &ModelConfig,
    params: &ParamSet,
    samples: &[Sample],
) -> Result<Evaluation, PipelineError> {
    let logits: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|s| {
            if s.label >= cfg.classes {
                return Err(PipelineError::Label {
                    label: s.label,
                    classes: cfg.classes,
                });
            }
            Ok(model::logits(cfg, params, &s.volume_refs())?)
        })
        .collect::<Result<_, _>>()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let loss = logits
        .iter()
        .zip(&labels)
        .map(|(l, &y)| cross_entropy_value(l, y))
        .sum::<f64>()
        / samples.len().max(1) as f64;
    Ok(Evaluation {
        metrics: top_m(&logits, &labels)?,
        mean_loss: loss,
    })
}

/// Evaluates the checkpoint in `run_dir` on one partition of `split`.
pub fn evaluate(
    run_dir: &Path,
    data_root: &Path,
    split: &DatasetSplit,
    partition: Partition,
) -> Result<Evaluation, PipelineError> {
    let (run, cfg, params) = load_run(run_dir)?;
    let dataset = Dataset::open(data_root)?;
    let single = cfg.variant == Variant::SingleViewBaseline;
    let samples = prepare_samples(&dataset, split.partition(partition), run.windows, single)?;
    evaluate_samples(&cfg, &params, &samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_smaller_index() {
        let l = [0.5, 0.5, 0.5];
        assert_eq!(rank_of(&l, 0).unwrap(), 0);
        assert_eq!(rank_of(&l, 2).unwrap(), 2);
        assert_eq!(rank_of(&[0.1, 0.9, 0.3], 2).unwrap(), 1);
        assert!(matches!(
            rank_of(&l, 3),
            Err(PipelineError::Label { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn perfect_predictor() {
        let logits: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..6).map(|j| if j == i { 1.0 } else { 0.0 }).collect())
            .collect();
        let m = top_m(&logits, &[0, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!((m.top1, m.top3, m.top5), (1.0, 1.0, 1.0));
    }

    #[test]
    fn uniform_logits_follow_tie_rule() {
        let labels = [0, 0, 1, 2, 3, 4, 4, 0];
        let logits = vec![vec![0.0; 5]; labels.len()];
        let m = top_m(&logits, &labels).unwrap();
        assert_eq!(m.top1, 3.0 / 8.0);
        assert_eq!(m.top3, 5.0 / 8.0);
        assert_eq!(m.top5, 1.0);
    }
}

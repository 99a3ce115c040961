use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate_samples, rank_of};
use super::{
    prepare_recording, prepare_samples, Dataset, DatasetSplit, PipelineError, RecordingManifest,
    RunConfig, Sample,
};
use crate::model::{self, ModelConfig, SampleGradient, Variant};
use crate::numerics::{load_checkpoint, save_checkpoint, AdamState, ParamSet};

pub const CHECKPOINT_FILE: &str = "checkpoint.hmv";
pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.json";
pub const METRICS_FILE: &str = "metrics.jsonl";

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_top1: f64,
    pub val_loss: Option<f64>,
    pub val_top1: Option<f64>,
    /// Whether this epoch's parameters became the kept checkpoint.
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelConfig,
    pub best_params: ParamSet,
    pub best_epoch: usize,
    pub final_params: ParamSet,
    pub metrics: Vec<EpochMetrics>,
}

/// Logits of one recording read from disk, one row per model input: a
/// single row for multi-view variants, one per view for the single-view
/// baseline.
pub fn forward_pass(
    manifest: &RecordingManifest,
    root: &Path,
    cfg: &ModelConfig,
    params: &ParamSet,
) -> Result<Vec<Vec<f64>>, PipelineError> {
    let volumes = prepare_recording(manifest, root, cfg.windows)?;
    if cfg.variant == Variant::SingleViewBaseline {
        volumes
            .iter()
            .map(|v| Ok(model::logits(cfg, params, &[v])?))
            .collect()
    } else {
        let refs: Vec<_> = volumes.iter().collect();
        Ok(vec![model::logits(cfg, params, &refs)?])
    }
}

fn check_labels(samples: &[Sample], classes: usize) -> Result<(), PipelineError> {
    match samples.iter().find(|s| s.label >= classes) {
        Some(s) => Err(PipelineError::Label {
            label: s.label,
            classes,
        }),
        None => Ok(()),
    }
}

/// Mini-batch Adam on in-memory samples. Per-sample gradients may run in
/// parallel; they are summed in sample order so results do not depend on the
/// worker count. The kept parameters are those with the best validation
/// Top-1 (earliest on ties), or the last epoch without validation data.
pub fn train_samples<F>(
    run: &RunConfig,
    cfg: &ModelConfig,
    train: &[Sample],
    val: &[Sample],
    mut on_epoch: F,
) -> Result<TrainOutcome, PipelineError>
where
    F: FnMut(&EpochMetrics) -> Result<(), PipelineError>,
{
    run.validate()?;
    if train.is_empty() {
        return Err(PipelineError::Split("no training samples".into()));
    }
    check_labels(train, cfg.classes)?;
    check_labels(val, cfg.classes)?;
    let mut params = model::init_params(cfg, run.seed)?;
    let mut adam = AdamState::new(run.adam());
    let schedule = run.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ 0x0005_eed0_5eed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut metrics = Vec::with_capacity(run.epochs);
    for epoch in 0..run.epochs {
        adam.config.lr = schedule.lr(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for (b, batch) in order.chunks(run.batch_size).enumerate() {
            let results: Vec<SampleGradient> = batch
                .par_iter()
                .map(|&i| {
                    let s = &train[i];
                    model::loss_and_gradients(cfg, &params, &s.volume_refs(), s.label)
                })
                .collect::<Result<_, _>>()?;
            let mut grad = params.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for (r, &i) in results.iter().zip(batch) {
                grad.add_scaled(&r.gradients, scale)?;
                batch_loss += r.loss;
                hits += usize::from(rank_of(&r.logits, train[i].label)? == 0);
            }
            if !batch_loss.is_finite() {
                return Err(PipelineError::Divergence {
                    epoch: epoch + 1,
                    batch: b,
                    loss: batch_loss * scale,
                });
            }
            loss_sum += batch_loss;
            adam.step(&mut params, &grad)?;
        }
        let val_eval = if val.is_empty() {
            None
        } else {
            Some(evaluate_samples(cfg, &params, val)?)
        };
        let score = val_eval.as_ref().map(|e| e.metrics.top1);
        let improved = match (&best, score) {
            (None, _) => true,
            (Some((s, _, _)), Some(v)) => v > *s,
            (Some(_), None) => true,
        };
        if improved {
            best = Some((score.unwrap_or(0.0), epoch + 1, params.clone()));
        }
        let m = EpochMetrics {
            epoch: epoch + 1,
            lr: adam.config.lr,
            train_loss: loss_sum / train.len() as f64,
            train_top1: hits as f64 / train.len() as f64,
            val_loss: val_eval.as_ref().map(|e| e.mean_loss),
            val_top1: score,
            best: improved,
        };
        on_epoch(&m)?;
        metrics.push(m);
    }
    let (best_params, best_epoch) = match best {
        Some((_, e, p)) => (p, e),
        None => (params.clone(), 0),
    };
    Ok(TrainOutcome {
        model: cfg.clone(),
        best_params,
        best_epoch,
        final_params: params,
        metrics,
    })
}

/// Trains on the split's training partition and writes `config.json`,
/// `model.json`, `metrics.jsonl` (one object per epoch, flushed as it goes)
/// and the best checkpoint into `out_dir`.
pub fn train(
    run: &RunConfig,
    split: &DatasetSplit,
    data_root: &Path,
    out_dir: &Path,
) -> Result<TrainOutcome, PipelineError> {
    run.validate()?;
    let dataset = Dataset::open(data_root)?;
    let classes = run.classes.unwrap_or_else(|| dataset.classes());
    let cfg = run.model_config(split.model_views(), classes);
    cfg.validate()?;
    let single = cfg.variant == Variant::SingleViewBaseline;
    let train_set = prepare_samples(&dataset, &split.train, run.windows, single)?;
    let val_set = prepare_samples(&dataset, &split.val, run.windows, single)?;

    fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    run.save(&out_dir.join(CONFIG_FILE))?;
    let model_path = out_dir.join(MODEL_FILE);
    fs::write(&model_path, serde_json::to_string_pretty(&cfg)? + "\n")
        .map_err(|e| PipelineError::io(&model_path, e))?;
    let log_path = out_dir.join(METRICS_FILE);
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| PipelineError::io(&log_path, e))?);
    let outcome = train_samples(run, &cfg, &train_set, &val_set, |m| {
        let line = serde_json::to_string(m)?;
        writeln!(log, "{line}")
            .and_then(|_| log.flush())
            .map_err(|e| PipelineError::io(&log_path, e))
    })?;
    save_checkpoint(&outcome.best_params, &out_dir.join(CHECKPOINT_FILE))?;
    Ok(outcome)
}

/// Run configuration, model configuration and best parameters of a run
/// directory written by [`train`].
pub fn load_run(dir: &Path) -> Result<(RunConfig, ModelConfig, ParamSet), PipelineError> {
    let run = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let model_path = dir.join(MODEL_FILE);
    let text = fs::read_to_string(&model_path).map_err(|e| PipelineError::io(&model_path, e))?;
    let cfg: ModelConfig = serde_json::from_str(&text)?;
    let params = load_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    let expected = model::init_params(&cfg, 0)?;
    for (name, t) in expected.iter() {
        match params.get(name) {
            Some(p) if p.shape() == t.shape() => {}
            _ => {
                return Err(PipelineError::Config(format!(
                    "checkpoint does not match the model at {name}"
                )))
            }
        }
    }
    Ok((run, cfg, params))
}

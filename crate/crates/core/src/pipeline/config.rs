use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::split::SplitMode;
use super::PipelineError;
use crate::backbone::BackboneConfig;
use crate::model::{Construction, ModelConfig, Variant};
use crate::numerics::{AdamConfig, LrSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSettings {
    pub mode: SplitMode,
    pub seed: u64,
    /// Held-out validation views in cross-view mode (0 or 1).
    pub val_views: usize,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self {
            mode: SplitMode::CrossSubject,
            seed: 0,
            val_views: 1,
        }
    }
}

/// Every knob of a training run, stored as JSON next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(rename = "T")]
    pub windows: usize,
    pub k: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    pub backbone: BackboneConfig,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub gamma: f64,
    /// Epochs per factor-`gamma` decay.
    pub decay_step: f64,
    pub seed: u64,
    pub variant: Variant,
    pub construction: Construction,
    pub attention: bool,
    /// Inferred from the training labels when absent.
    pub classes: Option<usize>,
    pub split: SplitSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            windows: 9,
            k: 3,
            layers: 2,
            backbone: BackboneConfig::default(),
            lr: 1e-4,
            weight_decay: 1e-4,
            batch_size: 12,
            epochs: 40,
            gamma: 0.5,
            decay_step: 10.0,
            seed: 0,
            variant: Variant::HyperMv,
            construction: Construction::Both,
            attention: true,
            classes: None,
            split: SplitSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| PipelineError::io(path, e))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: &str| Err(PipelineError::Config(m.into()));
        if self.windows == 0 {
            return fail("T must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if !(self.gamma > 0.0 && self.decay_step > 0.0) {
            return fail("gamma and decay step must be positive");
        }
        if self.weight_decay < 0.0 {
            return fail("weight decay must be non-negative");
        }
        if self.split.val_views > 1 {
            return fail("at most one validation view");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            lr0: self.lr,
            gamma: self.gamma,
            step_size: self.decay_step,
        }
    }

    /// Model built for `views` input views and `classes` labels.
    pub fn model_config(&self, views: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            construction: self.construction,
            attention: self.attention,
            k: self.k,
            layers: self.layers,
            backbone: self.backbone.clone(),
            windows: self.windows,
            classes: self.classes.unwrap_or(classes),
            views: if self.variant == Variant::SingleViewBaseline {
                1
            } else {
                views
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!((c.windows, c.k, c.layers), (9, 3, 2));
        assert_eq!((c.lr, c.weight_decay, c.gamma), (1e-4, 1e-4, 0.5));
        assert_eq!((c.batch_size, c.epochs), (12, 40));
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: RunConfig =
            serde_json::from_str(r#"{"T": 5, "variant": "hypermv-gnn", "split": {"mode": "cross-view"}}"#)
                .unwrap();
        assert_eq!(c.windows, 5);
        assert_eq!(c.variant, Variant::HyperMvGnn);
        assert_eq!(c.split.mode, SplitMode::CrossView);
        assert_eq!(c.split.val_views, 1);
        assert_eq!(c.epochs, 40);
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let c = RunConfig {
            attention: false,
            classes: Some(7),
            ..RunConfig::default()
        };
        c.save(&path).unwrap();
        assert_eq!(RunConfig::load(&path).unwrap(), c);
    }

    #[test]
    fn single_view_model_has_one_view() {
        let c = RunConfig {
            variant: Variant::SingleViewBaseline,
            ..RunConfig::default()
        };
        assert_eq!(c.model_config(4, 5).views, 1);
    }
}

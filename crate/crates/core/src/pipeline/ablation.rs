use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::data::{one_view_each, PreparedSplit};
use super::{evaluate_samples, train_samples, PipelineError, RunConfig};
use crate::model::{Construction, Variant};

/// One cell of the ablation grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSetting {
    pub variant: Variant,
    pub construction: Construction,
    pub attention: bool,
    pub layers: usize,
    pub k: usize,
}

impl AblationSetting {
    pub fn from_run(run: &RunConfig) -> Self {
        Self {
            variant: run.variant,
            construction: run.construction,
            attention: run.attention,
            layers: run.layers,
            k: run.k,
        }
    }

    pub fn apply(&self, run: &RunConfig) -> RunConfig {
        RunConfig {
            variant: self.variant,
            construction: self.construction,
            attention: self.attention,
            layers: self.layers,
            k: self.k,
            ..run.clone()
        }
    }

    pub fn label(&self) -> String {
        let name = serde_json::to_value(self.variant)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        if self.variant.uses_graph() {
            let c = serde_json::to_value(self.construction)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            let att = if self.attention { "on" } else { "off" };
            format!("{name} {c} att={att} L={} k={}", self.layers, self.k)
        } else {
            name
        }
    }
}

/// Axes of the grid; the settings are their Cartesian product. Baselines
/// ignore every axis but the variant and appear once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationGrid {
    pub variants: Vec<Variant>,
    pub constructions: Vec<Construction>,
    pub attention: Vec<bool>,
    pub layers: Vec<usize>,
    pub k: Vec<usize>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            variants: vec![Variant::HyperMv],
            constructions: vec![Construction::Rule, Construction::Knn, Construction::Both],
            attention: vec![true, false],
            layers: (1..=5).collect(),
            k: (2..=6).collect(),
        }
    }
}

impl AblationGrid {
    pub fn settings(&self, base: &RunConfig) -> Vec<AblationSetting> {
        let mut out: Vec<AblationSetting> = Vec::new();
        for &variant in &self.variants {
            if !variant.uses_graph() {
                out.push(AblationSetting {
                    variant,
                    ..AblationSetting::from_run(base)
                });
                continue;
            }
            for &construction in &self.constructions {
                for &attention in &self.attention {
                    for &layers in &self.layers {
                        for &k in &self.k {
                            let s = AblationSetting {
                                variant,
                                construction,
                                attention,
                                layers,
                                k,
                            };
                            if !out.contains(&s) {
                                out.push(s);
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: AblationSetting,
    pub label: String,
    /// Test Top-1 per seed.
    pub top1: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation, 0 for a single seed.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, setting: &AblationSetting) -> Option<&AblationRow> {
        self.rows.iter().find(|r| &r.setting == setting)
    }

    /// Fixed-width text, one line per setting.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(7).max(7);
        let mut s = format!("{:<width$}  top1 mean +- std  (seeds {:?})\n", "setting", self.seeds);
        for r in &self.rows {
            let _ = writeln!(s, "{:<width$}  {:.4} +- {:.4}", r.label, r.mean, r.std);
        }
        s
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Trains every setting once per seed and reports test Top-1 of the best
/// validation checkpoint. `progress` sees each finished run.
pub fn ablation_suite<F>(
    base: &RunConfig,
    settings: &[AblationSetting],
    seeds: &[u64],
    data: &PreparedSplit,
    mut progress: F,
) -> Result<AblationTable, PipelineError>
where
    F: FnMut(&AblationSetting, u64, f64),
{
    if seeds.is_empty() {
        return Err(PipelineError::Config("no seeds".into()));
    }
    let mut rows = Vec::with_capacity(settings.len());
    for setting in settings {
        let mut top1 = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let run = RunConfig {
                seed,
                ..setting.apply(base)
            };
            let cfg = run.model_config(data.views, data.classes);
            let outcome = if setting.variant == Variant::SingleViewBaseline {
                let (tr, va) = (one_view_each(&data.train), one_view_each(&data.val));
                train_samples(&run, &cfg, &tr, &va, |_| Ok(()))?
            } else {
                train_samples(&run, &cfg, &data.train, &data.val, |_| Ok(()))?
            };
            let test = if setting.variant == Variant::SingleViewBaseline {
                one_view_each(&data.test)
            } else {
                data.test.clone()
            };
            let acc = evaluate_samples(&cfg, &outcome.best_params, &test)?.metrics.top1;
            progress(setting, seed, acc);
            top1.push(acc);
        }
        let (mean, std) = mean_std(&top1);
        rows.push(AblationRow {
            label: setting.label(),
            setting: setting.clone(),
            top1,
            mean,
            std,
        });
    }
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_size() {
        let g = AblationGrid::default();
        assert_eq!(g.settings(&RunConfig::default()).len(), 3 * 2 * 5 * 5);
        assert_eq!(g.layers, vec![1, 2, 3, 4, 5]);
        assert_eq!(g.k, vec![2, 3, 4, 5, 6]);
    }

    #[test]
    fn strategies_only() {
        let g = AblationGrid {
            attention: vec![true],
            layers: vec![2],
            k: vec![3],
            ..AblationGrid::default()
        };
        assert_eq!(g.settings(&RunConfig::default()).len(), 3);
    }

    #[test]
    fn baselines_appear_once() {
        let g = AblationGrid {
            variants: vec![Variant::HyperMv, Variant::MultiViewBaseline],
            constructions: vec![Construction::Both],
            attention: vec![true, false],
            layers: vec![2],
            k: vec![3],
        };
        let s = g.settings(&RunConfig::default());
        assert_eq!(s.len(), 3);
        assert_eq!(s[2].label(), "multi-view-baseline");
        assert_eq!(s[0].label(), "hypermv both att=on L=2 k=3");
    }

    #[test]
    fn statistics() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}

//! Shared convolutional feature extractor: every event frame of every view
//! goes through the same strided conv stack followed by global average
//! pooling, giving one embedding row per (view, window) vertex.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_io::NormalizedVolume;
use crate::numerics::{
    conv_out_len, Bindings, Conv2dSpec, NumericsError, ParamSet, Tape, Tensor, Var,
};

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("volume shape mismatch: {0}")]
    Shape(String),
    #[error("{width}x{height} frames are too small for {blocks} stride-{stride} blocks")]
    TooSmall {
        width: usize,
        height: usize,
        blocks: usize,
        stride: usize,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    /// Output channels of each conv block; the last one is the embedding size.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 16, 32, 64],
            kernel: 3,
            stride: 2,
            padding: 1,
        }
    }
}

impl BackboneConfig {
    pub fn embedding_dim(&self) -> usize {
        self.channels.last().copied().unwrap_or(1)
    }

    pub fn blocks(&self) -> usize {
        self.channels.len()
    }

    fn spec(&self) -> Conv2dSpec {
        Conv2dSpec {
            stride: self.stride,
            padding: self.padding,
        }
    }

    /// Spatial size after every block, or `None` if some block has no output.
    pub fn output_size(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        let spec = self.spec();
        self.channels.iter().try_fold((width, height), |(w, h), _| {
            Some((
                conv_out_len(w, self.kernel, spec)?,
                conv_out_len(h, self.kernel, spec)?,
            ))
        })
    }

    pub fn check_input(&self, width: usize, height: usize) -> Result<(), BackboneError> {
        match self.output_size(width, height) {
            Some((w, h)) if w >= 1 && h >= 1 => Ok(()),
            _ => Err(BackboneError::TooSmall {
                width,
                height,
                blocks: self.blocks(),
                stride: self.stride,
            }),
        }
    }

    pub fn weight_name(block: usize) -> String {
        format!("backbone.conv{block}.weight")
    }

    pub fn bias_name(block: usize) -> String {
        format!("backbone.conv{block}.bias")
    }
}

/// `N x d` vertex features, row `v * T + (t - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub views: usize,
    pub windows: usize,
    pub features: Tensor,
}

impl EmbeddingMatrix {
    pub fn new(views: usize, windows: usize, features: Tensor) -> Result<Self, BackboneError> {
        if features.shape().len() != 2 || features.shape()[0] != views * windows {
            return Err(BackboneError::Shape(format!(
                "{views} views x {windows} windows vs features {:?}",
                features.shape()
            )));
        }
        Ok(Self {
            views,
            windows,
            features,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.views * self.windows
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    /// Row of vertex `(v, t)` with `t` in `1..=T`.
    pub fn vertex(&self, v: usize, t: usize) -> &[f64] {
        self.features.row(v * self.windows + (t - 1))
    }
}

/// Kaiming-uniform (fan-in) conv kernels and zero biases.
pub fn init_backbone(cfg: &BackboneConfig, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let mut cin = 1;
    for (i, &cout) in cfg.channels.iter().enumerate() {
        let fan_in = cin * cfg.kernel * cfg.kernel;
        let bound = (6.0 / fan_in as f64).sqrt();
        let n = cout * fan_in;
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        let shape = vec![cout, cin, cfg.kernel, cfg.kernel];
        params.insert(
            BackboneConfig::weight_name(i),
            Tensor::new(shape, data).expect("shape matches"),
        );
        params.insert(BackboneConfig::bias_name(i), Tensor::zeros(&[cout]));
        cin = cout;
    }
    params
}

/// Stacks the frames of `volumes` into a `[V*T, 1, Y, X]` batch in vertex
/// order.
pub fn stack_frames(volumes: &[&NormalizedVolume]) -> Result<Tensor, BackboneError> {
    let first = volumes
        .first()
        .ok_or_else(|| BackboneError::Shape("no views".into()))?;
    let (w, h, t) = (first.width, first.height, first.windows);
    if let Some(bad) = volumes
        .iter()
        .find(|v| (v.width, v.height, v.windows) != (w, h, t))
    {
        return Err(BackboneError::Shape(format!(
            "view {}x{}x{} differs from {w}x{h}x{t}",
            bad.width, bad.height, bad.windows
        )));
    }
    let data: Vec<f64> = volumes.iter().flat_map(|v| v.values.iter().copied()).collect();
    Ok(Tensor::new(
        vec![volumes.len() * t, 1, h as usize, w as usize],
        data,
    )?)
}

/// Records the backbone on `tape`: `frames` is `[N, 1, Y, X]`, result `[N, d]`.
pub fn embed_on_tape(
    tape: &mut Tape,
    frames: Var,
    cfg: &BackboneConfig,
    bindings: &Bindings,
) -> Result<Var, BackboneError> {
    let shape = tape.value(frames).shape().to_vec();
    if shape.len() != 4 || shape[1] != 1 {
        return Err(BackboneError::Shape(format!(
            "expected [N, 1, Y, X] frames, got {shape:?}"
        )));
    }
    cfg.check_input(shape[3], shape[2])?;
    let mut x = frames;
    for block in 0..cfg.blocks() {
        let w = bindings.var(&BackboneConfig::weight_name(block))?;
        let b = bindings.var(&BackboneConfig::bias_name(block))?;
        x = tape.conv2d(x, w, b, cfg.spec())?;
        x = tape.relu(x);
    }
    Ok(tape.global_avg_pool(x)?)
}

/// Embeds every frame of every view with shared weights.
pub fn extract(
    volumes: &[&NormalizedVolume],
    cfg: &BackboneConfig,
    params: &ParamSet,
) -> Result<EmbeddingMatrix, BackboneError> {
    let stacked = stack_frames(volumes)?;
    let windows = volumes[0].windows;
    let mut tape = Tape::new();
    let bindings = Bindings::bind(params, &mut tape, false);
    let frames = tape.constant(stacked);
    let out = embed_on_tape(&mut tape, frames, cfg, &bindings)?;
    EmbeddingMatrix::new(volumes.len(), windows, tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> BackboneConfig {
        BackboneConfig {
            channels: vec![4, 6],
            ..BackboneConfig::default()
        }
    }

    fn volume(seed: u64, windows: usize) -> NormalizedVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NormalizedVolume {
            width: 8,
            height: 6,
            windows,
            values: (0..8 * 6 * windows).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = BackboneConfig::default();
        assert_eq!(init_backbone(&cfg, 7), init_backbone(&cfg, 7));
        assert_ne!(init_backbone(&cfg, 7), init_backbone(&cfg, 8));
        let p = init_backbone(&cfg, 7);
        assert!(p.get("backbone.conv3.bias").unwrap().data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn output_shape_and_vertex_order() {
        let cfg = small_cfg();
        let params = init_backbone(&cfg, 1);
        let (a, b) = (volume(1, 3), volume(2, 3));
        let emb = extract(&[&a, &b], &cfg, &params).unwrap();
        assert_eq!(emb.features.shape(), &[6, 6]);
        let only_b = extract(&[&b], &cfg, &params).unwrap();
        assert_eq!(emb.vertex(1, 2), only_b.vertex(0, 2));
    }

    #[test]
    fn identical_views_give_identical_rows() {
        let cfg = small_cfg();
        let params = init_backbone(&cfg, 3);
        let a = volume(5, 2);
        let emb = extract(&[&a, &a], &cfg, &params).unwrap();
        for t in 1..=2 {
            assert_eq!(emb.vertex(0, t), emb.vertex(1, t));
        }
    }

    #[test]
    fn zero_volume_rows_all_equal() {
        let cfg = small_cfg();
        let params = init_backbone(&cfg, 3);
        let z = NormalizedVolume {
            width: 8,
            height: 6,
            windows: 4,
            values: vec![0.0; 8 * 6 * 4],
        };
        let emb = extract(&[&z, &z, &z], &cfg, &params).unwrap();
        for i in 1..emb.vertex_count() {
            assert_eq!(emb.features.row(i), emb.features.row(0));
        }
    }

    #[test]
    fn mismatched_views_rejected() {
        let cfg = small_cfg();
        let params = init_backbone(&cfg, 3);
        assert!(matches!(
            extract(&[&volume(1, 3), &volume(2, 4)], &cfg, &params),
            Err(BackboneError::Shape(_))
        ));
    }

    #[test]
    fn too_small_input_rejected() {
        let cfg = BackboneConfig {
            padding: 0,
            ..BackboneConfig::default()
        };
        assert!(cfg.check_input(32, 32).is_ok());
        assert!(matches!(
            cfg.check_input(16, 32),
            Err(BackboneError::TooSmall { .. })
        ));
    }

    #[test]
    fn kaiming_variance() {
        // 10^4 draws from one 3x3 layer with 128 input channels
        let cfg = BackboneConfig {
            channels: vec![128, 9],
            ..BackboneConfig::default()
        };
        let p = init_backbone(&cfg, 11);
        let w = p.get("backbone.conv1.weight").unwrap();
        assert_eq!(w.len(), 10368);
        let fan_in = 128.0 * 9.0;
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let expected = 2.0 / fan_in;
        // var of a uniform sample variance estimate: relative sd ~ sqrt(0.8 / n)
        assert!((var / expected - 1.0).abs() < 0.05, "var {var} vs {expected}");
    }
}

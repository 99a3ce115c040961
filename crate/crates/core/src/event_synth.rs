//! Synthetic multi-view event recordings.
//!
//! An "actor" is a handful of Gaussian blobs moving on a parametric 3-D
//! trajectory. Each camera on a ring around the origin renders the blobs into
//! a log-intensity sequence (weak-perspective projection, no occlusion) and an
//! ideal event camera turns brightness changes into events: whenever the log
//! intensity of a pixel moves `theta` away from its reference level an event of
//! that sign fires and the reference moves by `theta` towards the new value.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_io::{write_events, Event, EventError, ViewStream};
use crate::pipeline::{PipelineError, RecordingManifest};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid rig: {0}")]
    Rig(String),
    #[error("invalid action: {0}")]
    Action(String),
    #[error("invalid camera parameters: {0}")]
    Camera(String),
    #[error("frame {index}: {msg}")]
    Frames { index: usize, msg: String },
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Output(#[from] Box<PipelineError>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewPose {
    /// Radians around the vertical axis.
    pub azimuth: f64,
    /// Distance from the origin in scene units.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub poses: Vec<ViewPose>,
    pub width: u32,
    pub height: u32,
    /// Pixels per scene unit at unit distance.
    pub focal: f64,
}

impl CameraRig {
    /// `views` cameras evenly spaced on a ring of radius `distance`.
    pub fn ring(views: usize, width: u32, height: u32) -> Result<Self, SynthError> {
        let poses = (0..views)
            .map(|v| ViewPose {
                azimuth: TAU * v as f64 / views as f64,
                distance: 1.0,
            })
            .collect();
        let rig = Self {
            poses,
            width,
            height,
            focal: 0.4 * width.min(height) as f64,
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn views(&self) -> usize {
        self.poses.len()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.poses.is_empty() {
            return Err(SynthError::Rig("need at least one view".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SynthError::Rig("zero resolution".into()));
        }
        for (i, a) in self.poses.iter().enumerate() {
            if a.distance <= 0.0 {
                return Err(SynthError::Rig(format!("view {i} has non-positive distance")));
            }
            for b in &self.poses[i + 1..] {
                if (a.azimuth - b.azimuth).rem_euclid(TAU) == 0.0 {
                    return Err(SynthError::Rig(format!(
                        "duplicate azimuth {}",
                        a.azimuth
                    )));
                }
            }
        }
        Ok(())
    }

    /// Pixel coordinates (continuous, pixel centres at `i + 0.5`) of a world
    /// point seen from `view`, and the pixels-per-unit scale of that view.
    fn project(&self, view: usize, p: [f64; 3]) -> (f64, f64, f64) {
        let pose = self.poses[view];
        let scale = self.focal / pose.distance;
        // camera on +x rotated by azimuth, looking at the origin
        let (s, c) = pose.azimuth.sin_cos();
        let right = -p[0] * s + p[2] * c;
        let x = self.width as f64 / 2.0 + scale * right;
        let y = self.height as f64 / 2.0 - scale * p[1];
        (x, y, scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryFamily {
    HorizontalCircle,
    VerticalOscillation,
    ExpandContract,
    Zigzag,
    SpinPair,
}

impl TrajectoryFamily {
    pub const ALL: [TrajectoryFamily; 5] = [
        TrajectoryFamily::HorizontalCircle,
        TrajectoryFamily::VerticalOscillation,
        TrajectoryFamily::ExpandContract,
        TrajectoryFamily::Zigzag,
        TrajectoryFamily::SpinPair,
    ];

    /// Highest oscillation frequency relative to the base speed.
    fn harmonic(self) -> f64 {
        match self {
            TrajectoryFamily::Zigzag => 3.0,
            _ => 1.0,
        }
    }

    fn default_speed(self) -> f64 {
        match self {
            TrajectoryFamily::HorizontalCircle => 0.8,
            TrajectoryFamily::VerticalOscillation => 1.0,
            TrajectoryFamily::ExpandContract => 0.9,
            TrajectoryFamily::Zigzag => 0.6,
            TrajectoryFamily::SpinPair => 1.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub class_id: usize,
    pub family: TrajectoryFamily,
    /// Cycles per second of the trajectory.
    pub base_speed: f64,
    pub duration_us: u64,
    pub frame_rate_hz: f64,
}

pub const DEFAULT_DURATION_US: u64 = 2_340_000;
pub const DEFAULT_FRAME_RATE_HZ: f64 = 200.0;

impl ActionSpec {
    /// Class `c` uses family `c % 5`; every further group of five classes
    /// moves 50% faster than the previous one.
    pub fn for_class(class_id: usize) -> Self {
        let family = TrajectoryFamily::ALL[class_id % 5];
        let tier = (class_id / 5) as f64;
        Self {
            class_id,
            family,
            base_speed: family.default_speed() * (1.0 + 0.5 * tier),
            duration_us: DEFAULT_DURATION_US,
            frame_rate_hz: DEFAULT_FRAME_RATE_HZ,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.duration_us == 0 {
            return Err(SynthError::Action("duration must be positive".into()));
        }
        let highest = self.base_speed.abs() * 1.15 * self.family.harmonic();
        if !(self.frame_rate_hz > 0.0 && self.frame_rate_hz >= 2.0 * highest) {
            return Err(SynthError::Action(format!(
                "frame rate {} Hz below twice the highest frequency {highest} Hz",
                self.frame_rate_hz
            )));
        }
        Ok(())
    }

    /// Timestamps of the rendered intensity frames, `0..=duration`.
    pub fn frame_times(&self) -> Vec<u64> {
        let period = 1e6 / self.frame_rate_hz;
        let count = (self.duration_us as f64 / period).floor() as u64;
        let mut times: Vec<u64> = (0..=count).map(|i| (i as f64 * period).round() as u64).collect();
        if *times.last().expect("at least one frame") < self.duration_us {
            times.push(self.duration_us);
        }
        times
    }
}

/// Seed from which a subject's body size, speed jitter, phase and offsets are
/// drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubjectSeed(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventCameraParams {
    /// Contrast threshold in log-intensity units.
    pub threshold: f64,
    pub refractory_us: u64,
    /// Log intensity of the empty background.
    pub floor_log_intensity: f64,
}

impl Default for EventCameraParams {
    fn default() -> Self {
        Self {
            threshold: 0.2,
            refractory_us: 100,
            floor_log_intensity: -2.0,
        }
    }
}

impl EventCameraParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(SynthError::Camera(format!(
                "threshold must be positive, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// One rendered log-intensity image, `height x width` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogFrame {
    pub t_us: u64,
    pub values: Vec<f64>,
}

/// Ideal event camera over a sequence of log-intensity frames.
///
/// Each pixel keeps a reference level initialised from the first frame. For
/// every later frame, each full `threshold` step between the reference and
/// the new value emits one event and moves the reference by `p * threshold`.
/// Events inside one frame gap get timestamps interpolated linearly between
/// the two frames. An event closer than the refractory period to the previous
/// event of its pixel is delayed to the end of that period, and if that falls
/// past the current frame the remaining crossings wait for the next one.
pub fn simulate_camera(
    frames: &[LogFrame],
    width: u32,
    height: u32,
    params: &EventCameraParams,
) -> Result<ViewStream, SynthError> {
    params.validate()?;
    let pixels = width as usize * height as usize;
    for (i, f) in frames.iter().enumerate() {
        if f.values.len() != pixels {
            return Err(SynthError::Frames {
                index: i,
                msg: format!("{} values for a {width}x{height} grid", f.values.len()),
            });
        }
        if i > 0 && f.t_us <= frames[i - 1].t_us {
            return Err(SynthError::Frames {
                index: i,
                msg: format!(
                    "timestamp {} not after {}",
                    f.t_us,
                    frames[i - 1].t_us
                ),
            });
        }
    }
    let (t_begin, t_end) = match (frames.first(), frames.last()) {
        (Some(a), Some(b)) => (a.t_us, b.t_us),
        _ => return Ok(ViewStream::empty(width, height)),
    };
    let theta = params.threshold;
    // crossings within floating-point noise of an exact multiple still count
    let tolerance = theta * 1e-9;
    let mut reference = frames[0].values.clone();
    let mut last_event: Vec<Option<u64>> = vec![None; pixels];
    let mut events = Vec::new();
    for pair in frames.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let gap = (cur.t_us - prev.t_us) as f64;
        for px in 0..pixels {
            let (l_prev, l_cur) = (prev.values[px], cur.values[px]);
            let r = &mut reference[px];
            let diff = l_cur - *r;
            if diff.abs() < theta - tolerance {
                continue;
            }
            let p: i8 = if diff > 0.0 { 1 } else { -1 };
            let step = p as f64 * theta;
            while (l_cur - *r) * p as f64 >= theta - tolerance {
                let level = *r + step;
                let frac = if l_cur != l_prev {
                    ((level - l_prev) / (l_cur - l_prev)).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let mut t = prev.t_us + (frac * gap).floor() as u64;
                if let Some(last) = last_event[px] {
                    t = t.max(last + params.refractory_us);
                    if t > cur.t_us {
                        break;
                    }
                }
                events.push(Event::new(
                    (px % width as usize) as u32,
                    (px / width as usize) as u32,
                    t,
                    p,
                ));
                last_event[px] = Some(t);
                *r += step;
            }
        }
    }
    events.sort_by_key(|e| e.t);
    Ok(ViewStream::new(width, height, events, t_begin, t_end)?)
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    position: [f64; 3],
    sigma: f64,
    amplitude: f64,
}

/// Per-subject variation of an action.
#[derive(Debug, Clone, Copy)]
struct Actor {
    size: f64,
    speed: f64,
    phase: f64,
    offset: [f64; 3],
    blobs: usize,
}

impl Actor {
    fn new(subject: SubjectSeed, spec: &ActionSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(subject.0);
        Self {
            size: rng.gen_range(0.8..1.2),
            speed: spec.base_speed * rng.gen_range(0.85..1.15),
            phase: rng.gen_range(0.0..TAU),
            offset: [
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
            ],
            blobs: rng.gen_range(1..=3),
        }
    }

    fn blobs_at(&self, family: TrajectoryFamily, seconds: f64) -> Vec<Blob> {
        let angle = self.phase + TAU * self.speed * seconds;
        let sigma = 0.12 * self.size;
        let o = self.offset;
        let at = |x: f64, y: f64, z: f64| Blob {
            position: [o[0] + x, o[1] + y, o[2] + z],
            sigma,
            amplitude: 1.0,
        };
        let n = self.blobs;
        match family {
            TrajectoryFamily::HorizontalCircle => (0..n)
                .map(|i| {
                    let a = angle + TAU * i as f64 / n as f64;
                    at(0.5 * a.cos(), 0.0, 0.5 * a.sin())
                })
                .collect(),
            TrajectoryFamily::VerticalOscillation => (0..n)
                .map(|i| {
                    let x = 0.3 * (i as f64 - (n - 1) as f64 / 2.0);
                    at(x, 0.5 * angle.sin(), -x)
                })
                .collect(),
            TrajectoryFamily::ExpandContract => {
                let r = 0.15 + 0.35 * 0.5 * (1.0 + angle.sin());
                let dirs = [
                    [1.0, 0.0, 0.0],
                    [-1.0, 0.0, 0.0],
                    [0.0, 1.0, 0.0],
                    [0.0, -1.0, 0.0],
                    [0.0, 0.0, 1.0],
                    [0.0, 0.0, -1.0],
                ];
                dirs.iter().map(|d| at(r * d[0], r * d[1], r * d[2])).collect()
            }
            TrajectoryFamily::Zigzag => {
                let tri = |a: f64| 2.0 / PI * a.sin().asin();
                let x = 0.55 * tri(angle);
                let y = 0.3 * tri(3.0 * angle);
                (0..n).map(|i| at(x, y - 0.25 * i as f64, x)).collect()
            }
            TrajectoryFamily::SpinPair => {
                let (s, c) = angle.sin_cos();
                vec![at(0.35 * c, 0.35 * s, 0.0), at(-0.35 * c, -0.35 * s, 0.0)]
            }
        }
    }
}

/// Renders the log-intensity image of `blobs` seen from `view`.
fn render_log_frame(rig: &CameraRig, view: usize, blobs: &[Blob], floor: f64) -> Vec<f64> {
    let (w, h) = (rig.width as usize, rig.height as usize);
    let mut intensity = vec![floor.exp(); w * h];
    for blob in blobs {
        let (cx, cy, scale) = rig.project(view, blob.position);
        let s = blob.sigma * scale;
        let inv = 1.0 / (2.0 * s * s);
        let reach = 4.0 * s;
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil().max(0.0) as usize).min(w);
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil().max(0.0) as usize).min(h);
        for y in y0..y1 {
            let dy = y as f64 + 0.5 - cy;
            for x in x0..x1 {
                let dx = x as f64 + 0.5 - cx;
                intensity[y * w + x] += blob.amplitude * (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    intensity.into_iter().map(f64::ln).collect()
}

/// The log-intensity sequence of one view.
pub fn render_view(
    spec: &ActionSpec,
    subject: SubjectSeed,
    rig: &CameraRig,
    view: usize,
    params: &EventCameraParams,
) -> Vec<LogFrame> {
    let actor = Actor::new(subject, spec);
    spec.frame_times()
        .into_iter()
        .map(|t_us| {
            let blobs = actor.blobs_at(spec.family, t_us as f64 * 1e-6);
            LogFrame {
                t_us,
                values: render_log_frame(rig, view, &blobs, params.floor_log_intensity),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecording {
    pub label: usize,
    pub subject: u64,
    pub streams: Vec<ViewStream>,
}

impl SyntheticRecording {
    pub fn recording_id(label: usize, subject: u64) -> String {
        format!("a{label:03}_s{subject:06}")
    }
}

pub fn synth_recording(
    spec: &ActionSpec,
    subject: SubjectSeed,
    rig: &CameraRig,
    params: &EventCameraParams,
) -> Result<SyntheticRecording, SynthError> {
    spec.validate()?;
    rig.validate()?;
    params.validate()?;
    let streams = (0..rig.views())
        .map(|v| {
            let frames = render_view(spec, subject, rig, v, params);
            let mut s = simulate_camera(&frames, rig.width, rig.height, params)?;
            s.t_begin = 0;
            s.t_end = spec.duration_us;
            Ok(s)
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    Ok(SyntheticRecording {
        label: spec.class_id,
        subject: subject.0,
        streams,
    })
}

/// Writes `classes x subjects` recordings under `out_dir`, one directory per
/// recording with a manifest and one EVT-CSV file per view.
pub fn synth_dataset(
    classes: usize,
    subjects: &[u64],
    rig: &CameraRig,
    params: &EventCameraParams,
    out_dir: &Path,
) -> Result<Vec<RecordingManifest>, SynthError> {
    if classes < 2 {
        return Err(SynthError::Action(format!("need at least 2 classes, got {classes}")));
    }
    let jobs: Vec<(usize, u64)> = (0..classes)
        .flat_map(|c| subjects.iter().map(move |&s| (c, s)))
        .collect();
    jobs.par_iter()
        .map(|&(class, subject)| {
            let spec = ActionSpec::for_class(class);
            let rec = synth_recording(&spec, SubjectSeed(subject), rig, params)?;
            write_recording(&rec, spec.duration_us, rig, out_dir)
        })
        .collect()
}

pub fn write_recording(
    rec: &SyntheticRecording,
    duration_us: u64,
    rig: &CameraRig,
    out_dir: &Path,
) -> Result<RecordingManifest, SynthError> {
    let manifest = RecordingManifest {
        recording_id: SyntheticRecording::recording_id(rec.label, rec.subject),
        label: rec.label,
        subject: rec.subject,
        views: rec.streams.len(),
        width: rig.width,
        height: rig.height,
        t_begin: 0,
        t_end: duration_us,
        view_files: (0..rec.streams.len())
            .map(RecordingManifest::view_file_name)
            .collect(),
    };
    manifest.save(out_dir).map_err(Box::new)?;
    let dir = manifest.dir(out_dir);
    for (stream, file) in rec.streams.iter().zip(&manifest.view_files) {
        write_events(stream, &dir.join(file))?;
    }
    Ok(manifest)
}

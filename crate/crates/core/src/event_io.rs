//! Event streams, the EVT-CSV on-disk format, temporal segmentation into
//! packets and signed event-frame rendering.
//!
//! An EVT-CSV file is UTF-8 text with the header `t_us,x,y,p` followed by one
//! `t,x,y,p` row of integers per event, LF terminated. Sensor resolution is not
//! stored in the file; callers pass it in (usually from a recording manifest).

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use thiserror::Error;

pub const EVT_CSV_HEADER: &str = "t_us,x,y,p";

#[derive(Debug, Error)]
pub enum EventError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: timestamp {t} precedes previous timestamp {prev}")]
    Ordering { line: usize, t: u64, prev: u64 },
    #[error("line {line}: pixel ({x}, {y}) outside {width}x{height} sensor")]
    Bounds {
        line: usize,
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
    #[error("line {line}: polarity must be -1 or +1, got {p}")]
    Polarity { line: usize, p: i64 },
    #[error("event at t={t} outside stream bounds [{t_begin}, {t_end}]")]
    OutOfWindow { t: u64, t_begin: u64, t_end: u64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// A single detection. `p` is -1 or +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u32,
    pub y: u32,
    pub t: u64,
    pub p: i8,
}

impl Event {
    pub fn new(x: u32, y: u32, t: u64, p: i8) -> Self {
        Self { x, y, t, p }
    }
}

/// Time-ordered events of one camera view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewStream {
    pub width: u32,
    pub height: u32,
    pub events: Vec<Event>,
    pub t_begin: u64,
    pub t_end: u64,
}

impl ViewStream {
    /// Builds a stream and checks every invariant: polarity, bounds, ordering
    /// and the `[t_begin, t_end]` window.
    pub fn new(
        width: u32,
        height: u32,
        events: Vec<Event>,
        t_begin: u64,
        t_end: u64,
    ) -> Result<Self, EventError> {
        if t_end < t_begin {
            return Err(EventError::Parameter(format!(
                "t_end {t_end} < t_begin {t_begin}"
            )));
        }
        let mut prev = None;
        for (i, e) in events.iter().enumerate() {
            let line = i + 2;
            check_event(e, width, height, line)?;
            if let Some(prev) = prev {
                if e.t < prev {
                    return Err(EventError::Ordering { line, t: e.t, prev });
                }
            }
            if e.t < t_begin || e.t > t_end {
                return Err(EventError::OutOfWindow {
                    t: e.t,
                    t_begin,
                    t_end,
                });
            }
            prev = Some(e.t);
        }
        Ok(Self {
            width,
            height,
            events,
            t_begin,
            t_end,
        })
    }

    /// Stream whose bounds are the first and last event timestamps (0 and 0 when
    /// empty).
    pub fn with_tight_bounds(
        width: u32,
        height: u32,
        events: Vec<Event>,
    ) -> Result<Self, EventError> {
        let t_begin = events.first().map_or(0, |e| e.t);
        let t_end = events.last().map_or(0, |e| e.t);
        Self::new(width, height, events, t_begin.min(t_end), t_end)
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            events: Vec::new(),
            t_begin: 0,
            t_end: 0,
        }
    }

    pub fn polarity_sum(&self) -> i64 {
        self.events.iter().map(|e| e.p as i64).sum()
    }
}

fn check_event(e: &Event, width: u32, height: u32, line: usize) -> Result<(), EventError> {
    if e.p != 1 && e.p != -1 {
        return Err(EventError::Polarity {
            line,
            p: e.p as i64,
        });
    }
    if e.x >= width || e.y >= height {
        return Err(EventError::Bounds {
            line,
            x: e.x,
            y: e.y,
            width,
            height,
        });
    }
    Ok(())
}

/// Reads an EVT-CSV file. Stream bounds are the first and last timestamps.
pub fn read_events(path: &Path, width: u32, height: u32) -> Result<ViewStream, EventError> {
    read_events_with_bounds(path, width, height, None)
}

/// Reads an EVT-CSV file, taking `[t_begin, t_end]` from `bounds` when given
/// (manifests record them) or from the event extent otherwise.
pub fn read_events_with_bounds(
    path: &Path,
    width: u32,
    height: u32,
    bounds: Option<(u64, u64)>,
) -> Result<ViewStream, EventError> {
    let io_err = |source| EventError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut prev: Option<u64> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err)?;
        if idx == 0 {
            if line != EVT_CSV_HEADER {
                return Err(EventError::Parse {
                    line: 1,
                    msg: format!("expected header `{EVT_CSV_HEADER}`, found `{line}`"),
                });
            }
            continue;
        }
        let event = parse_row(&line, line_no)?;
        check_event(&event, width, height, line_no)?;
        if let Some(prev) = prev {
            if event.t < prev {
                return Err(EventError::Ordering {
                    line: line_no,
                    t: event.t,
                    prev,
                });
            }
        }
        prev = Some(event.t);
        events.push(event);
    }
    match bounds {
        Some((t_begin, t_end)) => ViewStream::new(width, height, events, t_begin, t_end),
        None => ViewStream::with_tight_bounds(width, height, events),
    }
}

fn parse_row(line: &str, line_no: usize) -> Result<Event, EventError> {
    let parse_err = |msg: String| EventError::Parse { line: line_no, msg };
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 4 {
        return Err(parse_err(format!(
            "expected 4 comma-separated fields, found {}",
            fields.len()
        )));
    }
    let t: u64 = fields[0]
        .parse()
        .map_err(|_| parse_err(format!("bad timestamp `{}`", fields[0])))?;
    let x: u32 = fields[1]
        .parse()
        .map_err(|_| parse_err(format!("bad x `{}`", fields[1])))?;
    let y: u32 = fields[2]
        .parse()
        .map_err(|_| parse_err(format!("bad y `{}`", fields[2])))?;
    let p: i64 = fields[3]
        .parse()
        .map_err(|_| parse_err(format!("bad polarity `{}`", fields[3])))?;
    if p != 1 && p != -1 {
        return Err(EventError::Polarity { line: line_no, p });
    }
    Ok(Event::new(x, y, t, p as i8))
}

/// Serializes a stream in EVT-CSV form.
pub fn format_events(stream: &ViewStream) -> String {
    let mut out = String::with_capacity(16 * (stream.events.len() + 1));
    out.push_str(EVT_CSV_HEADER);
    out.push('\n');
    for e in &stream.events {
        let _ = writeln!(out, "{},{},{},{}", e.t, e.x, e.y, e.p);
    }
    out
}

pub fn write_events(stream: &ViewStream, path: &Path) -> Result<(), EventError> {
    fs::write(path, format_events(stream)).map_err(|source| EventError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Events of one time window; `index` runs from 1 to T.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventPacket {
    pub index: usize,
    pub events: Vec<Event>,
}

impl EventPacket {
    pub fn polarity_sum(&self) -> i64 {
        self.events.iter().map(|e| e.p as i64).sum()
    }
}

/// Zero-based window of timestamp `t` among `windows` equal slices of
/// `[t_begin, t_end]`. Slices are half-open except the last, which also takes
/// `t_end`. A zero-length span maps everything to window 0.
pub fn window_of(t: u64, t_begin: u64, t_end: u64, windows: usize) -> usize {
    let span = t_end.saturating_sub(t_begin) as u128;
    if span == 0 {
        return 0;
    }
    let offset = t.saturating_sub(t_begin) as u128;
    let idx = offset * windows as u128 / span;
    (idx as usize).min(windows - 1)
}

/// Splits a stream into `windows` packets covering `[t_begin, t_end]`.
pub fn segment(stream: &ViewStream, windows: usize) -> Result<Vec<EventPacket>, EventError> {
    if windows == 0 {
        return Err(EventError::Parameter("window count T must be >= 1".into()));
    }
    let mut packets: Vec<EventPacket> = (1..=windows)
        .map(|index| EventPacket {
            index,
            events: Vec::new(),
        })
        .collect();
    for e in &stream.events {
        let w = window_of(e.t, stream.t_begin, stream.t_end, windows);
        packets[w].events.push(*e);
    }
    Ok(packets)
}

/// A `height x width` grid of signed polarity sums, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventFrame {
    pub width: u32,
    pub height: u32,
    pub values: Vec<i32>,
}

impl EventFrame {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            values: vec![0; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> i32 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn sum(&self) -> i64 {
        self.values.iter().map(|&v| v as i64).sum()
    }
}

pub fn render_frame(
    packet: &EventPacket,
    width: u32,
    height: u32,
) -> Result<EventFrame, EventError> {
    let mut frame = EventFrame::zeros(width, height);
    for (i, e) in packet.events.iter().enumerate() {
        check_event(e, width, height, i + 2)?;
        frame.values[e.y as usize * width as usize + e.x as usize] += e.p as i32;
    }
    Ok(frame)
}

/// The T event frames of one view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameVolume {
    pub width: u32,
    pub height: u32,
    pub frames: Vec<EventFrame>,
}

impl FrameVolume {
    pub fn windows(&self) -> usize {
        self.frames.len()
    }

    pub fn max_abs(&self) -> i32 {
        self.frames
            .iter()
            .flat_map(|f| f.values.iter())
            .map(|v| v.abs())
            .max()
            .unwrap_or(0)
    }
}

pub fn render_volume(
    stream: &ViewStream,
    windows: usize,
    width: u32,
    height: u32,
) -> Result<FrameVolume, EventError> {
    let frames = segment(stream, windows)?
        .iter()
        .map(|p| render_frame(p, width, height))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FrameVolume {
        width,
        height,
        frames,
    })
}

/// Real-valued frames scaled into `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedVolume {
    pub width: u32,
    pub height: u32,
    pub windows: usize,
    /// `windows * height * width` values, frame-major then row-major.
    pub values: Vec<f64>,
}

impl NormalizedVolume {
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.width as usize * self.height as usize;
        &self.values[t * n..(t + 1) * n]
    }
}

/// Divides every entry by the volume's max absolute value. All-zero volumes
/// stay zero.
pub fn normalize_volume(vol: &FrameVolume) -> NormalizedVolume {
    let max = vol.max_abs();
    let scale = if max == 0 { 1.0 } else { 1.0 / max as f64 };
    let values = vol
        .frames
        .iter()
        .flat_map(|f| f.values.iter())
        .map(|&v| if max == 0 { 0.0 } else { v as f64 * scale })
        .collect();
    NormalizedVolume {
        width: vol.width,
        height: vol.height,
        windows: vol.frames.len(),
        values,
    }
}

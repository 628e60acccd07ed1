//! Loading and storing frame series, feature series and ECG traces, plus
//! detection of the contrast-visible part of a video.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ecg::EcgTrace;
use crate::embedding::FeatureSeries;
use crate::error::{Error, Result};
use crate::Scalar;

/// File name of the JSON descriptor stored next to frames and ECG.
pub const DESCRIPTOR_FILE: &str = "descriptor.json";
/// File name of the ECG trace inside a video directory.
pub const ECG_FILE: &str = "ecg.csv";

/// One grayscale frame, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Frame<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidFrames("frame has zero size".into()));
        }
        if data.len() != height * width {
            return Err(Error::InvalidFrames(format!(
                "{}x{} frame holds {} values",
                height,
                width,
                data.len()
            )));
        }
        if let Some(bad) = data
            .iter()
            .position(|v| !v.is_finite() || *v < T::zero() || *v > T::one())
        {
            return Err(Error::InvalidFrames(format!(
                "intensity {} at pixel {} is outside [0, 1]",
                data[bad], bad
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }
}

/// The frames of one video plus timing metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries<T> {
    frames: Vec<Frame<T>>,
    fps: f64,
    video_id: String,
}

impl<T: Scalar> FrameSeries<T> {
    pub fn new(frames: Vec<Frame<T>>, fps: f64, video_id: impl Into<String>) -> Result<Self> {
        if frames.len() < 3 {
            return Err(Error::TooFewFrames {
                needed: 3,
                got: frames.len(),
            });
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidParameter(format!("fps must be positive, got {fps}")));
        }
        let shape = frames[0].shape();
        if let Some(t) = frames.iter().position(|f| f.shape() != shape) {
            return Err(Error::InvalidFrames(format!(
                "frame {t} is {:?}, frame 0 is {:?}",
                frames[t].shape(),
                shape
            )));
        }
        Ok(Self {
            frames,
            fps,
            video_id: video_id.into(),
        })
    }

    pub fn frames(&self) -> &[Frame<T>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn frame_shape(&self) -> (usize, usize) {
        self.frames[0].shape()
    }
}

/// Half-open frame range `[start, end)` in which contrast agent is visible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastWindow {
    pub start: usize,
    pub end: usize,
}

impl ContrastWindow {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if end < start + 3 {
            return Err(Error::WindowTooShort { start, end });
        }
        Ok(Self { start, end })
    }

    /// Covers the whole video.
    pub fn full(frame_count: usize) -> Result<Self> {
        Self::new(0, frame_count)
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Mean absolute per-pixel difference to the previous frame; `g[0] = 0`.
pub fn temporal_gradient<T: Scalar>(video: &FrameSeries<T>) -> Vec<T> {
    let frames = video.frames();
    let mut g = Vec::with_capacity(frames.len());
    g.push(T::zero());
    for pair in frames.windows(2) {
        let n = T::of(pair[1].data.len() as f64);
        let total: T = pair[1]
            .data
            .iter()
            .zip(&pair[0].data)
            .map(|(a, b)| (*a - *b).abs())
            .sum();
        g.push(total / n);
    }
    g
}

/// Window from the first frame whose temporal gradient exceeds the video
/// average to the first later frame where it drops below it again.
pub fn extract_contrast_window<T: Scalar>(video: &FrameSeries<T>) -> Result<ContrastWindow> {
    if video.len() < 4 {
        return Err(Error::TooFewFrames {
            needed: 4,
            got: video.len(),
        });
    }
    let g = temporal_gradient(video);
    if g.iter().all(|v| v.is_zero()) {
        return Err(Error::SignalFlat);
    }
    let mean = g.iter().copied().sum::<T>() / T::of(g.len() as f64);
    // g is not identically zero, so some entry exceeds its mean.
    let start = g.iter().position(|v| *v > mean).ok_or(Error::SignalFlat)?;
    let end = g[start + 1..]
        .iter()
        .position(|v| *v < mean)
        .map_or(g.len(), |off| start + 1 + off);
    ContrastWindow::new(start, end)
}

/// Sidecar metadata for a video directory or an ECG file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ecg_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame0_time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<String>,
}

impl Descriptor {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Flat numeric text format shared by features, matrices and weights.

pub(crate) fn write_row<T: Scalar, W: Write>(out: &mut W, row: &[T]) -> std::io::Result<()> {
    let mut first = true;
    for v in row {
        if !first {
            out.write_all(b" ")?;
        }
        first = false;
        write!(out, "{}", v.as_f64() as f32)?;
    }
    out.write_all(b"\n")
}

pub(crate) fn parse_row<T: Scalar>(
    line: &str,
    line_no: usize,
    expected: usize,
    allow_nan: bool,
) -> Result<Vec<T>> {
    let mut row = Vec::with_capacity(expected);
    for token in line.split_ascii_whitespace() {
        let v: f32 = token.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("cannot parse {token:?} as a number"),
        })?;
        if v.is_infinite() || (v.is_nan() && !allow_nan) {
            return Err(Error::NonFinite { line: line_no });
        }
        row.push(T::of(v as f64));
    }
    if row.len() != expected {
        return Err(Error::DimensionMismatch {
            line: line_no,
            expected,
            found: row.len(),
        });
    }
    Ok(row)
}

pub(crate) fn parse_count(token: Option<&str>, what: &str, header: &str) -> Result<usize> {
    token
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::MalformedHeader(format!("missing or invalid {what} in {header:?}")))
}

/// Non-empty lines with their 1-based line numbers.
pub(crate) fn numbered_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push((idx + 1, line));
        }
    }
    Ok(lines)
}

/// Writes `CSFEAT v1 <count> <dim>` followed by one vector per line.
pub fn store_feature_series<T: Scalar>(series: &FeatureSeries<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "CSFEAT v1 {} {}", series.len(), series.dim())?;
    for v in series.vectors() {
        write_row(&mut out, v)?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_feature_series<T: Scalar>(path: impl AsRef<Path>) -> Result<FeatureSeries<T>> {
    let lines = numbered_lines(path.as_ref())?;
    let (_, header) = lines
        .first()
        .ok_or_else(|| Error::MalformedHeader("empty feature file".into()))?;
    let mut tokens = header.split_ascii_whitespace();
    if tokens.next() != Some("CSFEAT") || tokens.next() != Some("v1") {
        return Err(Error::MalformedHeader(format!("expected `CSFEAT v1`, got {header:?}")));
    }
    let count = parse_count(tokens.next(), "count", header)?;
    let dim = parse_count(tokens.next(), "dim", header)?;
    if tokens.next().is_some() {
        return Err(Error::MalformedHeader(format!("trailing tokens in {header:?}")));
    }
    if lines.len() - 1 != count {
        return Err(Error::MalformedHeader(format!(
            "header declares {count} vectors, file holds {}",
            lines.len() - 1
        )));
    }
    let vectors = lines[1..]
        .iter()
        .map(|(no, line)| parse_row(line, *no, dim, false))
        .collect::<Result<Vec<_>>>()?;
    FeatureSeries::new(vectors, dim, 0)
}

/// Loads a `time_s,voltage` CSV. `ecg_hz` must come from `meta`; `fps`
/// defaults to 1 and `frame0_time_s` to 0 when absent.
pub fn load_ecg<T: Scalar>(path: impl AsRef<Path>, meta: &Descriptor) -> Result<EcgTrace<T>> {
    let ecg_hz = meta.ecg_hz.ok_or(Error::MissingSamplingRate)?;
    let lines = numbered_lines(path.as_ref())?;
    let (_, header) = lines
        .first()
        .ok_or_else(|| Error::MalformedHeader("empty ECG file".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns != ["time_s", "voltage"] {
        return Err(Error::MalformedHeader(format!(
            "expected `time_s,voltage`, got {header:?}"
        )));
    }
    let mut samples = Vec::with_capacity(lines.len() - 1);
    let mut last_time = f64::NEG_INFINITY;
    for (row, (no, line)) in lines[1..].iter().enumerate() {
        let mut fields = line.split(',').map(str::trim);
        let (Some(t), Some(v), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Parse {
                line: *no,
                message: "expected two comma-separated columns".into(),
            });
        };
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line: *no,
                message: format!("cannot parse {s:?} as a number"),
            })
        };
        let (t, v) = (parse(t)?, parse(v)?);
        if !t.is_finite() || !v.is_finite() {
            return Err(Error::NonFinite { line: *no });
        }
        if t <= last_time {
            return Err(Error::NonMonotoneTimestamps { row });
        }
        last_time = t;
        samples.push(T::of(v));
    }
    EcgTrace::new(
        samples,
        ecg_hz,
        meta.frame0_time_s.unwrap_or(0.0),
        meta.fps.unwrap_or(1.0),
    )
}

/// Writes the trace as `time_s,voltage` with times `index / ecg_hz`.
pub fn store_ecg<T: Scalar>(trace: &EcgTrace<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "time_s,voltage")?;
    for (i, v) in trace.samples().iter().enumerate() {
        writeln!(out, "{},{}", i as f64 / trace.ecg_hz(), v.as_f64())?;
    }
    out.flush()?;
    Ok(())
}

fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:05}.pgm"))
}

/// Writes 8-bit `frame_%05d.pgm` files plus the descriptor into `dir`.
pub fn store_frame_dir<T: Scalar>(
    video: &FrameSeries<T>,
    descriptor: &Descriptor,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (h, w) = video.frame_shape();
    for (t, frame) in video.frames().iter().enumerate() {
        let bytes = frame
            .data()
            .iter()
            .map(|v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let img = image::GrayImage::from_raw(w as u32, h as u32, bytes)
            .expect("buffer size matches frame shape");
        img.save_with_format(frame_path(dir, t), image::ImageFormat::Pnm)?;
    }
    descriptor.store(dir.join(DESCRIPTOR_FILE))
}

/// Loads consecutive `frame_%05d.pgm` files starting at index 0, normalizing
/// intensities by the bit depth, together with the directory's descriptor.
pub fn load_frame_dir<T: Scalar>(dir: impl AsRef<Path>) -> Result<(FrameSeries<T>, Descriptor)> {
    let dir = dir.as_ref();
    let descriptor = Descriptor::load(dir.join(DESCRIPTOR_FILE))?;
    let fps = descriptor
        .fps
        .ok_or_else(|| Error::InvalidParameter(format!("{} lacks fps", dir.display())))?;
    let mut frames = Vec::new();
    loop {
        let path = frame_path(dir, frames.len());
        if !path.exists() {
            break;
        }
        let img = image::open(&path)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data: Vec<T> = match img {
            image::DynamicImage::ImageLuma8(buf) => {
                buf.into_raw().into_iter().map(|v| T::of(v as f64 / 255.0)).collect()
            }
            other => other
                .into_luma16()
                .into_raw()
                .into_iter()
                .map(|v| T::of(v as f64 / 65535.0))
                .collect(),
        };
        frames.push(Frame::new(h, w, data)?);
    }
    let video_id = descriptor.video_id.clone().unwrap_or_else(|| {
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    Ok((FrameSeries::new(frames, fps, video_id)?, descriptor))
}

/// Directories below `root` (including `root`) that carry a descriptor,
/// in sorted path order.
pub fn discover_video_dirs(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        if entry.file_type().is_file() && entry.file_name() == DESCRIPTOR_FILE {
            if let Some(parent) = entry.path().parent() {
                dirs.push(parent.to_path_buf());
            }
        }
    }
    Ok(dirs)
}

//! Synthetic cyclic videos with exact cardiac phase and a matching ECG.
//!
//! A bright disc orbits the frame once per heartbeat and a few thin curves,
//! whose control points circle with the same phase, give each view its own
//! texture. Content appears at a contrast onset and stays visible to the
//! end. The ECG is a sum of Gaussian P, R and T bumps per beat.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ecg::{EcgTrace, PeakList};
use crate::error::{Error, Result};
use crate::ingest::{extract_contrast_window, store_ecg, store_frame_dir, Descriptor, Frame, FrameSeries, ECG_FILE};
use crate::phase::{compute_phase, PhaseTrack};
use crate::training::TrainVideo;
use crate::Scalar;

pub const TRUTH_FILE: &str = "truth.json";

/// R-wave amplitude; ECG noise is specified relative to it.
pub const R_AMPLITUDE: f64 = 1.0;
const R_SIGMA_S: f64 = 0.035;
const P_AMPLITUDE: f64 = 0.1;
const P_SIGMA_S: f64 = 0.025;
const P_LEAD_S: f64 = 0.16;
const T_AMPLITUDE: f64 = 0.1;
const T_SIGMA_S: f64 = 0.04;

const BACKGROUND: f64 = 0.15;
const DISC_INTENSITY: f64 = 0.8;
const DISC_RADIUS: f64 = 0.25;
const ORBIT_RADIUS: f64 = 0.25;
const VESSEL_INTENSITY: f64 = 0.35;
const VESSEL_COUNT: usize = 3;

/// Parameters of one synthetic view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub hr_bpm: f64,
    pub fps: f64,
    pub duration_s: f64,
    /// Frames are `frame_size x frame_size`.
    pub frame_size: usize,
    pub texture_seed: u64,
    /// Gaussian pixel noise.
    pub noise_sigma: f64,
    pub ecg_hz: f64,
    /// ECG noise as a fraction of the R amplitude.
    pub ecg_noise: f64,
    /// Fraction of the clip before the contrast agent shows.
    pub contrast_onset: f64,
}

impl Default for ViewSpec {
    fn default() -> Self {
        Self {
            hr_bpm: 75.0,
            fps: 30.0,
            duration_s: 8.0,
            frame_size: 32,
            texture_seed: 0,
            noise_sigma: 0.0,
            ecg_hz: 500.0,
            ecg_noise: 0.05,
            contrast_onset: 0.4,
        }
    }
}

impl ViewSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(30.0..=240.0).contains(&self.hr_bpm) {
            return bad(format!("heart rate {} bpm outside [30, 240]", self.hr_bpm));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if !(self.ecg_hz.is_finite() && self.ecg_hz > 0.0) {
            return bad(format!("ecg_hz must be positive, got {}", self.ecg_hz));
        }
        if !(self.duration_s.is_finite() && self.duration_s * self.hr_bpm / 60.0 >= 2.0) {
            return bad(format!("{} s holds fewer than 2 cycles at {} bpm", self.duration_s, self.hr_bpm));
        }
        if self.frame_size < 4 {
            return bad(format!("frame size must be at least 4, got {}", self.frame_size));
        }
        if !(self.noise_sigma >= 0.0 && self.ecg_noise >= 0.0) {
            return bad("noise levels must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.contrast_onset) {
            return bad(format!("contrast onset must lie in [0, 1), got {}", self.contrast_onset));
        }
        if self.frame_count() < 4 {
            return bad("clip is shorter than 4 frames".into());
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    /// Frames per cardiac cycle.
    pub fn period_frames(&self) -> f64 {
        60.0 * self.fps / self.hr_bpm
    }

    pub fn onset_frame(&self) -> usize {
        (self.contrast_onset * self.frame_count() as f64).floor() as usize
    }

    /// R-peak times in seconds from `first` beat to `last` beat inclusive.
    fn beat_times(&self, first: i64, last: i64) -> Vec<f64> {
        let rr = 60.0 / self.hr_bpm;
        (first..=last).map(|k| k as f64 * rr).collect()
    }
}

/// One generated view with its exact ground truth.
#[derive(Debug, Clone)]
pub struct SynthView<T> {
    pub spec: ViewSpec,
    pub frames: FrameSeries<T>,
    pub ecg: EcgTrace<T>,
    /// True R-peaks inside the clip, in frame units.
    pub peaks: PeakList<T>,
    /// Exact phase of every frame.
    pub phases: PhaseTrack<T>,
    pub patient_id: String,
}

/// Ground truth written next to a generated view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewTruth {
    pub spec: ViewSpec,
    pub peaks_frames: Vec<f64>,
    /// R-peak times in seconds on the ECG clock.
    pub peaks_s: Vec<f64>,
    pub phases: Vec<f64>,
    pub contrast_onset_frame: usize,
}

#[derive(Debug, Clone)]
struct Curve {
    /// Rest positions of the three control points.
    rest: [(f64, f64); 3],
    /// Orbit radius of each control point.
    axes: [f64; 3],
    offset: [f64; 3],
}

impl Curve {
    fn random<R: Rng>(rng: &mut R) -> Self {
        let mut point = || (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
        let rest = [point(), point(), point()];
        let mut axis = || rng.random_range(0.04..0.1);
        let axes = [axis(), axis(), axis()];
        let offset = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        Self { rest, axes, offset }
    }

    /// Sampled quadratic Bezier at phase `phi`.
    fn polyline(&self, phi: f64) -> Vec<(f64, f64)> {
        let ctrl: Vec<(f64, f64)> = (0..3)
            .map(|k| {
                let a = 2.0 * PI * (phi + self.offset[k]);
                (
                    self.rest[k].0 + self.axes[k] * a.cos(),
                    self.rest[k].1 + self.axes[k] * a.sin(),
                )
            })
            .collect();
        (0..=24)
            .map(|s| {
                let u = s as f64 / 24.0;
                let (a, b, c) = ((1.0 - u) * (1.0 - u), 2.0 * u * (1.0 - u), u * u);
                (
                    a * ctrl[0].0 + b * ctrl[1].0 + c * ctrl[2].0,
                    a * ctrl[0].1 + b * ctrl[1].1 + c * ctrl[2].1,
                )
            })
            .collect()
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let u = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p.0 - a.0 - u * dx).powi(2) + (p.1 - a.1 - u * dy).powi(2)).sqrt()
}

/// Pixel values in `[0, 1]` of the noiseless frame at phase `phi`, with
/// `visible` scaling the contrast-filled content.
fn render(size: usize, phi: f64, visible: f64, background: &[f64], curves: &[Curve]) -> Vec<f64> {
    let s = size as f64;
    let a = 2.0 * PI * phi;
    let center = ((0.5 + ORBIT_RADIUS * a.cos()) * s, (0.5 + ORBIT_RADIUS * a.sin()) * s);
    let radius = DISC_RADIUS * s;
    let lines: Vec<Vec<(f64, f64)>> = curves
        .iter()
        .map(|c| c.polyline(phi).into_iter().map(|(x, y)| (x * s, y * s)).collect())
        .collect();
    let half_width = (0.03 * s).max(0.6);

    let mut out = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let p = (c as f64 + 0.5, r as f64 + 0.5);
            let d = ((p.0 - center.0).powi(2) + (p.1 - center.1).powi(2)).sqrt();
            // One-pixel linear ramp at the edge keeps motion smooth.
            let disc = (radius - d + 0.5).clamp(0.0, 1.0);
            let vessel = lines
                .iter()
                .map(|l| {
                    let dist = l
                        .windows(2)
                        .map(|w| segment_distance(p, w[0], w[1]))
                        .fold(f64::INFINITY, f64::min);
                    (half_width - dist + 0.5).clamp(0.0, 1.0)
                })
                .fold(0.0, f64::max);
            let content = DISC_INTENSITY * disc + VESSEL_INTENSITY * vessel;
            out.push(background[r * size + c] + visible * content);
        }
    }
    out
}

fn background<R: Rng>(size: usize, rng: &mut R) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.random_range(0.5..2.5), rng.random_range(0.5..2.5), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let s = size as f64;
    (0..size * size)
        .map(|k| {
            let (y, x) = ((k / size) as f64 / s, (k % size) as f64 / s);
            let ripple: f64 = waves
                .iter()
                .map(|(fx, fy, ph)| (2.0 * PI * (fx * x + fy * y) + ph).cos())
                .sum();
            BACKGROUND + 0.01 * ripple
        })
        .collect()
}

/// Synthetic ECG sampled over the clip, time 0 at frame 0.
fn ecg_samples<R: Rng>(spec: &ViewSpec, rng: &mut R) -> Vec<f64> {
    let n = (spec.duration_s * spec.ecg_hz).round() as usize;
    let rr = 60.0 / spec.hr_bpm;
    let beats = spec.beat_times(-1, (spec.duration_s / rr).ceil() as i64 + 1);
    let t_delay = 0.24 * rr.sqrt();
    let bump = |t: f64, at: f64, sigma: f64| (-0.5 * ((t - at) / sigma).powi(2)).exp();
    let noise = Normal::new(0.0, spec.ecg_noise * R_AMPLITUDE).expect("noise validated");
    (0..n)
        .map(|i| {
            let t = i as f64 / spec.ecg_hz;
            let clean: f64 = beats
                .iter()
                .map(|&b| {
                    R_AMPLITUDE * bump(t, b, R_SIGMA_S)
                        + P_AMPLITUDE * bump(t, b - P_LEAD_S, P_SIGMA_S)
                        + T_AMPLITUDE * bump(t, b + t_delay, T_SIGMA_S)
                })
                .sum();
            clean + noise.sample(rng)
        })
        .collect()
}

/// Renders one view. Phase is `frac(t * hr / (60 fps))`, so an R-peak falls
/// on frame 0.
pub fn generate_view<T: Scalar>(spec: &ViewSpec) -> Result<SynthView<T>> {
    spec.validate()?;
    let n = spec.frame_count();
    let period = spec.period_frames();

    // One peak past the clip so the last frames have an enclosing pair.
    let last_beat = (n as f64 / period).floor() as i64 + 1;
    let all_peaks: Vec<T> = (0..=last_beat).map(|k| T::of(k as f64 * period)).collect();
    let inside: Vec<T> = all_peaks.iter().copied().filter(|p| p.as_f64() < n as f64).collect();
    let phases = compute_phase(&PeakList::new(all_peaks)?, n)?;
    let peaks = PeakList::new(inside)?;

    let mut texture_rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    let bg = background(spec.frame_size, &mut texture_rng);
    let curves: Vec<Curve> = (0..VESSEL_COUNT).map(|_| Curve::random(&mut texture_rng)).collect();

    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    noise_rng.set_stream(1);
    let pixel_noise = Normal::new(0.0, spec.noise_sigma).expect("noise validated");
    let onset = spec.onset_frame();
    let frames = (0..n)
        .map(|t| {
            let phi = phases.get(t).expect("every frame is enclosed").as_f64();
            let visible = if t >= onset { 1.0 } else { 0.0 };
            let data = render(spec.frame_size, phi, visible, &bg, &curves)
                .into_iter()
                .map(|v| {
                    let v = if spec.noise_sigma > 0.0 {
                        v + pixel_noise.sample(&mut noise_rng)
                    } else {
                        v
                    };
                    T::of(v.clamp(0.0, 1.0))
                })
                .collect();
            Frame::new(spec.frame_size, spec.frame_size, data)
        })
        .collect::<Result<Vec<_>>>()?;
    let frames = FrameSeries::new(frames, spec.fps, format!("synth-{}", spec.texture_seed))?;

    let mut ecg_rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    ecg_rng.set_stream(2);
    let samples = ecg_samples(spec, &mut ecg_rng).into_iter().map(T::of).collect();
    let ecg = EcgTrace::new(samples, spec.ecg_hz, 0.0, spec.fps)?;

    Ok(SynthView {
        spec: spec.clone(),
        frames,
        ecg,
        peaks,
        phases,
        patient_id: format!("patient-{}", spec.texture_seed),
    })
}

/// Two-view acquisition settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    pub hr_a: f64,
    pub hr_b: f64,
    pub fps_a: f64,
    pub fps_b: f64,
    pub duration_s: f64,
    pub frame_size: usize,
    pub seed_a: u64,
    pub seed_b: u64,
    pub noise_sigma: f64,
    /// Simultaneous acquisition: view B shares view A's heart rate and frame
    /// rate, hence its phase track.
    pub biplane: bool,
}

impl Default for PairSpec {
    fn default() -> Self {
        Self {
            hr_a: 70.0,
            hr_b: 85.0,
            fps_a: 30.0,
            fps_b: 30.0,
            duration_s: 8.0,
            frame_size: 32,
            seed_a: 1,
            seed_b: 2,
            noise_sigma: 0.0,
            biplane: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthPair<T> {
    pub a: SynthView<T>,
    pub b: SynthView<T>,
}

pub fn generate_pair<T: Scalar>(spec: &PairSpec) -> Result<SynthPair<T>> {
    let view = |hr_bpm, fps, texture_seed| ViewSpec {
        hr_bpm,
        fps,
        duration_s: spec.duration_s,
        frame_size: spec.frame_size,
        texture_seed,
        noise_sigma: spec.noise_sigma,
        ..ViewSpec::default()
    };
    let a = view(spec.hr_a, spec.fps_a, spec.seed_a);
    let b = if spec.biplane {
        view(spec.hr_a, spec.fps_a, spec.seed_b)
    } else {
        view(spec.hr_b, spec.fps_b, spec.seed_b)
    };
    let (a, b) = rayon::join(|| generate_view(&a), || generate_view(&b));
    let (mut a, mut b) = (a?, b?);
    if spec.biplane {
        let patient = format!("patient-{}", spec.seed_a);
        a.patient_id.clone_from(&patient);
        b.patient_id = patient;
    }
    Ok(SynthPair { a, b })
}

/// `count` views for training: heart rates spread over 65..100 bpm.
pub fn training_views(count: usize, seed: u64, frame_size: usize, noise_sigma: f64) -> Vec<ViewSpec> {
    (0..count)
        .map(|k| ViewSpec {
            hr_bpm: 65.0 + 35.0 * k as f64 / count.max(2).saturating_sub(1) as f64,
            frame_size,
            noise_sigma,
            texture_seed: seed.wrapping_mul(1000).wrapping_add(k as u64),
            ..ViewSpec::default()
        })
        .collect()
}

impl<T: Scalar> SynthView<T> {
    /// Training sample over the video's detected contrast window.
    pub fn to_train_video(&self, patient_id: impl Into<String>) -> Result<TrainVideo<T>> {
        let window = extract_contrast_window(&self.frames)?;
        TrainVideo::new(self.frames.clone(), self.phases.clone(), window, patient_id)
    }

    pub fn descriptor(&self) -> Descriptor {
        Descriptor {
            fps: Some(self.spec.fps),
            ecg_hz: Some(self.spec.ecg_hz),
            frame0_time_s: Some(0.0),
            video_id: Some(self.frames.video_id().to_owned()),
            patient_id: Some(self.patient_id.clone()),
        }
    }

    pub fn truth(&self) -> ViewTruth {
        ViewTruth {
            spec: self.spec.clone(),
            peaks_frames: self.peaks.frames().iter().map(|p| p.as_f64()).collect(),
            peaks_s: self.peaks.frames().iter().map(|p| p.as_f64() / self.spec.fps).collect(),
            phases: self.phases.phases().iter().map(|p| p.as_f64()).collect(),
            contrast_onset_frame: self.spec.onset_frame(),
        }
    }

    /// Frames, descriptor, `ecg.csv` and `truth.json` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        store_frame_dir(&self.frames, &self.descriptor(), dir)?;
        store_ecg(&self.ecg, dir.join(ECG_FILE))?;
        let mut text = serde_json::to_string_pretty(&self.truth())?;
        text.push('\n');
        fs::write(dir.join(TRUTH_FILE), text)?;
        Ok(())
    }
}

//! R-wave peak detection on a sampled ECG trace.
//!
//! The trace is z-normalized, smoothed with a truncated Gaussian, and every
//! rising-to-falling turn of the smoothed signal above a prominence level is
//! a candidate. Candidates closer than a minimum gap are resolved in favour
//! of the higher one. Peak positions are reported in video frame units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

/// Default Gaussian smoothing width in seconds.
pub const DEFAULT_SIGMA_S: f64 = 0.02;
/// Default minimum spacing between R-peaks in seconds (240 bpm).
pub const DEFAULT_MIN_GAP_S: f64 = 0.25;
/// Candidates must reach this fraction of the smoothed signal's
/// [`PROMINENCE_PERCENTILE`].
pub const PROMINENCE_FRACTION: f64 = 0.5;
pub const PROMINENCE_PERCENTILE: f64 = 90.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EcgTrace<T> {
    samples: Vec<T>,
    ecg_hz: f64,
    frame0_time_s: f64,
    fps: f64,
}

impl<T: Scalar> EcgTrace<T> {
    pub fn new(samples: Vec<T>, ecg_hz: f64, frame0_time_s: f64, fps: f64) -> Result<Self> {
        if !(ecg_hz.is_finite() && ecg_hz > 0.0) {
            return Err(Error::InvalidParameter(format!("ecg_hz must be positive, got {ecg_hz}")));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidParameter(format!("fps must be positive, got {fps}")));
        }
        if !frame0_time_s.is_finite() {
            return Err(Error::InvalidParameter("frame0_time_s must be finite".into()));
        }
        if samples.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "ECG needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { line: i + 2 });
        }
        Ok(Self {
            samples,
            ecg_hz,
            frame0_time_s,
            fps,
        })
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn ecg_hz(&self) -> f64 {
        self.ecg_hz
    }

    pub fn frame0_time_s(&self) -> f64 {
        self.frame0_time_s
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    /// Maps a (fractional) sample index onto the video frame axis.
    pub fn sample_to_frame(&self, index: f64) -> f64 {
        (index / self.ecg_hz - self.frame0_time_s) * self.fps
    }
}

/// Strictly increasing R-peak positions in video frame coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakList<T> {
    peaks_frames: Vec<T>,
}

impl<T: Scalar> PeakList<T> {
    pub fn new(peaks_frames: Vec<T>) -> Result<Self> {
        if let Some(k) = peaks_frames.windows(2).position(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::InvalidParameter(format!(
                "peaks must be strictly increasing (positions {k} and {})",
                k + 1
            )));
        }
        if peaks_frames.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("peaks must be finite".into()));
        }
        Ok(Self { peaks_frames })
    }

    pub fn frames(&self) -> &[T] {
        &self.peaks_frames
    }

    pub fn len(&self) -> usize {
        self.peaks_frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks_frames.is_empty()
    }
}

/// Number of complete inter-peak intervals.
pub fn peaks_to_cycle_count<T: Scalar>(peaks: &PeakList<T>) -> Result<usize> {
    if peaks.len() < 2 {
        return Err(Error::TooFewPeaks { found: peaks.len() });
    }
    Ok(peaks.len() - 1)
}

/// Detected peaks as sample indices, before conversion to frame units.
pub fn detect_r_peak_samples<T: Scalar>(
    trace: &EcgTrace<T>,
    sigma_s: f64,
    min_gap_s: f64,
) -> Result<Vec<usize>> {
    if !(sigma_s.is_finite() && sigma_s > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma_s}")));
    }
    if !(min_gap_s.is_finite() && min_gap_s > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "minimum gap must be positive, got {min_gap_s}"
        )));
    }
    let normalized = z_normalize(trace.samples());
    let smoothed = gaussian_smooth(&normalized, sigma_s * trace.ecg_hz());
    let threshold = T::of(PROMINENCE_FRACTION) * percentile(&smoothed, PROMINENCE_PERCENTILE);

    let mut candidates: Vec<usize> = local_maxima(&smoothed)
        .into_iter()
        .filter(|&i| smoothed[i] >= threshold)
        .collect();
    // Highest first; equal heights keep the earlier sample.
    candidates.sort_by(|&a, &b| smoothed[b].partial_cmp(&smoothed[a]).unwrap().then(a.cmp(&b)));

    let min_gap = min_gap_s * trace.ecg_hz();
    let mut accepted: Vec<usize> = Vec::new();
    for c in candidates {
        if accepted.iter().all(|&a| (a.abs_diff(c) as f64) >= min_gap) {
            accepted.push(c);
        }
    }
    accepted.sort_unstable();
    Ok(accepted)
}

/// R-peak detection returning positions in frame coordinates.
pub fn detect_r_peaks<T: Scalar>(
    trace: &EcgTrace<T>,
    sigma_s: f64,
    min_gap_s: f64,
) -> Result<PeakList<T>> {
    let samples = detect_r_peak_samples(trace, sigma_s, min_gap_s)?;
    if samples.len() < 2 {
        return Err(Error::TooFewPeaks { found: samples.len() });
    }
    PeakList::new(
        samples
            .into_iter()
            .map(|i| T::of(trace.sample_to_frame(i as f64)))
            .collect(),
    )
}

fn z_normalize<T: Scalar>(x: &[T]) -> Vec<T> {
    let n = T::of(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
    let sd = var.sqrt();
    if sd.is_zero() {
        return vec![T::zero(); x.len()];
    }
    x.iter().map(|v| (*v - mean) / sd).collect()
}

/// Convolution with a Gaussian truncated at ±4σ. Near the ends only the
/// in-range taps are used and their weights are renormalized to sum to one.
fn gaussian_smooth<T: Scalar>(x: &[T], sigma_samples: f64) -> Vec<T> {
    let half = (4.0 * sigma_samples).ceil() as isize;
    let kernel: Vec<T> = (-half..=half)
        .map(|k| T::of((-0.5 * (k as f64 / sigma_samples).powi(2)).exp()))
        .collect();
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            let mut acc = T::zero();
            let mut weight = T::zero();
            for (k, w) in (-half..=half).zip(&kernel) {
                let j = i + k;
                if (0..n).contains(&j) {
                    acc = acc + *w * x[j as usize];
                    weight = weight + *w;
                }
            }
            acc / weight
        })
        .collect()
}

/// Indices where the discrete gradient turns from positive to negative.
/// A flat top is reported at its middle sample.
fn local_maxima<T: Scalar>(x: &[T]) -> Vec<usize> {
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < x.len() {
        if x[i] > x[i - 1] {
            let mut j = i;
            while j + 1 < x.len() && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < x.len() && x[j + 1] < x[i] {
                peaks.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

/// Linear-interpolation percentile (`q` in `[0, 100]`).
fn percentile<T: Scalar>(x: &[T], q: f64) -> T {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::of(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn trace(samples: Vec<f64>, hz: f64) -> EcgTrace<f64> {
        EcgTrace::new(samples, hz, 0.0, 30.0).unwrap()
    }

    #[test]
    fn sinusoid_peaks_at_maxima() {
        // Period 100 samples at 500 Hz, maxima at 50, 150, ... clear of the ends.
        let hz = 500.0;
        let x: Vec<f64> = (0..1000).map(|i| (2.0 * PI * (i as f64 - 50.0) / 100.0).cos()).collect();
        let peaks = detect_r_peak_samples(&trace(x, hz), DEFAULT_SIGMA_S, 0.1).unwrap();
        assert_eq!(peaks, vec![50, 150, 250, 350, 450, 550, 650, 750, 850, 950]);
        assert!(peaks.windows(2).all(|w| w[1] - w[0] == 100));
    }

    #[test]
    fn flat_signal_has_too_few_peaks() {
        let err = detect_r_peaks(&trace(vec![0.0; 500], 500.0), 0.02, 0.25).unwrap_err();
        assert!(matches!(err, Error::TooFewPeaks { found: 0 }));
    }

    #[test]
    fn frame_conversion_uses_offset_and_fps() {
        let t = EcgTrace::new(vec![0.0f64; 10], 500.0, 0.5, 30.0).unwrap();
        assert_eq!(t.sample_to_frame(500.0), 15.0);
        assert_eq!(t.sample_to_frame(250.0), 0.0);
    }

    #[test]
    fn cycle_count() {
        let p = PeakList::new(vec![0.0, 15.0, 30.0]).unwrap();
        assert_eq!(peaks_to_cycle_count(&p).unwrap(), 2);
        let p = PeakList::new(vec![3.5, 18.5]).unwrap();
        assert_eq!(peaks_to_cycle_count(&p).unwrap(), 1);
        let p = PeakList::new(vec![3.5]).unwrap();
        assert!(peaks_to_cycle_count(&p).is_err());
    }

    #[test]
    fn peak_list_must_increase() {
        assert!(PeakList::new(vec![1.0, 1.0]).is_err());
        assert!(PeakList::new(vec![2.0, 1.0]).is_err());
    }

    #[test]
    fn invalid_parameters() {
        let t = trace(vec![0.0, 1.0, 0.0], 500.0);
        assert!(detect_r_peaks(&t, 0.0, 0.25).is_err());
        assert!(detect_r_peaks(&t, 0.02, -1.0).is_err());
        assert!(EcgTrace::<f64>::new(vec![1.0], 500.0, 0.0, 30.0).is_err());
        assert!(EcgTrace::<f64>::new(vec![1.0, 2.0], 0.0, 0.0, 30.0).is_err());
        assert!(EcgTrace::<f64>::new(vec![1.0, f64::NAN], 500.0, 0.0, 30.0).is_err());
    }

    #[test]
    fn plateau_maximum_reports_middle() {
        assert_eq!(local_maxima(&[0.0, 1.0, 2.0, 2.0, 2.0, 1.0]), vec![3]);
        assert!(local_maxima(&[0.0, 1.0, 1.0]).is_empty());
    }

    #[test]
    fn percentile_interpolates() {
        let x: Vec<f64> = (0..11).map(|v| v as f64).collect();
        assert_eq!(percentile(&x, 90.0), 9.0);
        assert_eq!(percentile(&x, 95.0), 9.5);
    }
}

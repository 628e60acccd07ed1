//! Sliding 3-frame windows and the embedders that turn them into feature
//! vectors. A window is labeled by its last frame, and so is its feature.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{ContrastWindow, Frame, FrameSeries};
use crate::phase::PhaseTrack;
use crate::Scalar;

/// Three consecutive frames `t - 2, t - 1, t`.
#[derive(Debug, Clone, Copy)]
pub struct WindowSpec<'a, T> {
    pub last_frame_index: usize,
    pub frames: [&'a Frame<T>; 3],
}

impl<T: Scalar> WindowSpec<'_, T> {
    /// The three frames concatenated, oldest first, each row-major.
    pub fn flatten(&self) -> Vec<T> {
        self.frames.iter().flat_map(|f| f.data().iter().copied()).collect()
    }
}

/// Feature vectors of one video, in window order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries<T> {
    vectors: Vec<Vec<T>>,
    dim: usize,
    first_window_last_frame: usize,
}

impl<T: Scalar> FeatureSeries<T> {
    pub fn new(vectors: Vec<Vec<T>>, dim: usize, first_window_last_frame: usize) -> Result<Self> {
        for (k, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    line: k + 2,
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { line: k + 2 });
            }
        }
        Ok(Self {
            vectors,
            dim,
            first_window_last_frame,
        })
    }

    pub fn vectors(&self) -> &[Vec<T>] {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Frame index labeling vector 0.
    pub fn first_window_last_frame(&self) -> usize {
        self.first_window_last_frame
    }

    pub fn with_first_window_last_frame(mut self, frame: usize) -> Self {
        self.first_window_last_frame = frame;
        self
    }

    /// Rounds every value through `f32`, as a store/load cycle would.
    pub fn quantized(&self) -> Self {
        let vectors = self
            .vectors
            .iter()
            .map(|v| v.iter().map(|x| x.quantize_f32()).collect())
            .collect();
        Self {
            vectors,
            ..self.clone()
        }
    }
}

/// Maps a 3-frame window to a feature vector. Implementations are read-only
/// and shared across worker threads.
pub trait Embedder<T: Scalar>: Send + Sync {
    fn output_dim(&self) -> usize;

    /// Frame `(height, width)` the embedder requires, if it cares.
    fn input_shape(&self) -> Option<(usize, usize)> {
        None
    }

    fn embed(&self, window: &WindowSpec<'_, T>) -> Result<Vec<T>>;
}

/// Windows ending at every frame `start + 2 .. end` of the contrast window.
pub fn make_windows<'a, T: Scalar>(
    video: &'a FrameSeries<T>,
    window: &ContrastWindow,
) -> Result<Vec<WindowSpec<'a, T>>> {
    if window.end > video.len() || window.start >= window.end {
        return Err(Error::InvalidParameter(format!(
            "window [{}, {}) does not fit a {}-frame video",
            window.start,
            window.end,
            video.len()
        )));
    }
    if window.len() < 3 {
        return Err(Error::WindowTooShort {
            start: window.start,
            end: window.end,
        });
    }
    let frames = video.frames();
    Ok((window.start + 2..window.end)
        .map(|t| WindowSpec {
            last_frame_index: t,
            frames: [&frames[t - 2], &frames[t - 1], &frames[t]],
        })
        .collect())
}

/// One vector per window, order preserved.
pub fn embed_series<T: Scalar, E: Embedder<T> + ?Sized>(
    embedder: &E,
    windows: &[WindowSpec<'_, T>],
) -> Result<FeatureSeries<T>> {
    if let (Some(expected), Some(first)) = (embedder.input_shape(), windows.first()) {
        let found = first.frames[0].shape();
        if found != expected {
            return Err(Error::InputShape { expected, found });
        }
    }
    let vectors = windows
        .par_iter()
        .map(|w| embedder.embed(w))
        .collect::<Result<Vec<_>>>()?;
    let first = windows.first().map_or(0, |w| w.last_frame_index);
    FeatureSeries::new(vectors, embedder.output_dim(), first)
}

/// Test oracle: `[cos 2πφ, sin 2πφ, 0, ...]` for the phase of the window's
/// last frame, plus seeded Gaussian noise that depends only on
/// `(seed, frame)`.
#[derive(Debug, Clone)]
pub struct PhaseOracleEmbedder<T> {
    phases: PhaseTrack<T>,
    dim: usize,
    noise_sigma: f64,
    seed: u64,
}

impl<T: Scalar> PhaseOracleEmbedder<T> {
    pub fn new(phases: PhaseTrack<T>, dim: usize, noise_sigma: f64, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidParameter(format!("oracle dimension must be at least 2, got {dim}")));
        }
        if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise sigma must be >= 0, got {noise_sigma}")));
        }
        Ok(Self {
            phases,
            dim,
            noise_sigma,
            seed,
        })
    }

    pub fn vector_for_frame(&self, t: usize) -> Result<Vec<T>> {
        let phase = self
            .phases
            .get(t)
            .ok_or_else(|| Error::InvalidParameter(format!("no valid phase for frame {t}")))?;
        let (s, c) = (T::of(2.0 * std::f64::consts::PI) * phase).sin_cos();
        let mut v = vec![T::zero(); self.dim];
        v[0] = c;
        v[1] = s;
        if self.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(t as u64);
            let normal = Normal::new(0.0, self.noise_sigma).expect("sigma validated");
            for x in v.iter_mut() {
                *x = *x + T::of(normal.sample(&mut rng));
            }
        }
        Ok(v)
    }
}

impl<T: Scalar> Embedder<T> for PhaseOracleEmbedder<T> {
    fn output_dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, window: &WindowSpec<'_, T>) -> Result<Vec<T>> {
        self.vector_for_frame(window.last_frame_index)
    }
}

/// Serves vectors computed elsewhere (e.g. by an external CNN), indexed by
/// the window's last frame relative to the series' first label.
#[derive(Debug, Clone)]
pub struct PrecomputedEmbedder<T> {
    series: FeatureSeries<T>,
}

impl<T: Scalar> PrecomputedEmbedder<T> {
    pub fn new(series: FeatureSeries<T>) -> Self {
        Self { series }
    }
}

impl<T: Scalar> Embedder<T> for PrecomputedEmbedder<T> {
    fn output_dim(&self) -> usize {
        self.series.dim()
    }

    fn embed(&self, window: &WindowSpec<'_, T>) -> Result<Vec<T>> {
        let first = self.series.first_window_last_frame();
        window
            .last_frame_index
            .checked_sub(first)
            .and_then(|k| self.series.vectors().get(k))
            .cloned()
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "no precomputed vector for window ending at frame {} ({} vectors from frame {first})",
                    window.last_frame_index,
                    self.series.len()
                ))
            })
    }
}

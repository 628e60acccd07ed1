use rand::seq::{index, IndexedRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::ingest::{ContrastWindow, FrameSeries};
use crate::phase::{sync_level, PhaseTrack};
use crate::training::{PairTargets, TrainConfig};
use crate::Scalar;

/// One training video: frames, per-frame phase over the whole video, and the
/// contrast window windows are drawn from.
#[derive(Debug, Clone)]
pub struct TrainVideo<T> {
    pub frames: FrameSeries<T>,
    pub phases: PhaseTrack<T>,
    pub window: ContrastWindow,
    pub patient_id: String,
}

impl<T: Scalar> TrainVideo<T> {
    pub fn new(
        frames: FrameSeries<T>,
        phases: PhaseTrack<T>,
        window: ContrastWindow,
        patient_id: impl Into<String>,
    ) -> Result<Self> {
        if phases.len() != frames.len() {
            return Err(Error::InvalidParameter(format!(
                "{} phases for {} frames",
                phases.len(),
                frames.len()
            )));
        }
        if window.end > frames.len() {
            return Err(Error::InvalidParameter("contrast window exceeds the video".into()));
        }
        Ok(Self {
            frames,
            phases,
            window,
            patient_id: patient_id.into(),
        })
    }

    pub fn video_id(&self) -> &str {
        self.frames.video_id()
    }

    /// Last frames of windows inside the contrast window with a valid phase.
    pub fn usable_frames(&self) -> Vec<usize> {
        (self.window.start + 2..self.window.end)
            .filter(|&t| self.phases.get(t).is_some())
            .collect()
    }

    /// The window ending at `t`, flattened oldest frame first.
    pub fn window_input(&self, t: usize) -> Vec<T> {
        let frames = self.frames.frames();
        frames[t - 2..=t]
            .iter()
            .flat_map(|f| f.data().iter().copied())
            .collect()
    }
}

/// Network inputs and pair targets for one step.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub inputs: Vec<Vec<T>>,
    pub targets: PairTargets<T>,
    /// `(video index, last frame)` of every batch element.
    pub members: Vec<(usize, usize)>,
}

/// Draws `N` distinct windows from one video, or split across two videos of
/// the same patient when inter-video pairs are enabled (falling back to one
/// video if the patient has no other).
pub fn sample_batch<T: Scalar, R: Rng + ?Sized>(
    dataset: &[TrainVideo<T>],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Batch<T>> {
    let n = cfg.batch_size;
    let usable: Vec<Vec<usize>> = dataset.iter().map(TrainVideo::usable_frames).collect();
    let eligible: Vec<usize> = (0..dataset.len()).filter(|&v| usable[v].len() >= n).collect();
    let &first = eligible.choose(rng).ok_or_else(|| {
        Error::InsufficientFrames(format!("no training video has {n} usable windows"))
    })?;

    let partner = if cfg.inter_video_pairs {
        let same_patient: Vec<usize> = (0..dataset.len())
            .filter(|&v| v != first && dataset[v].patient_id == dataset[first].patient_id)
            .filter(|&v| usable[v].len() >= n - n / 2)
            .collect();
        same_patient.choose(rng).copied()
    } else {
        None
    };

    let mut members = Vec::with_capacity(n);
    match partner {
        Some(second) => {
            for (v, count) in [(first, n / 2), (second, n - n / 2)] {
                for k in index::sample(rng, usable[v].len(), count) {
                    members.push((v, usable[v][k]));
                }
            }
        }
        None => {
            for k in index::sample(rng, usable[first].len(), n) {
                members.push((first, usable[first][k]));
            }
        }
    }

    let mut targets = Vec::with_capacity(n * n);
    let mut valid = Vec::with_capacity(n * n);
    for &(va, ta) in &members {
        for &(vb, tb) in &members {
            let pa = dataset[va].phases.get(ta).expect("usable frames have a phase");
            let pb = dataset[vb].phases.get(tb).expect("usable frames have a phase");
            targets.push(sync_level(pa, pb));
            let far = cfg.max_cycles > 0.0 && va == vb && {
                let ca = dataset[va].phases.cycle_position(ta).expect("valid");
                let cb = dataset[vb].phases.cycle_position(tb).expect("valid");
                (ca - cb).abs().as_f64() > cfg.max_cycles
            };
            valid.push(!far);
        }
    }

    let inputs = members
        .iter()
        .map(|&(v, t)| {
            let x = dataset[v].window_input(t);
            if cfg.data_augmentation {
                augment(&x, dataset[v].frames.frame_shape(), rng)
            } else {
                x
            }
        })
        .collect();

    Ok(Batch {
        inputs,
        targets: PairTargets::new(n, targets, Some(valid))?,
        members,
    })
}

/// Same horizontal flip and intensity scale for all three frames.
fn augment<T: Scalar, R: Rng + ?Sized>(x: &[T], (h, w): (usize, usize), rng: &mut R) -> Vec<T> {
    let flip = rng.random_bool(0.5);
    let scale = T::of(rng.random_range(0.95..=1.05));
    let mut out = Vec::with_capacity(x.len());
    for frame in x.chunks(h * w) {
        for row in frame.chunks(w) {
            if flip {
                out.extend(row.iter().rev().map(|v| *v * scale));
            } else {
                out.extend(row.iter().map(|v| *v * scale));
            }
        }
    }
    out
}

//! Cardiac phase per frame and the ground-truth synchronization matrix.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ecg::PeakList;
use crate::error::{Error, Result};
use crate::matrix::{to_cost, MatrixKind, SyncMatrix};
use crate::pathfinding::{find_best_path, PathSearchConfig, SyncPath};
use crate::Scalar;

/// Per-frame phase in `[0, 1)`, with frames outside any pair of R-peaks
/// marked invalid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrack<T> {
    phases: Vec<T>,
    valid: Vec<bool>,
    /// Index of the R-peak opening the frame's cycle.
    cycle: Vec<usize>,
}

impl<T: Scalar> PhaseTrack<T> {
    /// Track valid on every frame, with cycle indices counted at wrap-arounds.
    pub fn from_phases(phases: Vec<T>) -> Result<Self> {
        if let Some(t) = phases
            .iter()
            .position(|p| !(p.is_finite() && *p >= T::zero() && *p < T::one()))
        {
            return Err(Error::InvalidParameter(format!(
                "phase {} at frame {t} outside [0, 1)",
                phases[t]
            )));
        }
        let mut cycle = Vec::with_capacity(phases.len());
        let mut k = 0;
        for (t, p) in phases.iter().enumerate() {
            if t > 0 && *p < phases[t - 1] {
                k += 1;
            }
            cycle.push(k);
        }
        let valid = vec![true; phases.len()];
        Ok(Self {
            phases,
            valid,
            cycle,
        })
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn phases(&self) -> &[T] {
        &self.phases
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, t: usize) -> Option<T> {
        (t < self.len() && self.valid[t]).then(|| self.phases[t])
    }

    /// Cycles elapsed since the first R-peak: cycle index plus phase.
    pub fn cycle_position(&self, t: usize) -> Option<T> {
        self.get(t).map(|p| T::of(self.cycle[t] as f64) + p)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Sub-track for the frames in `range`, e.g. the last frames of a video's
    /// windows so that indices line up with feature and matrix coordinates.
    pub fn slice(&self, range: Range<usize>) -> Self {
        Self {
            phases: self.phases[range.clone()].to_vec(),
            valid: self.valid[range.clone()].to_vec(),
            cycle: self.cycle[range].to_vec(),
        }
    }
}

/// Phase of frame `t` between enclosing peaks `p_k <= t < p_{k+1}` is
/// `(t - p_k) / (p_{k+1} - p_k)`.
pub fn compute_phase<T: Scalar>(peaks: &PeakList<T>, frame_count: usize) -> Result<PhaseTrack<T>> {
    let p = peaks.frames();
    if p.len() < 2 {
        return Err(Error::TooFewPeaks { found: p.len() });
    }
    let mut phases = Vec::with_capacity(frame_count);
    let mut valid = Vec::with_capacity(frame_count);
    let mut cycle = Vec::with_capacity(frame_count);
    let mut k = 0;
    for t in 0..frame_count {
        let tf = T::of(t as f64);
        while k + 1 < p.len() && p[k + 1] <= tf {
            k += 1;
        }
        if tf >= p[0] && k + 1 < p.len() {
            let phase = (tf - p[k]) / (p[k + 1] - p[k]);
            // t < p_{k+1} keeps the exact quotient below one; rounding may not.
            let phase = if phase >= T::one() { T::one() - T::epsilon() } else { phase };
            phases.push(phase);
            valid.push(true);
        } else {
            phases.push(T::zero());
            valid.push(false);
        }
        cycle.push(k);
    }
    Ok(PhaseTrack {
        phases,
        valid,
        cycle,
    })
}

/// Circular distance between two phases, in `[0, 0.5]`.
#[inline]
pub fn circular_distance<T: Scalar>(a: T, b: T) -> T {
    let d = (a - b).abs();
    d.min(T::one() - d)
}

/// Synchronization level `1 - 2 d` for circular phase distance `d`.
#[inline]
pub fn sync_level<T: Scalar>(a: T, b: T) -> T {
    T::one() - T::of(2.0) * circular_distance(a, b)
}

/// Ground-truth matrix: rows follow `phases_a`, columns `phases_b`. Cells
/// where either frame has no valid phase are masked.
pub fn ground_truth_matrix<T: Scalar>(
    phases_a: &PhaseTrack<T>,
    phases_b: &PhaseTrack<T>,
) -> Result<SyncMatrix<T>> {
    if phases_a.is_empty() || phases_b.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if phases_a.valid_count() == 0 || phases_b.valid_count() == 0 {
        return Err(Error::AllInvalid);
    }
    let (rows, cols) = (phases_a.len(), phases_b.len());
    let cells: Vec<(T, bool)> = (0..rows)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..cols).map(move |j| match (phases_a.get(i), phases_b.get(j)) {
                (Some(a), Some(b)) => (sync_level(a, b), false),
                _ => (T::zero(), true),
            })
        })
        .collect();
    let (values, mask): (Vec<T>, Vec<bool>) = cells.into_iter().unzip();
    SyncMatrix::with_mask(rows, cols, values, Some(mask), MatrixKind::GroundTruth)
}

/// Best path found on the ground truth itself with the regular search rules.
pub fn ground_truth_best_path<T: Scalar>(
    gt: &SyncMatrix<T>,
    cfg: &PathSearchConfig,
) -> Result<SyncPath<T>> {
    if gt.kind() != MatrixKind::GroundTruth {
        return Err(Error::WrongKind {
            expected: MatrixKind::GroundTruth.to_string(),
            found: gt.kind().to_string(),
        });
    }
    find_best_path(&to_cost(gt)?, cfg)
}

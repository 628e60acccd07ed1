//! Constrained multi-start shortest-path search over a cost matrix.
//!
//! Paths move down `(1, 0)`, right `(0, 1)` or diagonally `(1, 1)`, and at
//! most [`MAX_RUN`] consecutive moves may go in the same straight direction.
//! Path cost is the sum of the cost of every visited cell, endpoints
//! included. A forward search starts on the first row or column and stops as
//! soon as it reaches the last row or column; a backward search mirrors this.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{MatrixKind, SyncMatrix};
use crate::Scalar;

/// Longest allowed run of consecutive down (or right) moves.
pub const MAX_RUN: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSearchConfig {
    /// Spacing of forward start cells along the first row and column.
    pub start_stride: usize,
    /// Paths need at least this fraction of `min(rows, cols)` points.
    pub min_length_fraction: f64,
}

impl Default for PathSearchConfig {
    fn default() -> Self {
        Self {
            start_stride: 5,
            min_length_fraction: 0.9,
        }
    }
}

impl PathSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.start_stride == 0 {
            return Err(Error::InvalidParameter("start stride must be at least 1".into()));
        }
        if !(self.min_length_fraction > 0.0 && self.min_length_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "minimum length fraction {} outside (0, 1]",
                self.min_length_fraction
            )));
        }
        Ok(())
    }

    /// Point count a path needs on a `rows x cols` matrix.
    pub fn required_points(&self, rows: usize, cols: usize) -> usize {
        let raw = self.min_length_fraction * rows.min(cols) as f64;
        // Guard against 0.9 * 10 = 9.000000000000002.
        (raw - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Monotone lattice path, points in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncPath<T> {
    points: Vec<(usize, usize)>,
    total_cost: T,
    straightness: T,
    trimmed: bool,
}

impl<T: Scalar> SyncPath<T> {
    /// Builds a path from its points; straightness is derived.
    pub fn new(points: Vec<(usize, usize)>, total_cost: T) -> Self {
        let straightness = straightness(&points);
        Self {
            points,
            total_cost,
            straightness,
            trimmed: false,
        }
    }

    pub fn points(&self) -> &[(usize, usize)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_cost(&self) -> T {
        self.total_cost
    }

    /// RMS perpendicular distance of the points to their least-squares line.
    pub fn straightness(&self) -> T {
        self.straightness
    }

    pub fn trimmed(&self) -> bool {
        self.trimmed
    }

    pub(crate) fn into_trimmed(points: Vec<(usize, usize)>, total_cost: T) -> Self {
        Self {
            trimmed: true,
            ..Self::new(points, total_cost)
        }
    }

    /// Checks step set, run lengths and (untrimmed paths only) that the
    /// path runs from the entry border to the exit border.
    pub fn check_invariants(&self, rows: usize, cols: usize) -> std::result::Result<(), String> {
        let pts = &self.points;
        let Some(&first) = pts.first() else {
            return Err("empty path".into());
        };
        if let Some(&(i, j)) = pts.iter().find(|(i, j)| *i >= rows || *j >= cols) {
            return Err(format!("point ({i}, {j}) outside {rows}x{cols}"));
        }
        let mut run: Option<((usize, usize), u8)> = None;
        for (k, w) in pts.windows(2).enumerate() {
            let step = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
            match step {
                (1, 1) => run = None,
                (1, 0) | (0, 1) => {
                    let len = match run {
                        Some((s, n)) if s == step => n + 1,
                        _ => 1,
                    };
                    if len > MAX_RUN {
                        return Err(format!("run of {len} identical moves ending at step {k}"));
                    }
                    run = Some((step, len));
                }
                other => return Err(format!("illegal step {other:?} at step {k}")),
            }
        }
        if !self.trimmed {
            let last = *pts.last().unwrap();
            if first.0 != 0 && first.1 != 0 {
                return Err(format!("first point {first:?} not on the first row or column"));
            }
            if last.0 != rows - 1 && last.1 != cols - 1 {
                return Err(format!("last point {last:?} not on the last row or column"));
            }
        }
        Ok(())
    }

    /// `{points: [[i, j], ...], total_cost, straightness}` plus `trimmed`
    /// when set.
    pub fn to_file(&self) -> PathFile {
        PathFile {
            points: self.points.iter().map(|&(i, j)| [i, j]).collect(),
            total_cost: self.total_cost.as_f64(),
            straightness: self.straightness.as_f64(),
            trimmed: self.trimmed,
        }
    }

    pub fn from_file(file: &PathFile) -> Self {
        Self {
            points: file.points.iter().map(|p| (p[0], p[1])).collect(),
            total_cost: T::of(file.total_cost),
            straightness: T::of(file.straightness),
            trimmed: file.trimmed,
        }
    }

    pub fn store_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.to_file())?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let file: PathFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        Ok(Self::from_file(&file))
    }
}

/// Serialized form of a [`SyncPath`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFile {
    pub points: Vec<[usize; 2]>,
    pub total_cost: f64,
    pub straightness: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub trimmed: bool,
}

fn straightness<T: Scalar>(points: &[(usize, usize)]) -> T {
    if points.len() < 2 {
        return T::zero();
    }
    let n = T::of(points.len() as f64);
    let (si, sj) = points.iter().fold((T::zero(), T::zero()), |(a, b), &(i, j)| {
        (a + T::of(i as f64), b + T::of(j as f64))
    });
    let (mi, mj) = (si / n, sj / n);
    let (mut sii, mut sjj, mut sij) = (T::zero(), T::zero(), T::zero());
    for &(i, j) in points {
        let (di, dj) = (T::of(i as f64) - mi, T::of(j as f64) - mj);
        sii = sii + di * di;
        sjj = sjj + dj * dj;
        sij = sij + di * dj;
    }
    let (sii, sjj, sij) = (sii / n, sjj / n, sij / n);
    // Smallest eigenvalue of the 2x2 covariance = mean squared orthogonal residual.
    let half = T::of(0.5);
    let mid = half * (sii + sjj);
    let spread = (half * (sii - sjj)).hypot(sij);
    (mid - spread).max(T::zero()).sqrt()
}

// ---------------------------------------------------------------------------
// Search state: cell plus the current straight run. Slot 0 is "no run"
// (start or after a diagonal), 1..=3 a down run, 4..=6 a right run.

const SLOTS: usize = 1 + 2 * MAX_RUN as usize;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Move {
    Diagonal,
    Down,
    Right,
}

fn next_slot(slot: usize, mv: Move) -> Option<usize> {
    let run = MAX_RUN as usize;
    match mv {
        Move::Diagonal => Some(0),
        Move::Down => match slot {
            s @ 1..=3 if s < run => Some(s + 1),
            1..=3 => None,
            _ => Some(1),
        },
        Move::Right => match slot {
            s @ 4..=6 if s - run < run => Some(s + 1),
            4..=6 => None,
            _ => Some(run + 1),
        },
    }
}

#[derive(Clone, Copy)]
struct Label<T> {
    cost: T,
    steps: u32,
}

impl<T: Scalar> Label<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .partial_cmp(&other.cost)
            .expect("finite costs")
            .then(self.steps.cmp(&other.steps))
    }
}

struct HeapEntry<T> {
    label: Label<T>,
    /// Distance from the matrix's main diagonal line, scaled.
    deviation: usize,
    cell: usize,
    slot: usize,
}

impl<T: Scalar> PartialEq for HeapEntry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for HeapEntry<T> {}

impl<T: Scalar> PartialOrd for HeapEntry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for HeapEntry<T> {
    // Reversed for a min-heap; ties go to the cell nearest the main
    // diagonal, then to row-major order.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .label
            .cmp(&self.label)
            .then(other.deviation.cmp(&self.deviation))
            .then(other.cell.cmp(&self.cell))
            .then(other.slot.cmp(&self.slot))
    }
}

/// Forward search on an accessor-defined matrix. Returns the points from
/// `start` to the exit border and the accumulated cost.
fn forward_search<T: Scalar>(
    rows: usize,
    cols: usize,
    cost: impl Fn(usize, usize) -> T,
    start: (usize, usize),
) -> (Vec<(usize, usize)>, T) {
    let is_exit = |i: usize, j: usize| i == rows - 1 || j == cols - 1;
    let deviation = |i: usize, j: usize| (i * (cols - 1)).abs_diff(j * (rows - 1));
    let n_states = rows * cols * SLOTS;
    let mut best: Vec<Option<Label<T>>> = vec![None; n_states];
    // Predecessor state and its tie-break rank (move rank, predecessor cell).
    let mut pred: Vec<Option<(usize, (u8, usize))>> = vec![None; n_states];
    let mut done = vec![false; n_states];
    let mut heap = BinaryHeap::new();

    let start_cell = start.0 * cols + start.1;
    let start_label = Label {
        cost: cost(start.0, start.1),
        steps: 0,
    };
    best[start_cell * SLOTS] = Some(start_label);
    heap.push(HeapEntry {
        label: start_label,
        deviation: deviation(start.0, start.1),
        cell: start_cell,
        slot: 0,
    });

    let mut goal = None;
    while let Some(HeapEntry { label, cell, slot, .. }) = heap.pop() {
        let state = cell * SLOTS + slot;
        if done[state] {
            continue;
        }
        done[state] = true;
        let (i, j) = (cell / cols, cell % cols);
        if is_exit(i, j) {
            goal = Some((state, label));
            break;
        }
        // Off the main diagonal's line, the straight move that heads back to
        // it ranks before the other one.
        let below = i * (cols - 1) > j * (rows - 1);
        let moves = [
            (Move::Diagonal, i + 1, j + 1, 0u8),
            (Move::Down, i + 1, j, if below { 2 } else { 1 }),
            (Move::Right, i, j + 1, if below { 1 } else { 2 }),
        ];
        for (mv, ni, nj, rank) in moves {
            let Some(nslot) = next_slot(slot, mv) else {
                continue;
            };
            let ncell = ni * cols + nj;
            let nstate = ncell * SLOTS + nslot;
            if done[nstate] {
                continue;
            }
            let candidate = Label {
                cost: label.cost + cost(ni, nj),
                steps: label.steps + 1,
            };
            let tie = (rank, cell);
            let better = match (&best[nstate], &pred[nstate]) {
                (None, _) => true,
                (Some(old), p) => match candidate.cmp(old) {
                    Ordering::Less => true,
                    Ordering::Equal => p.is_none_or(|(_, old_tie)| tie < old_tie),
                    Ordering::Greater => false,
                },
            };
            if better {
                best[nstate] = Some(candidate);
                pred[nstate] = Some((state, tie));
                heap.push(HeapEntry {
                    label: candidate,
                    deviation: deviation(ni, nj),
                    cell: ncell,
                    slot: nslot,
                });
            }
        }
    }

    let (mut state, label) = goal.expect("every start reaches the exit border");
    let mut points = vec![(state / SLOTS / cols, state / SLOTS % cols)];
    while let Some((prev, _)) = pred[state] {
        state = prev;
        points.push((state / SLOTS / cols, state / SLOTS % cols));
    }
    points.reverse();
    (points, label.cost)
}

/// Minimal-cost admissible path from `start` to the exit border (last
/// row/column for [`Direction::Forward`], first row/column for
/// [`Direction::Backward`]). Points are returned in ascending order.
pub fn constrained_dijkstra<T: Scalar>(
    cost: &SyncMatrix<T>,
    start: (usize, usize),
    direction: Direction,
) -> Result<SyncPath<T>> {
    let (rows, cols) = cost.shape();
    if cost.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let (i, j) = start;
    let on_border = match direction {
        Direction::Forward => i < rows && j < cols && (i == 0 || j == 0),
        Direction::Backward => i < rows && j < cols && (i == rows - 1 || j == cols - 1),
    };
    if !on_border {
        return Err(Error::InvalidStart { i, j, h: rows, w: cols });
    }
    let (points, total) = match direction {
        Direction::Forward => forward_search(rows, cols, |i, j| cost.get(i, j), start),
        Direction::Backward => {
            let (mut pts, total) = forward_search(
                rows,
                cols,
                |i, j| cost.get(rows - 1 - i, cols - 1 - j),
                (rows - 1 - i, cols - 1 - j),
            );
            pts.iter_mut().for_each(|p| *p = (rows - 1 - p.0, cols - 1 - p.1));
            pts.reverse();
            (pts, total)
        }
    };
    Ok(SyncPath::new(points, total))
}

/// Forward start cells: every `stride`-th cell of the first row, then of the
/// first column (the corner only once).
pub fn forward_starts(rows: usize, cols: usize, stride: usize) -> Vec<(usize, usize)> {
    let mut starts: Vec<(usize, usize)> = (0..cols).step_by(stride).map(|j| (0, j)).collect();
    starts.extend((stride..rows).step_by(stride).map(|i| (i, 0)));
    starts
}

/// Runs the forward sweep from the first row and column, a backward sweep
/// from each distinct forward end point, and picks, among the paths with
/// enough points, the longest; ties go to the straightest, then to the
/// lexicographically smallest first point.
pub fn find_best_path<T: Scalar>(cost: &SyncMatrix<T>, cfg: &PathSearchConfig) -> Result<SyncPath<T>> {
    cfg.validate()?;
    if cost.kind() != MatrixKind::Cost {
        return Err(Error::WrongKind {
            expected: MatrixKind::Cost.to_string(),
            found: cost.kind().to_string(),
        });
    }
    let (rows, cols) = cost.shape();
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidParameter(format!(
            "path search needs at least a 2x2 matrix, got {rows}x{cols}"
        )));
    }

    let forward: Vec<SyncPath<T>> = forward_starts(rows, cols, cfg.start_stride)
        .into_par_iter()
        .map(|s| constrained_dijkstra(cost, s, Direction::Forward))
        .collect::<Result<_>>()?;
    let ends: BTreeSet<(usize, usize)> = forward.iter().map(|p| *p.points().last().unwrap()).collect();
    let backward: Vec<SyncPath<T>> = ends
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|e| constrained_dijkstra(cost, e, Direction::Backward))
        .collect::<Result<_>>()?;

    select_best(forward.into_iter().chain(backward), cfg.required_points(rows, cols))
}

/// Longest path with at least `required` points; ties go to the smaller
/// straightness, then the smaller first point, then the earlier candidate.
pub(crate) fn select_best<T: Scalar>(
    candidates: impl IntoIterator<Item = SyncPath<T>>,
    required: usize,
) -> Result<SyncPath<T>> {
    let mut longest = 0;
    let mut best: Option<SyncPath<T>> = None;
    for path in candidates {
        longest = longest.max(path.len());
        if path.len() < required {
            continue;
        }
        let replace = match &best {
            None => true,
            Some(b) => path
                .len()
                .cmp(&b.len())
                .then_with(|| {
                    b.straightness()
                        .partial_cmp(&path.straightness())
                        .unwrap_or(Ordering::Equal)
                })
                .then_with(|| b.points()[0].cmp(&path.points()[0]))
                == Ordering::Greater,
        };
        if replace {
            best = Some(path);
        }
    }
    best.ok_or(Error::NoCandidate { required, longest })
}

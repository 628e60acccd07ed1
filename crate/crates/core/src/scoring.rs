//! Path scores against the ground-truth matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SyncMatrix;
use crate::pathfinding::{PathSearchConfig, SyncPath};
use crate::phase::ground_truth_best_path;
use crate::Scalar;

/// Mean ground-truth value over the path's unmasked points.
pub fn raw_path_score<T: Scalar>(path: &SyncPath<T>, gt: &SyncMatrix<T>) -> Result<T> {
    let (h, w) = gt.shape();
    let mut sum = T::zero();
    let mut count = 0usize;
    for &(i, j) in path.points() {
        if i >= h || j >= w {
            return Err(Error::OutOfBounds { i, j, h, w });
        }
        if !gt.is_masked(i, j) {
            sum = sum + gt.get(i, j);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::AllMasked);
    }
    Ok(sum / T::of(count as f64))
}

/// Raw score divided by the raw score of the best path found on `gt` itself
/// with the same search configuration.
pub fn normalized_score<T: Scalar>(path: &SyncPath<T>, gt: &SyncMatrix<T>, cfg: &PathSearchConfig) -> Result<T> {
    let denominator = raw_path_score(&ground_truth_best_path(gt, cfg)?, gt)?;
    normalize(raw_path_score(path, gt)?, denominator)
}

fn normalize<T: Scalar>(raw: T, denominator: T) -> Result<T> {
    if denominator <= T::zero() {
        return Err(Error::ZeroDenominator);
    }
    Ok(raw / denominator)
}

/// Drops `k` points from each end. The result no longer touches the
/// borders and is flagged as trimmed. `k = 0` returns the path unchanged.
pub fn trim_endpoints<T: Scalar>(path: &SyncPath<T>, k: usize) -> Result<SyncPath<T>> {
    if k == 0 {
        return Ok(path.clone());
    }
    if path.len() <= 2 * k {
        return Err(Error::PathTooShort { len: path.len(), k });
    }
    let points = path.points()[k..path.len() - k].to_vec();
    Ok(SyncPath::into_trimmed(points, path.total_cost()))
}

/// Contents of `score.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub raw: f64,
    pub normalized: f64,
    pub denominator: f64,
    pub n_points: usize,
    pub trimmed: usize,
}

/// Scores `path` after trimming `trim` points from each end. The
/// denominator path is never trimmed.
pub fn score_path<T: Scalar>(
    path: &SyncPath<T>,
    gt: &SyncMatrix<T>,
    cfg: &PathSearchConfig,
    trim: usize,
) -> Result<ScoreReport> {
    let path = trim_endpoints(path, trim)?;
    let raw = raw_path_score(&path, gt)?;
    let denominator = raw_path_score(&ground_truth_best_path(gt, cfg)?, gt)?;
    let normalized = normalize(raw, denominator)?;
    Ok(ScoreReport {
        raw: raw.as_f64(),
        normalized: normalized.as_f64(),
        denominator: denominator.as_f64(),
        n_points: path.len(),
        trimmed: trim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::MatrixKind;

    fn gt(values: Vec<f64>, rows: usize, cols: usize) -> SyncMatrix<f64> {
        SyncMatrix::new(rows, cols, values, MatrixKind::GroundTruth).unwrap()
    }

    #[test]
    fn mean_of_points() {
        let m = gt(vec![1.0, 0.5, 0.0, 1.0], 2, 2);
        let p = SyncPath::new(vec![(0, 0), (0, 1)], 0.0);
        assert_eq!(raw_path_score(&p, &m).unwrap(), 0.75);
        let p = SyncPath::new(vec![(0, 0), (1, 1)], 0.0);
        assert_eq!(raw_path_score(&p, &m).unwrap(), 1.0);
    }

    #[test]
    fn out_of_bounds_and_masked() {
        let m = gt(vec![1.0; 4], 2, 2);
        let p = SyncPath::new(vec![(0, 0), (2, 1)], 0.0);
        assert!(matches!(raw_path_score(&p, &m), Err(Error::OutOfBounds { i: 2, .. })));
        let masked = SyncMatrix::with_mask(2, 2, vec![0.0; 4], Some(vec![true; 4]), MatrixKind::GroundTruth).unwrap();
        let p = SyncPath::new(vec![(0, 0), (1, 1)], 0.0);
        assert!(matches!(raw_path_score(&p, &masked), Err(Error::AllMasked)));
    }

    #[test]
    fn masked_points_are_skipped() {
        let mut mask = vec![false; 4];
        mask[3] = true;
        let m = SyncMatrix::with_mask(2, 2, vec![0.5, 0.0, 0.0, 0.0], Some(mask), MatrixKind::GroundTruth).unwrap();
        let p = SyncPath::new(vec![(0, 0), (1, 1)], 0.0);
        assert_eq!(raw_path_score(&p, &m).unwrap(), 0.5);
    }

    #[test]
    fn all_ones_normalizes_to_one() {
        let m = gt(vec![1.0; 36], 6, 6);
        let p = SyncPath::new((0..6).map(|k| (k, k)).collect(), 0.0);
        assert_eq!(normalized_score(&p, &m, &PathSearchConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn zero_denominator() {
        let m = gt(vec![0.0; 16], 4, 4);
        let p = SyncPath::new((0..4).map(|k| (k, k)).collect(), 0.0);
        assert!(matches!(
            normalized_score(&p, &m, &PathSearchConfig::default()),
            Err(Error::ZeroDenominator)
        ));
    }

    #[test]
    fn trimming() {
        let p = SyncPath::new((0..10).map(|k| (k, k)).collect(), 3.0);
        assert_eq!(trim_endpoints(&p, 0).unwrap(), p);
        let t = trim_endpoints(&p, 1).unwrap();
        assert_eq!(t.len(), 8);
        assert_eq!(t.points(), &p.points()[1..9]);
        assert!(t.trimmed());
        assert!(matches!(trim_endpoints(&p, 5), Err(Error::PathTooShort { len: 10, k: 5 })));
    }
}

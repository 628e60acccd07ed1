//! Cosine similarity and the soft pair loss over all pairs of a mini-batch.

use crate::error::{Error, Result};
use crate::Scalar;

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|x| *x * *x).sum::<T>().sqrt()
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

/// `a . b / (|a| |b|)`, clamped to `[-1, 1]` against rounding. The
/// denominator is taken as one square root of the product of squared norms,
/// which makes `cos(a, a)` exactly one.
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::FeatureDimMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na.is_zero() {
        return Err(Error::ZeroNorm { index: 0 });
    }
    if nb.is_zero() {
        return Err(Error::ZeroNorm { index: 1 });
    }
    let squares = dot(a, a) * dot(b, b);
    let denom = if squares.is_normal() { squares.sqrt() } else { na * nb };
    Ok((dot(a, b) / denom).max(-T::one()).min(T::one()))
}

/// Maps a cosine in `[-1, 1]` to `[0, 1]`.
#[inline]
pub fn normalized_cosine<T: Scalar>(c: T) -> T {
    T::of(0.5) * (c + T::one())
}

/// Pairwise targets for a batch of `n` feature vectors, row-major `n x n`.
/// `valid[i * n + j] == false` drops the pair from both the sum and the count.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTargets<T> {
    pub n: usize,
    pub targets: Vec<T>,
    pub valid: Vec<bool>,
}

impl<T: Scalar> PairTargets<T> {
    pub fn new(n: usize, targets: Vec<T>, valid: Option<Vec<bool>>) -> Result<Self> {
        let valid = valid.unwrap_or_else(|| vec![true; n * n]);
        if targets.len() != n * n || valid.len() != n * n {
            return Err(Error::InvalidParameter(format!(
                "pair targets for {n} vectors need {} entries",
                n * n
            )));
        }
        for (k, y) in targets.iter().enumerate() {
            if valid[k] && !(*y >= T::zero() && *y <= T::one()) {
                return Err(Error::InvalidParameter(format!(
                    "target {y} at pair ({}, {}) outside [0, 1]",
                    k / n,
                    k % n
                )));
            }
        }
        Ok(Self { n, targets, valid })
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Mean over valid pairs `(i, j)` (diagonal included) of
/// `(0.5 (cos_ij + 1) - y_ij)^2`. Without masking this is the sum over all
/// `N^2` pairs divided by `N^2`.
pub fn soft_pair_loss<T: Scalar>(features: &[Vec<T>], targets: &PairTargets<T>) -> Result<T> {
    let n = features.len();
    if n != targets.n {
        return Err(Error::InvalidParameter(format!(
            "{n} features for {} targets",
            targets.n
        )));
    }
    let count = targets.valid_count();
    if count == 0 {
        return Err(Error::NoValidPairs);
    }
    let norms = feature_norms(features)?;
    let mut total = T::zero();
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            if !targets.valid[k] {
                continue;
            }
            let c = (dot(&features[i], &features[j]) / (norms[i] * norms[j]))
                .max(-T::one())
                .min(T::one());
            let r = normalized_cosine(c) - targets.targets[k];
            total = total + r * r;
        }
    }
    Ok(total / T::of(count as f64))
}

fn feature_norms<T: Scalar>(features: &[Vec<T>]) -> Result<Vec<T>> {
    features
        .iter()
        .enumerate()
        .map(|(index, f)| {
            let n = norm(f);
            if n.is_zero() {
                Err(Error::ZeroNorm { index })
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// Loss value and its gradient with respect to every feature vector.
pub fn soft_pair_loss_with_grad<T: Scalar>(
    features: &[Vec<T>],
    targets: &PairTargets<T>,
) -> Result<(T, Vec<Vec<T>>)> {
    let loss = soft_pair_loss(features, targets)?;
    let n = features.len();
    let norms = feature_norms(features)?;
    let inv_count = T::one() / T::of(targets.valid_count() as f64);
    let mut grads: Vec<Vec<T>> = features.iter().map(|f| vec![T::zero(); f.len()]).collect();
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            // cos(a, a) is constant, so diagonal pairs carry no gradient.
            if !targets.valid[k] || i == j {
                continue;
            }
            let (a, b) = (&features[i], &features[j]);
            let (na, nb) = (norms[i], norms[j]);
            let c = dot(a, b) / (na * nb);
            // d/dc of (0.5 (c + 1) - y)^2 / count
            let upstream = (normalized_cosine(c) - targets.targets[k]) * inv_count;
            let inv_ab = T::one() / (na * nb);
            let ca = c / (na * na);
            let cb = c / (nb * nb);
            for d in 0..a.len() {
                grads[i][d] = grads[i][d] + upstream * (b[d] * inv_ab - ca * a[d]);
                grads[j][d] = grads[j][d] + upstream * (a[d] * inv_ab - cb * b[d]);
            }
        }
    }
    Ok((loss, grads))
}

//! Dense frame-by-frame matrices: similarity between two feature series,
//! the derived pathfinding cost, and ECG ground truth.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::FeatureSeries;
use crate::error::{Error, Result};
use crate::ingest::{numbered_lines, parse_count, parse_row, write_row};
use crate::training::cosine_similarity;
use crate::Scalar;

/// Cost assigned to masked ground-truth cells when they are searched over.
pub const MASKED_COST: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    Similarity,
    Cost,
    GroundTruth,
}

impl MatrixKind {
    fn range<T: Scalar>(self) -> (T, T) {
        match self {
            MatrixKind::Similarity => (-T::one(), T::one()),
            MatrixKind::Cost | MatrixKind::GroundTruth => (T::zero(), T::one()),
        }
    }
}

impl fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatrixKind::Similarity => "similarity",
            MatrixKind::Cost => "cost",
            MatrixKind::GroundTruth => "ground_truth",
        })
    }
}

impl FromStr for MatrixKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "similarity" => Ok(MatrixKind::Similarity),
            "cost" => Ok(MatrixKind::Cost),
            "ground_truth" => Ok(MatrixKind::GroundTruth),
            other => Err(Error::MalformedHeader(format!("unknown matrix kind {other:?}"))),
        }
    }
}

/// Row-major `rows x cols` matrix over (frame of A, frame of B).
///
/// Rows index windows of video A, columns windows of video B. Cells may be
/// masked, which only ground-truth matrices (and costs derived from them)
/// use, for frames without an enclosing pair of R-peaks.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncMatrix<T> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
    mask: Option<Vec<bool>>,
    kind: MatrixKind,
    pub rows_video: String,
    pub cols_video: String,
    /// Frame index of row 0 in video A.
    pub row_offset: usize,
    /// Frame index of column 0 in video B.
    pub col_offset: usize,
}

impl<T: Scalar> SyncMatrix<T> {
    pub fn new(rows: usize, cols: usize, values: Vec<T>, kind: MatrixKind) -> Result<Self> {
        Self::with_mask(rows, cols, values, None, kind)
    }

    pub fn with_mask(
        rows: usize,
        cols: usize,
        values: Vec<T>,
        mask: Option<Vec<bool>>,
        kind: MatrixKind,
    ) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::InvalidParameter(format!(
                "{rows}x{cols} matrix holds {} values",
                values.len()
            )));
        }
        if let Some(m) = &mask {
            if m.len() != values.len() {
                return Err(Error::InvalidParameter("mask size differs from matrix".into()));
            }
            if kind == MatrixKind::Similarity && m.iter().any(|&x| x) {
                return Err(Error::InvalidParameter("similarity matrices carry no mask".into()));
            }
        }
        let (lo, hi) = kind.range::<T>();
        for (k, v) in values.iter().enumerate() {
            let masked = mask.as_ref().is_some_and(|m| m[k]);
            if !masked && !(v.is_finite() && *v >= lo && *v <= hi) {
                return Err(Error::InvalidParameter(format!(
                    "{kind} value {v} at ({}, {}) outside [{lo}, {hi}]",
                    k / cols.max(1),
                    k % cols.max(1)
                )));
            }
        }
        let mask = mask.filter(|m| m.iter().any(|&x| x));
        Ok(Self {
            rows,
            cols,
            values,
            mask,
            kind,
            rows_video: String::new(),
            cols_video: String::new(),
            row_offset: 0,
            col_offset: 0,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        self.mask.as_ref().is_some_and(|m| m[i * self.cols + j])
    }

    pub fn has_mask(&self) -> bool {
        self.mask.is_some()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        let mut mask = self.mask.as_ref().map(|_| Vec::with_capacity(self.values.len()));
        for j in 0..self.cols {
            for i in 0..self.rows {
                values.push(self.get(i, j));
                if let Some(m) = &mut mask {
                    m.push(self.is_masked(i, j));
                }
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            values,
            mask,
            kind: self.kind,
            rows_video: self.cols_video.clone(),
            cols_video: self.rows_video.clone(),
            row_offset: self.col_offset,
            col_offset: self.row_offset,
        }
    }

    pub fn with_videos(mut self, rows_video: &str, cols_video: &str) -> Self {
        self.rows_video = rows_video.to_owned();
        self.cols_video = cols_video.to_owned();
        self
    }

    pub fn with_offsets(mut self, row_offset: usize, col_offset: usize) -> Self {
        self.row_offset = row_offset;
        self.col_offset = col_offset;
        self
    }

    /// Rounds every value through `f32`, as a store/load cycle would.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = v.quantize_f32());
        out
    }

    /// Writes `CSMAT v1 <rows> <cols> <kind>` and one line per row. Masked
    /// cells are written as `nan`.
    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "CSMAT v1 {} {} {}", self.rows, self.cols, self.kind)?;
        let mut row = Vec::with_capacity(self.cols);
        for i in 0..self.rows {
            row.clear();
            row.extend((0..self.cols).map(|j| {
                if self.is_masked(i, j) {
                    T::nan()
                } else {
                    self.get(i, j)
                }
            }));
            write_row(&mut out, &row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let lines = numbered_lines(path.as_ref())?;
        let (_, header) = lines
            .first()
            .ok_or_else(|| Error::MalformedHeader("empty matrix file".into()))?;
        let mut tokens = header.split_ascii_whitespace();
        if tokens.next() != Some("CSMAT") || tokens.next() != Some("v1") {
            return Err(Error::MalformedHeader(format!("expected `CSMAT v1`, got {header:?}")));
        }
        let rows = parse_count(tokens.next(), "row count", header)?;
        let cols = parse_count(tokens.next(), "column count", header)?;
        let kind: MatrixKind = tokens
            .next()
            .ok_or_else(|| Error::MalformedHeader(format!("missing kind in {header:?}")))?
            .parse()?;
        if lines.len() - 1 != rows {
            return Err(Error::MalformedHeader(format!(
                "header declares {rows} rows, file holds {}",
                lines.len() - 1
            )));
        }
        let allow_nan = kind != MatrixKind::Similarity;
        let mut values = Vec::with_capacity(rows * cols);
        for (no, line) in &lines[1..] {
            values.extend(parse_row::<T>(line, *no, cols, allow_nan)?);
        }
        let mask: Vec<bool> = values.iter().map(|v| v.is_nan()).collect();
        for v in values.iter_mut().filter(|v| v.is_nan()) {
            *v = T::zero();
        }
        Self::with_mask(rows, cols, values, Some(mask), kind)
    }

    /// 8-bit grayscale image, value range mapped onto 0..=255 (masked cells black).
    pub fn store_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let (lo, hi) = self.kind.range::<T>();
        let (lo, hi) = (lo.as_f64(), hi.as_f64());
        let mut bytes = Vec::with_capacity(self.values.len());
        for i in 0..self.rows {
            for j in 0..self.cols {
                bytes.push(if self.is_masked(i, j) {
                    0
                } else {
                    ((self.get(i, j).as_f64() - lo) / (hi - lo) * 255.0).round() as u8
                });
            }
        }
        let img = image::GrayImage::from_raw(self.cols as u32, self.rows as u32, bytes)
            .ok_or(Error::EmptyMatrix)?;
        img.save_with_format(path, image::ImageFormat::Pnm)?;
        Ok(())
    }
}

/// Cosine similarity between every vector of `fa` (rows) and `fb` (columns).
pub fn similarity_matrix<T: Scalar>(
    fa: &FeatureSeries<T>,
    fb: &FeatureSeries<T>,
) -> Result<SyncMatrix<T>> {
    if fa.is_empty() || fb.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if fa.dim() != fb.dim() {
        return Err(Error::FeatureDimMismatch {
            left: fa.dim(),
            right: fb.dim(),
        });
    }
    // Reported indices: rows of A first, then B offset by |A|.
    let norms = |s: &FeatureSeries<T>, base: usize| -> Result<Vec<T>> {
        s.vectors()
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let n = v.iter().map(|x| *x * *x).sum::<T>().sqrt();
                if n.is_zero() {
                    Err(Error::ZeroNorm { index: base + k })
                } else {
                    Ok(n)
                }
            })
            .collect()
    };
    norms(fa, 0)?;
    norms(fb, fa.len())?;

    let rows: Vec<Vec<T>> = fa
        .vectors()
        .par_iter()
        .map(|a| {
            fb.vectors()
                .iter()
                .map(|b| cosine_similarity(a, b).expect("norms checked above"))
                .collect()
        })
        .collect();
    let matrix = SyncMatrix::new(fa.len(), fb.len(), rows.concat(), MatrixKind::Similarity)?;
    Ok(matrix.with_offsets(fa.first_window_last_frame(), fb.first_window_last_frame()))
}

/// Inverts a similarity (`1 - 0.5 (s + 1)`) or ground-truth (`1 - y`)
/// matrix into pathfinding costs. Masked cells get [`MASKED_COST`].
pub fn to_cost<T: Scalar>(m: &SyncMatrix<T>) -> Result<SyncMatrix<T>> {
    let half = T::of(0.5);
    let values: Vec<T> = match m.kind() {
        MatrixKind::Similarity => m.values().iter().map(|s| T::one() - half * (*s + T::one())).collect(),
        MatrixKind::GroundTruth => (0..m.rows())
            .flat_map(|i| (0..m.cols()).map(move |j| (i, j)))
            .map(|(i, j)| {
                if m.is_masked(i, j) {
                    T::of(MASKED_COST)
                } else {
                    T::one() - m.get(i, j)
                }
            })
            .collect(),
        MatrixKind::Cost => {
            return Err(Error::WrongKind {
                expected: "similarity or ground_truth".into(),
                found: m.kind().to_string(),
            })
        }
    };
    let mut cost = SyncMatrix::with_mask(m.rows(), m.cols(), values, m.mask.clone(), MatrixKind::Cost)?;
    cost.rows_video = m.rows_video.clone();
    cost.cols_video = m.cols_video.clone();
    cost.row_offset = m.row_offset;
    cost.col_offset = m.col_offset;
    Ok(cost)
}

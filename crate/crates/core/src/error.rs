use std::fmt;

/// Pipeline stage an error originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    ContrastWindow,
    Windows,
    Embed,
    Similarity,
    Cost,
    Pathfinding,
    Peaks,
    GroundTruth,
    Score,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::ContrastWindow => "contrast-window",
            Stage::Windows => "windows",
            Stage::Embed => "embed",
            Stage::Similarity => "similarity",
            Stage::Cost => "cost",
            Stage::Pathfinding => "pathfinding",
            Stage::Peaks => "peaks",
            Stage::GroundTruth => "ground-truth",
            Stage::Score => "score",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("video has no temporal intensity change")]
    SignalFlat,
    #[error("contrast window [{start}, {end}) is shorter than 3 frames")]
    WindowTooShort { start: usize, end: usize },
    #[error("need at least {needed} frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("invalid frame series: {0}")]
    InvalidFrames(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("line {line}: expected {expected} values, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: non-finite value")]
    NonFinite { line: usize },
    #[error("ECG sampling rate is missing")]
    MissingSamplingRate,
    #[error("ECG timestamps are not strictly increasing at row {row}")]
    NonMonotoneTimestamps { row: usize },
    #[error("found {found} R-peaks, at least 2 are required")]
    TooFewPeaks { found: usize },
    #[error("phase track has no valid frame")]
    AllInvalid,
    #[error("feature dimension mismatch: {left} vs {right}")]
    FeatureDimMismatch { left: usize, right: usize },
    #[error("zero-norm feature vector at index {index}")]
    ZeroNorm { index: usize },
    #[error("expected a {expected} matrix, got {found}")]
    WrongKind { expected: String, found: String },
    #[error("matrix is empty")]
    EmptyMatrix,
    #[error("start ({i}, {j}) is not on the entry border of a {h}x{w} matrix")]
    InvalidStart { i: usize, j: usize, h: usize, w: usize },
    #[error("no candidate path reaches {required} points (longest found: {longest})")]
    NoCandidate { required: usize, longest: usize },
    #[error("path point ({i}, {j}) lies outside the {h}x{w} matrix")]
    OutOfBounds { i: usize, j: usize, h: usize, w: usize },
    #[error("every path point falls on a masked cell")]
    AllMasked,
    #[error("normalization denominator is zero")]
    ZeroDenominator,
    #[error("path of {len} points is too short to trim {k} from each end")]
    PathTooShort { len: usize, k: usize },
    #[error("batch has no valid pair")]
    NoValidPairs,
    #[error("insufficient frames: {0}")]
    InsufficientFrames(String),
    #[error("training diverged at step {step} (loss {loss})")]
    Divergence { step: usize, loss: f64 },
    #[error("embedder expects {expected:?} frames, got {found:?}")]
    InputShape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error("{stage} stage: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for failures of the numerics on otherwise well-formed input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::SignalFlat
            | Error::TooFewPeaks { .. }
            | Error::AllInvalid
            | Error::ZeroNorm { .. }
            | Error::NoCandidate { .. }
            | Error::AllMasked
            | Error::ZeroDenominator
            | Error::NoValidPairs
            | Error::Divergence { .. } => true,
            Error::Stage { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|source| match source {
            tagged @ Error::Stage { .. } => tagged,
            source => Error::Stage {
                stage,
                source: Box::new(source),
            },
        })
    }
}

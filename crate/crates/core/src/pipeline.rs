//! The end-to-end run: contrast window, windows, embedding, similarity,
//! cost, best path and, when both ECGs are present, the score.
//!
//! Features and the ground truth are rounded through `f32` exactly where the
//! file-based subcommands would store and reload them, so chaining those
//! subcommands reproduces a run bit for bit.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::ecg::{detect_r_peaks, EcgTrace, DEFAULT_MIN_GAP_S, DEFAULT_SIGMA_S};
use crate::embedding::{embed_series, make_windows, Embedder, FeatureSeries, PhaseOracleEmbedder, WindowSpec};
use crate::error::{Error, Result, Stage, StageExt};
use crate::ingest::{discover_video_dirs, extract_contrast_window, load_ecg, load_frame_dir, store_feature_series, ContrastWindow, FrameSeries, ECG_FILE};
use crate::matrix::{similarity_matrix, to_cost, SyncMatrix};
use crate::pathfinding::{find_best_path, PathFile, PathSearchConfig, SyncPath};
use crate::phase::{compute_phase, ground_truth_matrix, PhaseTrack};
use crate::scoring::{score_path, ScoreReport};
use crate::synth::{SynthView, ViewTruth, TRUTH_FILE};
use crate::training::{ToyMlp, TrainVideo};
use crate::Scalar;

/// A video with whatever timing references came with it.
#[derive(Debug, Clone)]
pub struct VideoInput<T> {
    pub frames: FrameSeries<T>,
    pub ecg: Option<EcgTrace<T>>,
    /// Known per-frame phase (synthetic data), preferred by the oracle
    /// embedder over ECG-derived phase.
    pub known_phases: Option<PhaseTrack<T>>,
    pub patient_id: Option<String>,
}

impl<T: Scalar> VideoInput<T> {
    /// Reads a video directory: frames and descriptor, plus `ecg.csv` and
    /// `truth.json` when present.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (frames, descriptor) = load_frame_dir(dir)?;
        let ecg_path = dir.join(ECG_FILE);
        let ecg = if ecg_path.exists() {
            Some(load_ecg(&ecg_path, &descriptor)?)
        } else {
            None
        };
        let truth_path = dir.join(TRUTH_FILE);
        let known_phases = if truth_path.exists() {
            let truth: ViewTruth = serde_json::from_str(&fs::read_to_string(truth_path)?)?;
            Some(PhaseTrack::from_phases(truth.phases.into_iter().map(T::of).collect())?)
        } else {
            None
        };
        Ok(Self {
            frames,
            ecg,
            known_phases,
            patient_id: descriptor.patient_id,
        })
    }
}

impl<T: Scalar> From<SynthView<T>> for VideoInput<T> {
    fn from(v: SynthView<T>) -> Self {
        Self {
            frames: v.frames,
            ecg: Some(v.ecg),
            known_phases: Some(v.phases),
            patient_id: Some(v.patient_id),
        }
    }
}

/// How window features are produced.
#[derive(Debug, Clone)]
pub enum EmbedderChoice<T> {
    /// Phase oracle with the given output dimension and feature noise.
    Oracle { dim: usize, noise_sigma: f64 },
    Mlp { mlp: ToyMlp<T>, source: String },
    /// Features computed elsewhere, one series per video.
    Precomputed {
        a: FeatureSeries<T>,
        b: FeatureSeries<T>,
        source: String,
    },
}

impl<T> EmbedderChoice<T> {
    pub fn describe(&self) -> String {
        match self {
            EmbedderChoice::Oracle { dim, noise_sigma } => format!("oracle(dim={dim}, noise={noise_sigma})"),
            EmbedderChoice::Mlp { source, .. } => format!("mlp:{source}"),
            EmbedderChoice::Precomputed { source, .. } => format!("file:{source}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub search: PathSearchConfig,
    pub sigma_s: f64,
    pub min_gap_s: f64,
    pub seed: u64,
    /// Endpoints trimmed before scoring.
    pub trim: usize,
    pub timestamp: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            search: PathSearchConfig::default(),
            sigma_s: DEFAULT_SIGMA_S,
            min_gap_s: DEFAULT_MIN_GAP_S,
            seed: 0,
            trim: 0,
            timestamp: true,
        }
    }
}

/// Oracle noise seeds for the two views, kept distinct so their noise is
/// independent.
pub fn oracle_seeds(seed: u64) -> [u64; 2] {
    [seed, seed.wrapping_add(1)]
}

/// Phase per frame from the video's ECG.
pub fn ecg_phase_track<T: Scalar>(video: &VideoInput<T>, cfg: &PipelineConfig) -> Result<Option<(PhaseTrack<T>, usize)>> {
    let Some(ecg) = &video.ecg else {
        return Ok(None);
    };
    let peaks = detect_r_peaks(ecg, cfg.sigma_s, cfg.min_gap_s).stage(Stage::Peaks)?;
    let track = compute_phase(&peaks, video.frames.len()).stage(Stage::Peaks)?;
    Ok(Some((track, peaks.len())))
}

/// Features of one video's contrast window.
pub fn embed_video<T: Scalar>(
    video: &VideoInput<T>,
    choice: &EmbedderChoice<T>,
    which: usize,
    cfg: &PipelineConfig,
) -> Result<(ContrastWindow, FeatureSeries<T>)> {
    let window = extract_contrast_window(&video.frames).stage(Stage::ContrastWindow)?;
    let windows = make_windows(&video.frames, &window).stage(Stage::Windows)?;
    let features = match choice {
        EmbedderChoice::Oracle { dim, noise_sigma } => {
            let phases = match &video.known_phases {
                Some(p) => p.clone(),
                None => match ecg_phase_track(video, cfg)? {
                    Some((p, _)) => p,
                    None => {
                        return Err(Error::InvalidParameter(format!(
                            "oracle embedder needs known phases or an ECG for {}",
                            video.frames.video_id()
                        )))
                        .stage(Stage::Embed)
                    }
                },
            };
            let e = PhaseOracleEmbedder::new(phases, *dim, *noise_sigma, oracle_seeds(cfg.seed)[which]).stage(Stage::Embed)?;
            embed_with(&e, &windows)
        }
        EmbedderChoice::Mlp { mlp, .. } => embed_with(mlp, &windows),
        EmbedderChoice::Precomputed { a, b, .. } => {
            let series = if which == 0 { a } else { b };
            if series.len() == windows.len() {
                Ok(series.clone().with_first_window_last_frame(window.start + 2))
            } else {
                Err(Error::InvalidParameter(format!(
                    "{} precomputed vectors for {} windows of {}",
                    series.len(),
                    windows.len(),
                    video.frames.video_id()
                )))
            }
        }
    }
    .stage(Stage::Embed)?;
    Ok((window, features.quantized()))
}

fn embed_with<T: Scalar>(e: &dyn Embedder<T>, windows: &[WindowSpec<'_, T>]) -> Result<FeatureSeries<T>> {
    embed_series(e, windows)
}

/// Training videos from every video directory below `root`, with phase
/// from each video's ECG. Videos without a patient id count as their own
/// patient.
pub fn load_training_set<T: Scalar>(root: impl AsRef<Path>, cfg: &PipelineConfig) -> Result<Vec<TrainVideo<T>>> {
    let dirs = discover_video_dirs(root)?;
    if dirs.is_empty() {
        return Err(Error::InsufficientFrames("no video directories found".into()));
    }
    dirs.iter()
        .map(|dir| {
            let video = VideoInput::<T>::load_dir(dir)?;
            let (phases, _) = ecg_phase_track(&video, cfg)?.ok_or_else(|| {
                Error::InvalidParameter(format!("{} has no {ECG_FILE}", dir.display()))
            })?;
            let window = extract_contrast_window(&video.frames).stage(Stage::ContrastWindow)?;
            let patient = video
                .patient_id
                .clone()
                .unwrap_or_else(|| video.frames.video_id().to_owned());
            TrainVideo::new(video.frames, phases, window, patient)
        })
        .collect()
}

/// Similarity, cost and best path between two feature series.
pub fn synchronize<T: Scalar>(
    fa: &FeatureSeries<T>,
    fb: &FeatureSeries<T>,
    search: &PathSearchConfig,
) -> Result<(SyncMatrix<T>, SyncPath<T>)> {
    let sim = similarity_matrix(fa, fb).stage(Stage::Similarity)?;
    let cost = to_cost(&sim).stage(Stage::Cost)?;
    let path = find_best_path(&cost, search).stage(Stage::Pathfinding)?;
    Ok((sim, path))
}

/// Ground truth in window coordinates from both ECGs, rounded as stored.
/// `None` if either video lacks an ECG.
pub fn pair_ground_truth<T: Scalar>(
    a: &VideoInput<T>,
    b: &VideoInput<T>,
    cfg: &PipelineConfig,
) -> Result<Option<(SyncMatrix<T>, [usize; 2])>> {
    let (Some((pa, na)), Some((pb, nb))) = (ecg_phase_track(a, cfg)?, ecg_phase_track(b, cfg)?) else {
        return Ok(None);
    };
    let wa = extract_contrast_window(&a.frames).stage(Stage::ContrastWindow)?;
    let wb = extract_contrast_window(&b.frames).stage(Stage::ContrastWindow)?;
    let gt = ground_truth_matrix(&pa.slice(wa.start + 2..wa.end), &pb.slice(wb.start + 2..wb.end))
        .stage(Stage::GroundTruth)?
        .quantized()
        .with_videos(a.frames.video_id(), b.frames.video_id())
        .with_offsets(wa.start + 2, wb.start + 2);
    Ok(Some((gt, [na, nb])))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSummary {
    pub video_id: String,
    pub frames: usize,
    pub fps: f64,
    pub contrast_window: [usize; 2],
    pub windows: usize,
    pub r_peaks: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub embedder: String,
    pub seed: u64,
    pub start_stride: usize,
    pub min_length_fraction: f64,
    pub sigma_s: f64,
    pub min_gap_s: f64,
    pub trim: usize,
}

/// `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub tool: ToolInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_unix_s: Option<u64>,
    pub config: RunSettings,
    pub video_a: VideoSummary,
    pub video_b: VideoSummary,
    pub matrix_shape: [usize; 2],
    pub path: PathFile,
    /// `None` without both ECGs.
    pub score: Option<ScoreReport>,
    /// Untrimmed and one-point-trimmed scores side by side.
    pub trim_comparison: Option<[ScoreReport; 2]>,
}

impl PipelineReport {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput<T> {
    pub features_a: FeatureSeries<T>,
    pub features_b: FeatureSeries<T>,
    pub similarity: SyncMatrix<T>,
    pub path: SyncPath<T>,
    pub ground_truth: Option<SyncMatrix<T>>,
    pub report: PipelineReport,
}

pub fn run_pipeline<T: Scalar>(
    a: &VideoInput<T>,
    b: &VideoInput<T>,
    embedder: &EmbedderChoice<T>,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput<T>> {
    cfg.search.validate()?;
    let (wa, fa) = embed_video(a, embedder, 0, cfg)?;
    let (wb, fb) = embed_video(b, embedder, 1, cfg)?;
    let (similarity, path) = synchronize(&fa, &fb, &cfg.search)?;
    let similarity = similarity.with_videos(a.frames.video_id(), b.frames.video_id());

    let gt = pair_ground_truth(a, b, cfg)?;
    let (score, trim_comparison, peaks) = match &gt {
        Some((gt, peaks)) => {
            let score = score_path(&path, gt, &cfg.search, cfg.trim).stage(Stage::Score)?;
            let k0 = score_path(&path, gt, &cfg.search, 0).stage(Stage::Score)?;
            let k1 = score_path(&path, gt, &cfg.search, 1).ok();
            (Some(score), k1.map(|k1| [k0, k1]), [Some(peaks[0]), Some(peaks[1])])
        }
        None => (None, None, [None, None]),
    };

    let summary = |v: &VideoInput<T>, w: &ContrastWindow, f: &FeatureSeries<T>, peaks| VideoSummary {
        video_id: v.frames.video_id().to_owned(),
        frames: v.frames.len(),
        fps: v.frames.fps(),
        contrast_window: [w.start, w.end],
        windows: f.len(),
        r_peaks: peaks,
    };
    let report = PipelineReport {
        tool: ToolInfo {
            name: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
        generated_unix_s: cfg
            .timestamp
            .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())),
        config: RunSettings {
            embedder: embedder.describe(),
            seed: cfg.seed,
            start_stride: cfg.search.start_stride,
            min_length_fraction: cfg.search.min_length_fraction,
            sigma_s: cfg.sigma_s,
            min_gap_s: cfg.min_gap_s,
            trim: cfg.trim,
        },
        video_a: summary(a, &wa, &fa, peaks[0]),
        video_b: summary(b, &wb, &fb, peaks[1]),
        matrix_shape: [similarity.rows(), similarity.cols()],
        path: path.to_file(),
        score,
        trim_comparison,
    };
    Ok(PipelineOutput {
        features_a: fa,
        features_b: fb,
        similarity,
        path,
        ground_truth: gt.map(|(m, _)| m),
        report,
    })
}

impl<T: Scalar> PipelineOutput<T> {
    /// Writes `features_a.csfeat`, `features_b.csfeat`, `similarity.csmat`,
    /// `path.json`, `report.json` and, when scored, `ground_truth.csmat` and
    /// `score.json`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        store_feature_series(&self.features_a, dir.join("features_a.csfeat"))?;
        store_feature_series(&self.features_b, dir.join("features_b.csfeat"))?;
        self.similarity.store(dir.join("similarity.csmat"))?;
        self.path.store_json(dir.join("path.json"))?;
        if let Some(gt) = &self.ground_truth {
            gt.store(dir.join("ground_truth.csmat"))?;
        }
        if let Some(score) = &self.report.score {
            let mut text = serde_json::to_string_pretty(score)?;
            text.push('\n');
            fs::write(dir.join("score.json"), text)?;
        }
        fs::write(dir.join("report.json"), self.report.to_json()?)?;
        Ok(())
    }
}

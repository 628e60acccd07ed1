use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cyclosync::ecg::{detect_r_peaks, DEFAULT_MIN_GAP_S, DEFAULT_SIGMA_S};
use cyclosync::ingest::{load_ecg, load_feature_series, store_feature_series, Descriptor, DESCRIPTOR_FILE};
use cyclosync::matrix::{similarity_matrix, SyncMatrix};
use cyclosync::pathfinding::{PathSearchConfig, SyncPath};
use cyclosync::pipeline::{
    embed_video, load_training_set, oracle_seeds, pair_ground_truth, run_pipeline, synchronize, EmbedderChoice,
    PipelineConfig, VideoInput,
};
use cyclosync::scoring::score_path;
use cyclosync::synth::{generate_pair, PairSpec};
use cyclosync::training::{train, ToyMlp, TrainConfig};
use cyclosync::Error;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "cyclosync", version, about = "Synchronize two videos of a cyclic process")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "CYCLOSYNC_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect ECG R-peaks and write them in video frame units.
    DetectPeaks(DetectPeaks),
    /// Embed the contrast window of a video into a feature file.
    Embed(Embed),
    /// Cosine similarity matrix between two feature files.
    Simmatrix(Simmatrix),
    /// Best synchronization path between two feature files.
    Sync(Sync),
    /// Ground-truth matrix of two video directories from their ECGs.
    Groundtruth(Groundtruth),
    /// Score a path against a ground-truth matrix.
    Score(Score),
    /// Train the toy embedder on a directory of videos.
    Train(Train),
    /// Generate a synthetic two-view dataset.
    Simulate(Simulate),
    /// Full pipeline on two video directories.
    Run(Run),
}

#[derive(Args)]
struct Search {
    /// Distance between start cells on the first row and column.
    #[arg(long, default_value_t = 5)]
    stride: usize,
    /// Minimum path length as a fraction of the smaller matrix side.
    #[arg(long, default_value_t = 0.9)]
    min_length: f64,
}

impl Search {
    fn config(&self) -> PathSearchConfig {
        PathSearchConfig {
            start_stride: self.stride,
            min_length_fraction: self.min_length,
        }
    }
}

#[derive(Args)]
struct Peaks {
    /// Gaussian smoothing width in seconds.
    #[arg(long, default_value_t = DEFAULT_SIGMA_S)]
    sigma: f64,
    /// Minimum R-peak spacing in seconds.
    #[arg(long, default_value_t = DEFAULT_MIN_GAP_S)]
    min_gap: f64,
}

#[derive(Args)]
struct DetectPeaks {
    #[arg(long)]
    ecg: PathBuf,
    /// JSON descriptor with fps, ecg_hz and frame0_time_s; defaults to the
    /// descriptor next to the ECG file.
    #[arg(long)]
    descriptor: Option<PathBuf>,
    #[arg(long)]
    ecg_hz: Option<f64>,
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    frame0: Option<f64>,
    #[command(flatten)]
    peaks: Peaks,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmbedderArgs {
    /// `oracle`, `mlp:<weights>` or `file:<features>`.
    #[arg(long, default_value = "oracle")]
    embedder: String,
    /// Oracle output dimension.
    #[arg(long, default_value_t = 4)]
    dim: usize,
    /// Oracle feature noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Args)]
struct Embed {
    #[arg(long)]
    video: PathBuf,
    #[command(flatten)]
    embedder: EmbedderArgs,
    /// Oracle noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    peaks: Peaks,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Simmatrix {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pgm: Option<PathBuf>,
}

#[derive(Args)]
struct Sync {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[command(flatten)]
    search: Search,
    #[arg(long)]
    out: PathBuf,
    /// Similarity matrix with the path drawn on top.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct Groundtruth {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[command(flatten)]
    peaks: Peaks,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pgm: Option<PathBuf>,
}

#[derive(Args)]
struct Score {
    #[arg(long)]
    path: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Points dropped from each end before scoring.
    #[arg(long, default_value_t = 0)]
    trim: usize,
    #[command(flatten)]
    search: Search,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    /// Output feature dimension.
    #[arg(long, default_value_t = 4)]
    fc: usize,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    /// Batch size.
    #[arg(long, default_value_t = 12)]
    bs: usize,
    /// Dropout rate.
    #[arg(long, default_value_t = 0.0)]
    dr: f64,
    /// Max cycles between same-video pairs (0 disables).
    #[arg(long, default_value_t = 0.0)]
    mc: f64,
    /// Inter-video pairs.
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    ivp: bool,
    /// Data augmentation.
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    da: bool,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long)]
    batches_per_epoch: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    peaks: Peaks,
    #[arg(long)]
    out: PathBuf,
    /// Loss history as JSON.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct Simulate {
    #[arg(long, default_value_t = 70.0)]
    hr_a: f64,
    #[arg(long, default_value_t = 85.0)]
    hr_b: f64,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Frame rate of view B; defaults to `--fps`.
    #[arg(long)]
    fps_b: Option<f64>,
    /// Clip duration in seconds.
    #[arg(long, default_value_t = 8.0)]
    dur: f64,
    /// Pixel noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Texture seed of view A; view B uses the next one.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Simultaneous acquisition: view B shares view A's timing.
    #[arg(long)]
    biplane: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Run {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[command(flatten)]
    embedder: EmbedderArgs,
    /// Feature file of video B when `--embedder file:<a>` is used.
    #[arg(long)]
    features_b: Option<PathBuf>,
    #[command(flatten)]
    search: Search,
    #[command(flatten)]
    peaks: Peaks,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    trim: usize,
    /// Leave the generation time out of the report.
    #[arg(long)]
    no_timestamp: bool,
    #[arg(long)]
    out: PathBuf,
}

type CliResult = Result<(), Error>;

/// Io errors from the library do not carry the path, so inputs are checked
/// up front for a readable message.
fn input(path: &Path) -> Result<&Path, Error> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::InvalidParameter(format!("{} does not exist", path.display())))
    }
}

fn write_json<S: Serialize>(value: &S, path: &Path) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn pipeline_config(peaks: &Peaks, search: PathSearchConfig, seed: u64) -> PipelineConfig {
    PipelineConfig {
        search,
        sigma_s: peaks.sigma,
        min_gap_s: peaks.min_gap,
        seed,
        ..PipelineConfig::default()
    }
}

fn embedder_choice(args: &EmbedderArgs, features_b: Option<&Path>) -> Result<EmbedderChoice<f64>, Error> {
    let spec = args.embedder.as_str();
    if spec == "oracle" {
        return Ok(EmbedderChoice::Oracle {
            dim: args.dim,
            noise_sigma: args.noise,
        });
    }
    if let Some(path) = spec.strip_prefix("mlp:") {
        return Ok(EmbedderChoice::Mlp {
            mlp: ToyMlp::load(input(Path::new(path))?)?,
            source: path.to_owned(),
        });
    }
    if let Some(path) = spec.strip_prefix("file:") {
        let a = load_feature_series(input(Path::new(path))?)?;
        let b = match features_b {
            Some(p) => load_feature_series(input(p)?)?,
            None => a.clone(),
        };
        return Ok(EmbedderChoice::Precomputed {
            a,
            b,
            source: path.to_owned(),
        });
    }
    Err(Error::InvalidParameter(format!(
        "unknown embedder {spec:?}; use oracle, mlp:<weights> or file:<features>"
    )))
}

fn detect_peaks(args: DetectPeaks) -> CliResult {
    let descriptor_path = args
        .descriptor
        .clone()
        .or_else(|| Some(args.ecg.parent()?.join(DESCRIPTOR_FILE)).filter(|p| p.exists()));
    let mut meta = match descriptor_path {
        Some(p) => Descriptor::load(input(&p)?)?,
        None => Descriptor::default(),
    };
    meta.ecg_hz = args.ecg_hz.or(meta.ecg_hz);
    meta.fps = args.fps.or(meta.fps);
    meta.frame0_time_s = args.frame0.or(meta.frame0_time_s);
    let trace = load_ecg::<f64>(input(&args.ecg)?, &meta)?;
    let peaks = detect_r_peaks(&trace, args.peaks.sigma, args.peaks.min_gap)?;
    write_json(&peaks, &args.out)
}

fn embed(args: Embed) -> CliResult {
    let video = VideoInput::<f64>::load_dir(input(&args.video)?)?;
    let choice = embedder_choice(&args.embedder, None)?;
    let cfg = pipeline_config(&args.peaks, PathSearchConfig::default(), args.seed);
    let (_, features) = embed_video(&video, &choice, 0, &cfg)?;
    store_feature_series(&features, &args.out)
}

fn simmatrix(args: Simmatrix) -> CliResult {
    let fa = load_feature_series::<f64>(input(&args.a)?)?;
    let fb = load_feature_series::<f64>(input(&args.b)?)?;
    let sim = similarity_matrix(&fa, &fb)?;
    sim.store(&args.out)?;
    if let Some(pgm) = &args.pgm {
        sim.store_pgm(pgm)?;
    }
    Ok(())
}

fn sync(args: Sync) -> CliResult {
    let fa = load_feature_series::<f64>(input(&args.a)?)?;
    let fb = load_feature_series::<f64>(input(&args.b)?)?;
    let (sim, path) = synchronize(&fa, &fb, &args.search.config())?;
    path.store_json(&args.out)?;
    if let Some(svg) = &args.svg {
        fs::write(svg, overlay_svg(&sim, &path))?;
    }
    Ok(())
}

/// One grey cell per matrix entry, brighter for more similar, with the path
/// as a red polyline through cell centres.
fn overlay_svg(sim: &SyncMatrix<f64>, path: &SyncPath<f64>) -> String {
    let (h, w) = sim.shape();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w} {h}" width="{}" height="{}" shape-rendering="crispEdges">"#,
        w * 4,
        h * 4
    );
    for i in 0..h {
        for j in 0..w {
            let level = (0.5 * (sim.get(i, j) + 1.0) * 255.0).round() as u8;
            let _ = writeln!(
                svg,
                r#"<rect x="{j}" y="{i}" width="1" height="1" fill="rgb({level},{level},{level})"/>"#
            );
        }
    }
    let points: Vec<String> = path
        .points()
        .iter()
        .map(|(i, j)| format!("{}.5,{}.5", j, i))
        .collect();
    let _ = writeln!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="red" stroke-width="0.4"/>"#,
        points.join(" ")
    );
    svg.push_str("</svg>\n");
    svg
}

fn groundtruth(args: Groundtruth) -> CliResult {
    let a = VideoInput::<f64>::load_dir(input(&args.a)?)?;
    let b = VideoInput::<f64>::load_dir(input(&args.b)?)?;
    let cfg = pipeline_config(&args.peaks, PathSearchConfig::default(), 0);
    let (gt, _) = pair_ground_truth(&a, &b, &cfg)?
        .ok_or_else(|| Error::InvalidParameter("both video directories need an ECG".into()))?;
    gt.store(&args.out)?;
    if let Some(pgm) = &args.pgm {
        gt.store_pgm(pgm)?;
    }
    Ok(())
}

fn score(args: Score) -> CliResult {
    let path = SyncPath::<f64>::load_json(input(&args.path)?)?;
    let gt = SyncMatrix::<f64>::load(input(&args.gt)?)?;
    let report = score_path(&path, &gt, &args.search.config(), args.trim)?;
    write_json(&report, &args.out)
}

#[derive(Serialize)]
struct History<'a> {
    initial_loss: f64,
    loss_history: &'a [f64],
    config: &'a TrainConfig,
}

fn train_cmd(args: Train) -> CliResult {
    let cfg = pipeline_config(&args.peaks, PathSearchConfig::default(), args.seed);
    let data = load_training_set::<f64>(input(&args.data)?, &cfg)?;
    let train_cfg = TrainConfig {
        batch_size: args.bs,
        max_cycles: args.mc,
        inter_video_pairs: args.ivp,
        dropout_rate: args.dr,
        learning_rate: args.lr,
        momentum: args.momentum,
        epochs: args.epochs,
        batches_per_epoch: args.batches_per_epoch,
        seed: args.seed,
        data_augmentation: args.da,
        hidden: args.hidden,
        fc: args.fc,
    };
    let outcome = train(&data, &train_cfg)?;
    outcome.mlp.store(&args.out)?;
    if let Some(history) = &args.history {
        write_json(
            &History {
                initial_loss: outcome.initial_loss,
                loss_history: &outcome.loss_history,
                config: &train_cfg,
            },
            history,
        )?;
    }
    if let Some(last) = outcome.final_loss() {
        eprintln!("final loss {last:.6} (initial {:.6})", outcome.initial_loss);
    }
    Ok(())
}

fn simulate(args: Simulate) -> CliResult {
    let spec = PairSpec {
        hr_a: args.hr_a,
        hr_b: args.hr_b,
        fps_a: args.fps,
        fps_b: args.fps_b.unwrap_or(args.fps),
        duration_s: args.dur,
        frame_size: args.size,
        seed_a: args.seed,
        seed_b: args.seed.wrapping_add(1),
        noise_sigma: args.noise,
        biplane: args.biplane,
    };
    let pair = generate_pair::<f64>(&spec)?;
    pair.a.write_dir(args.out.join("a"))?;
    pair.b.write_dir(args.out.join("b"))?;
    write_json(&spec, &args.out.join("pair.json"))
}

fn run(args: Run) -> CliResult {
    let a = VideoInput::<f64>::load_dir(input(&args.a)?)?;
    let b = VideoInput::<f64>::load_dir(input(&args.b)?)?;
    let choice = embedder_choice(&args.embedder, args.features_b.as_deref())?;
    let cfg = PipelineConfig {
        trim: args.trim,
        timestamp: !args.no_timestamp,
        ..pipeline_config(&args.peaks, args.search.config(), args.seed)
    };
    let out = run_pipeline(&a, &b, &choice, &cfg)?;
    out.write_dir(&args.out)?;
    match &out.report.score {
        Some(s) => eprintln!("normalized score {:.4} over {} points", s.normalized, s.n_points),
        None => eprintln!("no ECG for both videos; path written without a score"),
    }
    let [seed_a, seed_b] = oracle_seeds(args.seed);
    if matches!(choice, EmbedderChoice::Oracle { .. }) && args.embedder.noise > 0.0 {
        eprintln!("oracle noise seeds: a {seed_a}, b {seed_b}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::DetectPeaks(a) => detect_peaks(a),
        Command::Embed(a) => embed(a),
        Command::Simmatrix(a) => simmatrix(a),
        Command::Sync(a) => sync(a),
        Command::Groundtruth(a) => groundtruth(a),
        Command::Score(a) => score(a),
        Command::Train(a) => train_cmd(a),
        Command::Simulate(a) => simulate(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}

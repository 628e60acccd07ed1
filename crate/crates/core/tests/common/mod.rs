//! Criterion checks shared by the integration tests and the acceptance
//! runner. Each returns `Ok(detail)` or `Err(reason)`.
#![allow(dead_code)]

use cyclosync::ecg::{detect_r_peak_samples, PeakList, DEFAULT_MIN_GAP_S, DEFAULT_SIGMA_S};
use cyclosync::matrix::{MatrixKind, SyncMatrix};
use cyclosync::pathfinding::{constrained_dijkstra, find_best_path, Direction, PathSearchConfig, SyncPath, MAX_RUN};
use cyclosync::phase::{compute_phase, ground_truth_best_path, ground_truth_matrix, sync_level, PhaseTrack};
use cyclosync::pipeline::{run_pipeline, EmbedderChoice, PipelineConfig, VideoInput};
use cyclosync::scoring::{normalized_score, trim_endpoints};
use cyclosync::synth::{generate_pair, generate_view, training_views, PairSpec, ViewSpec};
use cyclosync::training::{
    cosine_similarity, sample_batch, soft_pair_loss, train, PairTargets, ToyMlp, TrainConfig, TrainVideo,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Cosine similarity and the soft pair loss.

pub fn loss_unit_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let d = rng.random_range(1..20);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        let scaled: Vec<f64> = a.iter().map(|x| 4.0 * x).collect();
        let same = cosine_similarity(&a, &a).map_err(|e| e.to_string())?;
        let opposite = cosine_similarity(&a, &neg).map_err(|e| e.to_string())?;
        let parallel = cosine_similarity(&a, &scaled).map_err(|e| e.to_string())?;
        ensure(same == 1.0 && parallel == 1.0, || format!("cos(a, a) = {same}, cos(a, 4a) = {parallel}"))?;
        ensure(opposite == -1.0, || format!("cos(a, -a) = {opposite}"))?;
    }
    for (a, b) in [
        (vec![1.0, 0.0], vec![0.0, 5.0]),
        (vec![1.0, 2.0, -1.0], vec![1.0, 0.0, 1.0]),
        (vec![0.5, -0.25, 3.0, 0.0], vec![2.0, 4.0, 0.0, 7.0]),
    ] {
        let c = cosine_similarity(&a, &b).map_err(|e| e.to_string())?;
        ensure(c == 0.0, || format!("orthogonal cosine {c}"))?;
    }

    let f = vec![vec![1.0f64, 0.0], vec![0.0, 1.0]];
    let y = PairTargets::new(2, vec![1.0, 0.0, 0.0, 1.0], None).unwrap();
    let hand = soft_pair_loss(&f, &y).map_err(|e| e.to_string())?;
    ensure((hand - 0.125).abs() <= 1e-12, || format!("N=2 loss {hand}, expected 0.125"))?;

    let same = vec![vec![0.3, -1.2, 2.0]; 5];
    let ones = PairTargets::new(5, vec![1.0; 25], None).unwrap();
    let fit = soft_pair_loss(&same, &ones).map_err(|e| e.to_string())?;
    ensure(fit == 0.0, || format!("identical features with unit targets give {fit}"))?;
    let basis: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|d| if d == i { 1.5 } else { 0.0 }).collect()).collect();
    let half = PairTargets::new(4, (0..16).map(|k| if k / 4 == k % 4 { 1.0 } else { 0.5 }).collect(), None).unwrap();
    let fit = soft_pair_loss(&basis, &half).map_err(|e| e.to_string())?;
    ensure(fit == 0.0, || format!("orthogonal features with half targets give {fit}"))?;
    Ok(format!("N=2 loss {hand}, perfect fits 0"))
}

// ---------------------------------------------------------------------------
// Gradient of the soft pair loss through the toy network.

/// Pre-activations and activations of one window under fixed parameters.
struct Cached {
    x: Vec<f64>,
    z: Vec<f64>,
    a: Vec<f64>,
    out: Vec<f64>,
}

/// Loss as a function of the flat parameter vector
/// `[w1 (hidden x input), b1, w2 (output x hidden), b2]`, evaluated with one
/// parameter moved by `delta`. Only the affected hidden unit or output is
/// recomputed, which keeps a full central-difference sweep cheap.
struct Probe<'a> {
    input: usize,
    hidden: usize,
    output: usize,
    params: &'a [f64],
    windows: Vec<Cached>,
    targets: &'a PairTargets<f64>,
}

impl<'a> Probe<'a> {
    fn new(params: &'a [f64], dims: [usize; 3], inputs: &[Vec<f64>], targets: &'a PairTargets<f64>) -> Self {
        let [input, hidden, output] = dims;
        let (w1, rest) = params.split_at(hidden * input);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, b2) = rest.split_at(output * hidden);
        let windows = inputs
            .iter()
            .map(|x| {
                let z: Vec<f64> = (0..hidden)
                    .map(|h| w1[h * input..(h + 1) * input].iter().zip(x).fold(b1[h], |s, (w, v)| s + w * v))
                    .collect();
                let a: Vec<f64> = z.iter().map(|z| z.tanh()).collect();
                let out = (0..output)
                    .map(|o| w2[o * hidden..(o + 1) * hidden].iter().zip(&a).fold(b2[o], |s, (w, v)| s + w * v))
                    .collect();
                Cached { x: x.clone(), z, a, out }
            })
            .collect();
        Self {
            input,
            hidden,
            output,
            params,
            windows,
            targets,
        }
    }

    fn outputs(&self) -> Vec<Vec<f64>> {
        self.windows.iter().map(|c| c.out.clone()).collect()
    }

    fn loss_moved(&self, k: usize, delta: f64) -> f64 {
        let (n_w1, n_b1, n_w2) = (self.hidden * self.input, self.hidden, self.output * self.hidden);
        let w2 = &self.params[n_w1 + n_b1..n_w1 + n_b1 + n_w2];
        let outs: Vec<Vec<f64>> = self
            .windows
            .iter()
            .map(|c| {
                let mut out = c.out.clone();
                if k < n_w1 + n_b1 {
                    let (h, dz) = if k < n_w1 {
                        (k / self.input, delta * c.x[k % self.input])
                    } else {
                        (k - n_w1, delta)
                    };
                    let da = (c.z[h] + dz).tanh() - c.a[h];
                    for (o, v) in out.iter_mut().enumerate() {
                        *v += w2[o * self.hidden + h] * da;
                    }
                } else if k < n_w1 + n_b1 + n_w2 {
                    let r = k - n_w1 - n_b1;
                    out[r / self.hidden] += delta * c.a[r % self.hidden];
                } else {
                    out[k - n_w1 - n_b1 - n_w2] += delta;
                }
                out
            })
            .collect();
        soft_pair_loss(&outs, self.targets).unwrap()
    }
}

pub struct GradientStats {
    pub params: usize,
    pub worst_rel: f64,
    /// Parameters whose gradient magnitude is under the floor.
    pub floored: usize,
}

/// Relative error `|g - fd| / max(|g|, |fd|, floor)`. A central difference
/// with step 1e-5 on a loss near 0.1 carries about 1e-12 of rounding noise,
/// so gradients below the floor are compared in absolute terms instead.
pub const GRAD_REL_FLOOR: f64 = 1e-7;

pub fn gradient_check_seed(seed: u64, windows: usize, frame: usize, fc: usize, step: f64) -> Result<GradientStats, String> {
    let view = generate_view::<f64>(&ViewSpec {
        hr_bpm: 75.0,
        duration_s: 4.0,
        frame_size: frame,
        texture_seed: seed,
        noise_sigma: 0.05,
        ..ViewSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let video = view.to_train_video("p").map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        batch_size: windows,
        fc,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = sample_batch(std::slice::from_ref(&video), &cfg, &mut rng).map_err(|e| e.to_string())?;
    let mlp = ToyMlp::<f64>::init(3 * frame * frame, cfg.hidden, fc, &mut rng).map_err(|e| e.to_string())?;
    let (loss, grad) = mlp.loss_gradient(&batch.inputs, &batch.targets, None).map_err(|e| e.to_string())?;

    let params = mlp.flat_params();
    let probe = Probe::new(&params, mlp.layer_sizes(), &batch.inputs, &batch.targets);
    for (mine, lib) in probe.outputs().iter().zip(&batch.inputs) {
        let expected = mlp.forward(lib).unwrap();
        for (a, b) in mine.iter().zip(&expected) {
            ensure((a - b).abs() <= 1e-12, || format!("probe forward {a} vs network {b}"))?;
        }
    }
    ensure((probe.loss_moved(0, 0.0) - loss).abs() <= 1e-15, || "probe loss disagrees".into())?;

    let mut worst_rel: f64 = 0.0;
    let mut floored = 0;
    for (k, g) in grad.flat.iter().enumerate() {
        let fd = (probe.loss_moved(k, step) - probe.loss_moved(k, -step)) / (2.0 * step);
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(GRAD_REL_FLOOR);
        worst_rel = worst_rel.max(rel);
        if g.abs().max(fd.abs()) < GRAD_REL_FLOOR {
            floored += 1;
        }
        ensure(rel.is_finite(), || format!("seed {seed} param {k}: non-finite error"))?;
    }
    Ok(GradientStats {
        params: params.len(),
        worst_rel,
        floored,
    })
}

pub fn gradient_check(seeds: u64) -> Check {
    let mut worst: f64 = 0.0;
    let mut params = 0;
    let mut floored = 0;
    for seed in 0..seeds {
        let s = gradient_check_seed(seed, 6, 16, 4, 1e-5)?;
        ensure(s.worst_rel < 1e-4, || format!("seed {seed}: relative error {:.3e}", s.worst_rel))?;
        worst = worst.max(s.worst_rel);
        params = s.params;
        floored += s.floored;
    }
    Ok(format!(
        "{seeds} seeds x {params} parameters, worst relative error {worst:.2e} ({floored} gradients under {GRAD_REL_FLOOR:e})"
    ))
}

// ---------------------------------------------------------------------------
// Path search oracles.

/// Exhaustive DP over (cell, run state) in anti-diagonal order, summing
/// costs in path order like the search does. Returns the cheapest cost of
/// any admissible forward path from `start` that stops at its first exit
/// cell.
pub fn dp_forward_cost(cost: &SyncMatrix<f64>, start: (usize, usize)) -> f64 {
    let (rows, cols) = cost.shape();
    let run = MAX_RUN as usize;
    // Slot 0: no run; 1..=run: down run; run+1..=2run: right run.
    let slots = 1 + 2 * run;
    let mut g = vec![f64::INFINITY; rows * cols * slots];
    g[(start.0 * cols + start.1) * slots] = cost.get(start.0, start.1);
    let mut best = f64::INFINITY;
    for sum in start.0 + start.1..rows + cols - 1 {
        for i in 0..rows {
            let Some(j) = sum.checked_sub(i).filter(|j| *j < cols) else {
                continue;
            };
            for s in 0..slots {
                let here = g[(i * cols + j) * slots + s];
                if here == f64::INFINITY {
                    continue;
                }
                if i == rows - 1 || j == cols - 1 {
                    best = best.min(here);
                    continue;
                }
                let down = match s {
                    1..=3 if s < run => Some(s + 1),
                    1..=3 => None,
                    _ => Some(1),
                };
                let right = match s {
                    4..=6 if s - run < run => Some(s + 1),
                    4..=6 => None,
                    _ => Some(run + 1),
                };
                for (ni, nj, ns) in [(i + 1, j + 1, Some(0)), (i + 1, j, down), (i, j + 1, right)] {
                    if let Some(ns) = ns {
                        let k = (ni * cols + nj) * slots + ns;
                        g[k] = g[k].min(here + cost.get(ni, nj));
                    }
                }
            }
        }
    }
    best
}

fn flipped(cost: &SyncMatrix<f64>) -> SyncMatrix<f64> {
    let mut v = cost.values().to_vec();
    v.reverse();
    SyncMatrix::new(cost.rows(), cost.cols(), v, MatrixKind::Cost).unwrap()
}

pub fn random_cost(rows: usize, cols: usize, rng: &mut impl Rng) -> SyncMatrix<f64> {
    let values: Vec<f64> = match rng.random_range(0..3) {
        // Coarse levels produce many equal-cost alternatives.
        0 => (0..rows * cols).map(|_| rng.random_range(0..5) as f64 * 0.25).collect(),
        1 => (0..rows * cols).map(|_| rng.random::<f64>().powi(3)).collect(),
        _ => (0..rows * cols).map(|_| rng.random::<f64>()).collect(),
    };
    SyncMatrix::new(rows, cols, values, MatrixKind::Cost).unwrap()
}

pub fn dijkstra_matches_dp(matrices: usize, size: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut searches = 0;
    for m in 0..matrices {
        let cost = random_cost(size, size, &mut rng);
        let back = flipped(&cost);
        let entry: Vec<(usize, usize)> = (0..size).map(|j| (0, j)).chain((1..size).map(|i| (i, 0))).collect();
        for &s in &entry {
            let fwd = constrained_dijkstra(&cost, s, Direction::Forward).map_err(|e| e.to_string())?;
            let want = dp_forward_cost(&cost, s);
            ensure(fwd.total_cost() == want, || {
                format!("matrix {m} start {s:?}: search {} vs oracle {want}", fwd.total_cost())
            })?;
            let e = (size - 1 - s.0, size - 1 - s.1);
            let bwd = constrained_dijkstra(&cost, e, Direction::Backward).map_err(|e| e.to_string())?;
            let want = dp_forward_cost(&back, s);
            ensure(bwd.total_cost() == want, || {
                format!("matrix {m} backward start {e:?}: search {} vs oracle {want}", bwd.total_cost())
            })?;
            searches += 2;
        }
    }
    Ok(format!("{matrices} matrices, {searches} searches, all costs equal"))
}

fn path_cost(path: &SyncPath<f64>, cost: &SyncMatrix<f64>) -> f64 {
    path.points().iter().fold(0.0, |s, &(i, j)| s + cost.get(i, j))
}

pub fn path_invariants(searches: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut points = 0;
    for n in 0..searches {
        let (rows, cols) = (rng.random_range(2..40), rng.random_range(2..40));
        let cost = random_cost(rows, cols, &mut rng);
        let cfg = PathSearchConfig {
            start_stride: rng.random_range(1..8),
            min_length_fraction: rng.random_range(0.3..=1.0),
        };
        let path = find_best_path(&cost, &cfg).map_err(|e| format!("search {n} ({rows}x{cols}): {e}"))?;
        path.check_invariants(rows, cols).map_err(|e| format!("search {n} ({rows}x{cols}): {e}"))?;
        ensure(path.len() >= cfg.required_points(rows, cols), || {
            format!("search {n}: {} points, need {}", path.len(), cfg.required_points(rows, cols))
        })?;
        let sum = path_cost(&path, &cost);
        ensure(sum == path.total_cost() || path_cost_backward(&path, &cost) == path.total_cost(), || {
            format!("search {n}: reported cost {} but cells sum to {sum}", path.total_cost())
        })?;
        points += path.len();
    }
    Ok(format!("{searches} searches, {points} points checked"))
}

fn path_cost_backward(path: &SyncPath<f64>, cost: &SyncMatrix<f64>) -> f64 {
    path.points().iter().rev().fold(0.0, |s, &(i, j)| s + cost.get(i, j))
}

// ---------------------------------------------------------------------------
// R-peak detection.

pub struct PeakStats {
    pub missed: usize,
    pub spurious: usize,
    pub expected: usize,
    pub worst_offset: usize,
}

/// Compares detected R-peak samples with the beats the generator placed.
/// Beats closer than `edge_s` to either end of the trace are not required
/// (half a QRS complex is not a peak), but detections there still have to
/// sit on a beat.
pub fn peak_recovery(hr: f64, seed: u64, tolerance: usize, edge_s: f64) -> Result<PeakStats, String> {
    let spec = ViewSpec {
        hr_bpm: hr,
        duration_s: 10.0,
        frame_size: 4,
        texture_seed: seed,
        ..ViewSpec::default()
    };
    let view = generate_view::<f64>(&spec).map_err(|e| e.to_string())?;
    let detected = detect_r_peak_samples(&view.ecg, DEFAULT_SIGMA_S, DEFAULT_MIN_GAP_S).map_err(|e| e.to_string())?;
    let n = view.ecg.samples().len() as f64;
    let rr = 60.0 / hr;
    let beats: Vec<f64> = (-1..=(spec.duration_s / rr).ceil() as i64 + 1)
        .map(|k| k as f64 * rr * spec.ecg_hz)
        .collect();
    let edge = edge_s * spec.ecg_hz;
    let required: Vec<f64> = beats.iter().copied().filter(|b| *b >= edge && *b <= n - 1.0 - edge).collect();
    let near = |d: usize, b: f64| (d as f64 - b).abs() <= tolerance as f64;
    let missed = required.iter().filter(|b| !detected.iter().any(|d| near(*d, **b))).count();
    let spurious = detected.iter().filter(|d| !beats.iter().any(|b| near(**d, *b))).count();
    let worst_offset = detected
        .iter()
        .filter_map(|d| beats.iter().map(|b| (*d as f64 - b).abs().round() as usize).min())
        .max()
        .unwrap_or(0);
    Ok(PeakStats {
        missed,
        spurious,
        expected: required.len(),
        worst_offset,
    })
}

/// Margin at the trace ends inside which a beat is not required.
pub const PEAK_EDGE_S: f64 = 0.05;

pub fn r_peak_suite(seeds: u64) -> Check {
    let mut total = 0;
    let mut worst = 0;
    for hr in [50.0, 75.0, 120.0] {
        for seed in 0..seeds {
            let s = peak_recovery(hr, seed, 2, PEAK_EDGE_S)?;
            ensure(s.missed == 0 && s.spurious == 0, || {
                format!("{hr} bpm seed {seed}: {} missed, {} spurious of {}", s.missed, s.spurious, s.expected)
            })?;
            total += s.expected;
            worst = worst.max(s.worst_offset);
        }
    }
    Ok(format!("{total} beats found, no spurious peaks, worst offset {worst} samples"))
}

// ---------------------------------------------------------------------------
// Ground truth.

pub fn ground_truth_identities() -> Check {
    // Exact binary fractions so that phi + 0.5 is representable.
    let a: Vec<f64> = (0..64).map(|k| k as f64 / 64.0).collect();
    let b: Vec<f64> = a.iter().map(|p| (p + 0.5) % 1.0).collect();
    let ta = PhaseTrack::from_phases(a.clone()).unwrap();
    let tb = PhaseTrack::from_phases(b).unwrap();
    let same = ground_truth_matrix(&ta, &ta).map_err(|e| e.to_string())?;
    let half = ground_truth_matrix(&ta, &tb).map_err(|e| e.to_string())?;
    for (k, phi) in a.iter().enumerate() {
        ensure(same.get(k, k) == 1.0, || format!("equal phase {phi} gives {}", same.get(k, k)))?;
        ensure(half.get(k, k) == 0.0, || format!("half-cycle apart gives {}", half.get(k, k)))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let x: f64 = rng.random();
        ensure(sync_level(x, x) == 1.0, || format!("sync_level({x}, {x}) != 1"))?;
    }

    for trial in 0..20 {
        let track = |rng: &mut ChaCha8Rng| {
            let n = rng.random_range(20..120);
            let mut p = rng.random_range(0.0..8.0);
            let mut peaks = Vec::new();
            while p < n as f64 + 20.0 {
                peaks.push(p);
                p += rng.random_range(6.0..20.0);
            }
            compute_phase(&PeakList::new(peaks).unwrap(), n).unwrap()
        };
        let (pa, pb) = (track(&mut rng), track(&mut rng));
        let ab = ground_truth_matrix(&pa, &pb).map_err(|e| e.to_string())?;
        let ba = ground_truth_matrix(&pb, &pa).map_err(|e| e.to_string())?.transpose();
        ensure(ab.shape() == ba.shape(), || "transpose shape differs".into())?;
        for i in 0..ab.rows() {
            for j in 0..ab.cols() {
                ensure(ab.is_masked(i, j) == ba.is_masked(i, j), || format!("trial {trial}: mask differs at ({i}, {j})"))?;
                ensure(ab.is_masked(i, j) || ab.get(i, j) == ba.get(i, j), || {
                    format!("trial {trial}: ({i}, {j}) {} vs {}", ab.get(i, j), ba.get(i, j))
                })?;
            }
        }
        let aa = ground_truth_matrix(&pa, &pa).map_err(|e| e.to_string())?;
        for t in 0..pa.len() {
            ensure(aa.is_masked(t, t) || aa.get(t, t) == 1.0, || format!("self diagonal at {t}: {}", aa.get(t, t)))?;
            ensure(aa.is_masked(t, t) == pa.get(t).is_none(), || format!("self diagonal mask at {t}"))?;
        }
    }
    Ok("equal phase 1, half cycle 0, transpose and self-diagonal exact".into())
}

// ---------------------------------------------------------------------------
// End to end.

pub fn e2e_pair() -> PairSpec {
    PairSpec {
        hr_a: 70.0,
        hr_b: 85.0,
        fps_a: 30.0,
        fps_b: 30.0,
        duration_s: 8.0,
        ..PairSpec::default()
    }
}

pub fn oracle_score(pair: &PairSpec, noise_sigma: f64, seed: u64) -> Result<f64, String> {
    let p = generate_pair::<f64>(pair).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig {
        seed,
        timestamp: false,
        ..PipelineConfig::default()
    };
    let choice = EmbedderChoice::Oracle { dim: 4, noise_sigma };
    let out = run_pipeline(&VideoInput::from(p.a), &VideoInput::from(p.b), &choice, &cfg).map_err(|e| e.to_string())?;
    out.report
        .score
        .map(|s| s.normalized)
        .ok_or_else(|| "pair was not scored".to_string())
}

pub fn synthetic_sync(noise_sigma: f64, threshold: f64, seeds: u64) -> Check {
    let mut scores = Vec::new();
    for seed in 0..seeds {
        let s = oracle_score(&e2e_pair(), noise_sigma, seed)?;
        ensure(s >= threshold, || format!("seed {seed}: normalized score {s:.4} < {threshold}"))?;
        scores.push(s);
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(format!("{seeds} oracle seeds, min {min:.4}, mean {mean:.4}"))
}

pub fn training_set(count: usize, seed: u64, size: usize, noise: f64) -> Result<Vec<TrainVideo<f64>>, String> {
    training_views(count, seed, size, noise)
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            generate_view::<f64>(spec)
                .and_then(|v| v.to_train_video(format!("p{}", k / 2)))
                .map_err(|e| e.to_string())
        })
        .collect()
}

pub fn held_out_pair(size: usize, noise: f64) -> PairSpec {
    PairSpec {
        frame_size: size,
        noise_sigma: noise,
        seed_a: 901,
        seed_b: 902,
        ..e2e_pair()
    }
}

pub struct TrainResult {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub held_out: f64,
    /// Held-out score of the same network before any update.
    pub untrained_held_out: f64,
}

fn held_out_score(mlp: &ToyMlp<f64>) -> Result<f64, String> {
    let pair = generate_pair::<f64>(&held_out_pair(16, 0.05)).map_err(|e| e.to_string())?;
    let choice = EmbedderChoice::Mlp {
        mlp: mlp.clone(),
        source: "trained".into(),
    };
    let cfg = PipelineConfig {
        timestamp: false,
        ..PipelineConfig::default()
    };
    let out = run_pipeline(&VideoInput::from(pair.a), &VideoInput::from(pair.b), &choice, &cfg)
        .map_err(|e| e.to_string())?;
    Ok(out.report.score.ok_or("held-out pair was not scored")?.normalized)
}

pub fn toy_training(videos: usize, epochs: usize) -> Result<TrainResult, String> {
    let data = training_set(videos, 1, 16, 0.05)?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let outcome = train(&data, &cfg).map_err(|e| e.to_string())?;
    let frozen = train(
        &data,
        &TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            ..cfg
        },
    )
    .map_err(|e| e.to_string())?;
    Ok(TrainResult {
        initial_loss: outcome.initial_loss,
        final_loss: outcome.final_loss().ok_or("no epochs")?,
        held_out: held_out_score(&outcome.mlp)?,
        untrained_held_out: held_out_score(&frozen.mlp)?,
    })
}

pub fn normalization_identity() -> Check {
    let cfg = PathSearchConfig::default();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (hr_a, hr_b, fps_b) in [(70.0, 85.0, 30.0), (60.0, 60.0, 30.0), (90.0, 55.0, 15.0), (120.0, 75.0, 25.0)] {
        let spec = PairSpec {
            hr_a,
            hr_b,
            fps_b,
            frame_size: 4,
            ..PairSpec::default()
        };
        let p = generate_pair::<f64>(&spec).map_err(|e| e.to_string())?;
        let gt = ground_truth_matrix(&p.a.phases, &p.b.phases).map_err(|e| e.to_string())?;
        let best = ground_truth_best_path(&gt, &cfg).map_err(|e| e.to_string())?;
        let s = normalized_score(&best, &gt, &cfg).map_err(|e| e.to_string())?;
        worst = worst.max((s - 1.0).abs());
        ensure((s - 1.0).abs() <= 1e-12, || format!("{hr_a}/{hr_b} bpm: best path scores {s}"))?;
        let same = trim_endpoints(&best, 0).map_err(|e| e.to_string())?;
        ensure(same == best, || "trim_endpoints(path, 0) changed the path".into())?;
        cases += 1;
    }
    Ok(format!("{cases} ground truths, max |score - 1| = {worst:.1e}, zero trim is the identity"))
}

pub fn determinism() -> Check {
    let p = generate_pair::<f64>(&PairSpec {
        noise_sigma: 0.03,
        frame_size: 16,
        ..e2e_pair()
    })
    .map_err(|e| e.to_string())?;
    let (a, b) = (VideoInput::from(p.a), VideoInput::from(p.b));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mlp = ToyMlp::<f64>::init(3 * 16 * 16, 16, 4, &mut rng)
        .unwrap()
        .with_frame_shape((16, 16));
    let cfg = PipelineConfig {
        seed: 42,
        timestamp: false,
        trim: 1,
        ..PipelineConfig::default()
    };
    let choices = [
        EmbedderChoice::Oracle { dim: 6, noise_sigma: 0.1 },
        EmbedderChoice::Mlp {
            mlp,
            source: "random".into(),
        },
    ];
    for choice in &choices {
        let report = || -> Result<String, String> {
            run_pipeline(&a, &b, choice, &cfg)
                .and_then(|o| o.report.to_json())
                .map_err(|e| e.to_string())
        };
        let first = report()?;
        let second = report()?;
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| e.to_string())?
            .install(report)?;
        ensure(first == second, || format!("{}: repeated runs differ", choice.describe()))?;
        ensure(first == single, || format!("{}: thread count changes the report", choice.describe()))?;
    }
    Ok(format!("{} embedders, repeated and single-threaded reports byte-identical", choices.len()))
}

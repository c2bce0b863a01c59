//! End-to-end commands: dataset generation, training, tracking with hand
//! localization, the multi-view baseline, and evaluation.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{
    linear_score_map, propose, read_linear, read_logistic, train_linear, train_logistic, verify, write_linear,
    write_logistic, OracleVerifier, SgdParams, Verifier, WINDOW,
};
use crate::error::{Error, Result};
use crate::eval::{
    associate, histogram_csv, histogram_svg, metrics_csv, summarize, tracking_metrics, ErrorRecord, GtObs,
    TrackObs, TrackingMetrics,
};
use crate::hands::{localize_hands, Hand, HandEstimate, HandPoint, HeuristicSegmenter, OracleSegmenter};
use crate::image::extract_patch;
use crate::projection::FeatureMaps;
use crate::synth::{anchor_voxel, hand_voxels, make_training_set, sample_scene, FrameGt, SceneScript, TrainingConfig};
use crate::tracking::{appearance_descriptor, Candidate, ColoredPoints, Tracker};
use crate::triangulation::{read_rig, ring_rig, robust_triangulate, write_rig, CameraModel, Keypoint2D};
use crate::volume::{crop_person_volume, person_offset, voxelize, write_pc4d, GridSpec, OccupancyVolume, PointFrame};

mod config;
mod dataset;

pub use config::{RunConfig, SegmenterChoice, VerifierChoice, KEYS};
pub use dataset::{frame_name, read_gt, Dataset, DatasetMeta, GT_FILE, META_FILE, RIG_FILE, SCENE_FILE};

pub const DETECTOR_FILE: &str = "detector.vtld";
pub const VERIFIER_FILE: &str = "verifier.vtlv";

/// Caps the global thread pool at `VOLUMETRACK_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("VOLUMETRACK_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("VOLUMETRACK_THREADS must be a positive integer, got '{v}'")))?;
    // a second initialization (e.g. in tests) keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- generate

/// Renders a scene script into `out_dir`. `seed` overrides the script's seed.
pub fn cmd_generate(script_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<DatasetMeta> {
    let text = fs::read_to_string(script_path).map_err(|e| Error::io(script_path, e))?;
    let mut script = SceneScript::from_json(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", script_path.display())),
        other => other,
    })?;
    if let Some(s) = seed {
        script.seed = s;
    }
    generate_dataset(&script, out_dir)
}

pub fn generate_dataset(script: &SceneScript, out_dir: &Path) -> Result<DatasetMeta> {
    script.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let gt_path = out_dir.join(GT_FILE);
    let mut gt_out = BufWriter::new(File::create(&gt_path).map_err(|e| Error::io(&gt_path, e))?);
    const CHUNK: usize = 32;
    for start in (0..script.frames).step_by(CHUNK) {
        let end = (start + CHUNK).min(script.frames);
        let rendered: Vec<(PointFrame, FrameGt)> =
            (start..end).into_par_iter().map(|t| sample_scene(script, t)).collect::<Result<_>>()?;
        for (frame, gt) in rendered {
            write_file(&out_dir.join(frame_name(frame.index as usize)), &write_pc4d(&frame))?;
            serde_json::to_writer(&mut gt_out, &gt)?;
            gt_out.write_all(b"\n").map_err(|e| Error::io(&gt_path, e))?;
        }
    }
    gt_out.flush().map_err(|e| Error::io(&gt_path, e))?;
    let grid = script.grid();
    let meta = DatasetMeta {
        frames: script.frames,
        grid,
        colors: script.colors,
        people: script.people.iter().map(|p| p.id).collect(),
    };
    write_file(&out_dir.join(META_FILE), serde_json::to_string_pretty(&meta)?.as_bytes())?;
    write_file(&out_dir.join(SCENE_FILE), serde_json::to_string_pretty(script)?.as_bytes())?;
    // a 4-camera ring around the room for the multi-view baseline
    let room = script.room;
    let rig = ring_rig(
        4,
        [room[0] / 2.0, room[1] / 2.0],
        0.5 * room[0].hypot(room[1]) + 1.0,
        2.5,
        [room[0] / 2.0, room[1] / 2.0, 1.0],
        1000.0,
    )?;
    write_rig(&out_dir.join(RIG_FILE), &rig)?;
    Ok(meta)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_people: Vec<u32>,
    pub held_out_people: Vec<u32>,
    pub frames_used: usize,
    pub samples: usize,
    pub delta: f32,
    /// Fraction of held-out person-frames with a proposal within the gate.
    pub held_out_recall: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub seed: u64,
    /// Frames sampled evenly from the dataset.
    pub max_frames: usize,
    /// Share of scripted people withheld from training.
    pub held_out_fraction: f64,
    pub linear: SgdParams,
    pub logistic: SgdParams,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            seed: 0,
            max_frames: 60,
            held_out_fraction: 0.2,
            linear: SgdParams {
                epochs: 30,
                rate: 1e-4,
                regularization: 1e-3,
                seed: 0,
            },
            logistic: SgdParams {
                epochs: 15,
                rate: 1e-3,
                regularization: 1e-4,
                seed: 0,
            },
        }
    }
}

/// Splits people by identity: a seeded shuffle, the first share held out.
pub fn split_people(people: &[u32], fraction: f64, seed: u64) -> (Vec<u32>, Vec<u32>) {
    let mut ids = people.to_vec();
    ids.sort_unstable();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = if ids.len() >= 2 {
        ((ids.len() as f64 * fraction).ceil() as usize).clamp(1, ids.len() - 1)
    } else {
        0
    };
    let mut held: Vec<u32> = ids[..k].to_vec();
    let mut train: Vec<u32> = ids[k..].to_vec();
    held.sort_unstable();
    train.sort_unstable();
    (train, held)
}

fn sampled_frames(n: usize, max: usize) -> Vec<usize> {
    if n <= max || max == 0 {
        return (0..n).collect();
    }
    (0..max).map(|k| k * n / max).collect()
}

pub fn cmd_train(dataset_dir: &Path, out_dir: &Path, opts: &TrainOptions) -> Result<TrainReport> {
    let ds = Dataset::open(dataset_dir)?;
    ds.check_frames()?;
    let gt = ds.read_gt()?;
    let (train_ids, held_ids) = split_people(&ds.meta.people, opts.held_out_fraction, opts.seed);
    let picks = sampled_frames(ds.meta.frames, opts.max_frames);
    let frames: Vec<(PointFrame, FrameGt)> = picks
        .par_iter()
        .map(|&i| Ok((ds.read_frame(i)?, gt[i].clone())))
        .collect::<Result<_>>()?;
    let grid = ds.meta.grid;
    let set = make_training_set(
        &frames,
        &grid,
        &TrainingConfig {
            seed: opts.seed,
            ..TrainingConfig::default()
        },
        &|id| train_ids.contains(&id),
    );
    if !set.labels.contains(&1) || !set.labels.contains(&-1) {
        return Err(Error::Data("not enough labeled people to train on".into()));
    }
    let det = train_linear(&set.patches, &set.labels, &SgdParams { seed: opts.seed, ..opts.linear })?;
    let ver = train_logistic(&set.features, &set.labels, &SgdParams { seed: opts.seed, ..opts.logistic })?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join(DETECTOR_FILE), &write_linear(&det))?;
    write_file(&out_dir.join(VERIFIER_FILE), &write_logistic(&ver))?;

    let held_out_recall = if held_ids.is_empty() {
        None
    } else {
        let hits: Vec<(usize, usize)> = frames
            .par_iter()
            .map(|(frame, g)| {
                let maps = FeatureMaps::compute(&voxelize(frame, &grid));
                let props = propose(&linear_score_map(&maps.top_normalized(), &det), &det);
                let people: Vec<&crate::synth::PersonGt> = g.people.iter().filter(|p| held_ids.contains(&p.id)).collect();
                let found = people
                    .iter()
                    .filter(|p| {
                        props.iter().any(|q| {
                            (q.xy[0] as f64 - p.root_voxel[0]).hypot(q.xy[1] as f64 - p.root_voxel[1]) <= 10.0
                        })
                    })
                    .count();
                (found, people.len())
            })
            .collect();
        let (f, n) = hits.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        (n > 0).then(|| f as f64 / n as f64)
    };
    let report = TrainReport {
        train_people: train_ids,
        held_out_people: held_ids,
        frames_used: frames.len(),
        samples: set.len(),
        delta: det.delta,
        held_out_recall,
    };
    write_file(&out_dir.join("train.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(report)
}

// ---------------------------------------------------------------- results

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandResult {
    /// Room-grid voxel.
    pub voxel: [i64; 3],
    /// Voxel in the person volume.
    pub local: [i64; 3],
    /// Center of `voxel` in meters.
    pub world: [f64; 3],
    pub missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonResult {
    pub frame: u64,
    pub track_id: u64,
    /// Track position in room voxels.
    pub center: [f64; 2],
    pub person_score: f64,
    pub left: HandResult,
    pub right: HandResult,
}

impl PersonResult {
    pub fn hand(&self, hand: Hand) -> &HandResult {
        match hand {
            Hand::Left => &self.left,
            Hand::Right => &self.right,
        }
    }
}

/// Room column a track position is cropped at.
pub fn crop_center(position: [f64; 2]) -> [i64; 2] {
    [position[0].floor() as i64, position[1].floor() as i64]
}

fn hand_result(grid: &GridSpec, center: [i64; 2], p: &HandPoint) -> HandResult {
    let off = person_offset(grid, center);
    let voxel = [p.xyz[0] + off[0], p.xyz[1] + off[1], p.xyz[2] + off[2]];
    HandResult {
        voxel,
        local: p.xyz,
        world: grid.voxel_center(voxel),
        missing: p.missing,
    }
}

fn person_result(grid: &GridSpec, frame: u64, id: u64, position: [f64; 2], score: f64, center: [i64; 2], est: &HandEstimate) -> PersonResult {
    PersonResult {
        frame,
        track_id: id,
        center: position,
        person_score: score,
        left: hand_result(grid, center, &est.left),
        right: hand_result(grid, center, &est.right),
    }
}

pub fn read_results(path: &Path) -> Result<Vec<PersonResult>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

struct ResultWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl ResultWriter {
    fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(ResultWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?),
        })
    }

    fn write(&mut self, r: &PersonResult) -> Result<()> {
        serde_json::to_writer(&mut self.out, r)?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

// ---------------------------------------------------------------- track

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackStats {
    pub frames: usize,
    pub results: usize,
    pub seconds: f64,
    pub fps: f64,
    /// Median per-person hand localization time, milliseconds.
    pub hands_median_ms: f64,
}

/// Per-frame stream seed for oracle corruption.
fn corruption_seed(seed: u64, frame: u64, id: u64) -> u64 {
    let mut z = seed ^ frame.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ id.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hands of one person volume with the configured segmenter. The oracle
/// labels the ground-truth person nearest to `position`, if any.
#[allow(clippy::too_many_arguments)]
fn localize(
    config: &RunConfig,
    heuristic: &HeuristicSegmenter,
    grid: &GridSpec,
    frame: &PointFrame,
    gt: Option<&FrameGt>,
    gt_match: Option<usize>,
    id: u64,
    center: [i64; 2],
    person: &OccupancyVolume,
) -> HandEstimate {
    let patch = FeatureMaps::compute(person).stacked;
    match config.segmenter {
        SegmenterChoice::Heuristic => localize_hands(person, &patch, heuristic),
        SegmenterChoice::Oracle => {
            let voxels = gt.zip(gt_match).map(|(g, k)| hand_voxels(frame, &g.people[k], grid, center));
            match OracleSegmenter::new(voxels) {
                Ok(seg) => {
                    let mut c = config.corruption;
                    c.seed = corruption_seed(config.seed ^ c.seed, frame.index, id);
                    localize_hands(person, &patch, &seg.with_corruption(c))
                }
                // no ground truth behind this track: both hands fall back
                Err(_) => HandEstimate {
                    left: HandPoint::MISSING,
                    right: HandPoint::MISSING,
                    support: [[0; 2]; 2],
                },
            }
        }
    }
}

fn gt_obs(g: &FrameGt) -> Vec<GtObs> {
    g.people
        .iter()
        .map(|p| GtObs {
            id: p.id as u64,
            position: p.root_voxel,
        })
        .collect()
}

/// Runs detection, tracking and hand localization over every frame,
/// streaming one [`PersonResult`] per reported track per frame.
pub fn cmd_track(dataset_dir: &Path, config: &RunConfig, out: &Path) -> Result<TrackStats> {
    config.validate()?;
    let ds = Dataset::open(dataset_dir)?;
    ds.check_frames()?;
    let det_path = config
        .detector
        .as_ref()
        .ok_or_else(|| Error::Config("a detector model is required (key 'detector')".into()))?;
    let mut det = read_linear(&fs::read(det_path).map_err(|e| Error::io(det_path, e))?)?;
    det.nms_radius = config.nms_radius;
    let logistic = match &config.verifier {
        VerifierChoice::Model(p) => Some(read_logistic(&fs::read(p).map_err(|e| Error::io(p, e))?)?),
        VerifierChoice::Oracle => None,
    };
    let needs_gt = logistic.is_none() || config.segmenter == SegmenterChoice::Oracle;
    let gt = if needs_gt { Some(ds.read_gt()?) } else { None };
    let grid = ds.meta.grid;
    let heuristic = HeuristicSegmenter::default();
    let mut tracker = Tracker::new(config.tracker());
    let mut writer = ResultWriter::create(out)?;
    let mut hand_times: Vec<f64> = Vec::new();
    let mut results = 0;
    let start = Instant::now();
    for i in 0..ds.meta.frames {
        let frame = ds.read_frame(i)?;
        let frame_gt = gt.as_ref().map(|g| &g[i]);
        let room = voxelize(&frame, &grid);
        let maps = FeatureMaps::compute(&room);
        let top = maps.top_normalized();
        let oracle = frame_gt.map(|g| {
            let mut v = OracleVerifier::new(g.people.iter().map(|p| p.root_voxel).collect());
            v.radius = config.association_gate;
            v
        });
        let verifier: &dyn Verifier = match (&logistic, &oracle) {
            (Some(l), _) => l,
            (None, Some(o)) => o,
            (None, None) => unreachable!("oracle verifier always has ground truth"),
        };
        let proposals = verify(&maps.stacked, &propose(&linear_score_map(&top, &det), &det), verifier);
        let colored = frame.colors.as_ref().map(|c| ColoredPoints {
            points: &frame.points,
            colors: c,
        });
        let candidates: Vec<Candidate> = proposals
            .par_iter()
            .filter(|p| p.person_prob.unwrap_or(0.0) >= config.p_min)
            .map(|p| Candidate {
                position: [p.xy[0] as f64, p.xy[1] as f64],
                probability: p.person_prob.unwrap_or(0.0),
                descriptor: appearance_descriptor(&crop_person_volume(&room, p.xy), colored),
            })
            .collect();
        let reports = tracker.step(&top, &candidates, |pos| {
            let c = [pos[0].round() as i64, pos[1].round() as i64];
            verifier.score(&extract_patch(&maps.stacked, c, WINDOW), c).clamp(0.0, 1.0)
        })?;
        let tracks: Vec<TrackObs> = reports.iter().map(|r| TrackObs { id: r.id, position: r.position }).collect();
        let mut gt_match = vec![None; reports.len()];
        if let Some(g) = frame_gt {
            for (gi, ti) in associate(&gt_obs(g), &tracks, config.association_gate) {
                gt_match[ti] = Some(gi);
            }
        }
        let out: Vec<(PersonResult, f64)> = reports
            .par_iter()
            .zip(&gt_match)
            .map(|(r, &m)| {
                let t0 = Instant::now();
                let center = crop_center(r.position);
                let person = crop_person_volume(&room, center);
                let est = localize(config, &heuristic, &grid, &frame, frame_gt, m, r.id, center, &person);
                let ms = t0.elapsed().as_secs_f64() * 1e3;
                (person_result(&grid, frame.index, r.id, r.position, r.person_score, center, &est), ms)
            })
            .collect();
        for (r, ms) in &out {
            writer.write(r)?;
            hand_times.push(*ms);
        }
        results += out.len();
    }
    writer.finish()?;
    let seconds = start.elapsed().as_secs_f64();
    hand_times.sort_by(f64::total_cmp);
    Ok(TrackStats {
        frames: ds.meta.frames,
        results,
        seconds,
        fps: ds.meta.frames as f64 / seconds.max(1e-9),
        hands_median_ms: hand_times.get(hand_times.len() / 2).copied().unwrap_or(0.0),
    })
}

// ---------------------------------------------------------------- baseline

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineOptions {
    /// Gaussian keypoint noise, pixels.
    pub noise: f64,
    /// Probability that one view of a hand gets an outlier keypoint.
    pub outlier_rate: f64,
    /// Outlier displacement, pixels.
    pub outlier_offset: f64,
    pub tau: f64,
    pub seed: u64,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        BaselineOptions {
            noise: 0.0,
            outlier_rate: 0.0,
            outlier_offset: 200.0,
            tau: crate::triangulation::DEFAULT_TAU,
            seed: 0,
        }
    }
}

/// Keypoints for one hand: exact projections of `target`, with optional noise
/// and one displaced view. Out-of-image and behind-camera views are absent.
pub fn synthetic_keypoints(cams: &[CameraModel], target: [f64; 3], opts: &BaselineOptions, rng: &mut impl Rng) -> Vec<Keypoint2D> {
    let noise = Normal::new(0.0, opts.noise.max(0.0)).expect("finite sigma");
    let outlier_view = (rng.random::<f64>() < opts.outlier_rate).then(|| rng.random_range(0..cams.len()));
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    cams.iter()
        .enumerate()
        .map(|(v, cam)| {
            let mut kp = Keypoint2D {
                view: v,
                uv: [0.0; 2],
                present: false,
            };
            if let Some(mut uv) = cam.project(target) {
                if opts.noise > 0.0 {
                    uv[0] += noise.sample(rng);
                    uv[1] += noise.sample(rng);
                }
                if outlier_view == Some(v) {
                    uv[0] += opts.outlier_offset * angle.cos();
                    uv[1] += opts.outlier_offset * angle.sin();
                }
                kp.uv = uv;
                kp.present = cam.in_image(uv);
            }
            kp
        })
        .collect()
}

/// Occupied hand-surface voxel nearest the hand center, in person-volume
/// coordinates; the localization target for surface-only volumes.
pub fn hand_anchor(frame: &PointFrame, gt: &crate::synth::PersonGt, hand: Hand, grid: &GridSpec, person: &OccupancyVolume) -> Option<[i64; 3]> {
    let center = gt.crop_center();
    let hv = hand_voxels(frame, gt, grid, center);
    let inside: Vec<[i64; 3]> = hv
        .get(hand)
        .iter()
        .copied()
        .filter(|v| person.get_signed(v[0], v[1], v[2]))
        .collect();
    anchor_voxel(&inside, gt.hand(hand).world, grid, center)
}

/// Multi-view robust triangulation of every ground-truth hand from synthetic
/// keypoints of its anchor voxel.
pub fn cmd_baseline_triangulate(dataset_dir: &Path, rig_path: &Path, opts: &BaselineOptions, out: &Path) -> Result<usize> {
    let ds = Dataset::open(dataset_dir)?;
    ds.check_frames()?;
    let cams = read_rig(rig_path)?;
    let gt = ds.read_gt()?;
    let grid = ds.meta.grid;
    let mut writer = ResultWriter::create(out)?;
    let mut n = 0;
    for (i, g) in gt.iter().enumerate() {
        let frame = ds.read_frame(i)?;
        let room = voxelize(&frame, &grid);
        let rows: Vec<PersonResult> = g
            .people
            .par_iter()
            .map(|p| {
                let center = p.crop_center();
                let person = crop_person_volume(&room, center);
                let mut est = HandEstimate {
                    left: HandPoint::MISSING,
                    right: HandPoint::MISSING,
                    support: [[0; 2]; 2],
                };
                for hand in Hand::BOTH {
                    let mut rng = ChaCha8Rng::seed_from_u64(corruption_seed(opts.seed, i as u64, p.id as u64 * 2 + hand.label() as u64));
                    let Some(anchor) = hand_anchor(&frame, p, hand, &grid, &person) else {
                        continue;
                    };
                    let kps = synthetic_keypoints(&cams, person.spec().voxel_center(anchor), opts, &mut rng);
                    let Ok(v) = robust_triangulate(&person, &cams, &kps, opts.tau) else {
                        continue;
                    };
                    let hp = HandPoint {
                        xyz: [v[0] as i64, v[1] as i64, v[2] as i64],
                        missing: false,
                    };
                    match hand {
                        Hand::Left => est.left = hp,
                        Hand::Right => est.right = hp,
                    }
                }
                person_result(&grid, g.frame, p.id as u64, p.root_voxel, 1.0, center, &est)
            })
            .collect();
        for r in &rows {
            writer.write(r)?;
        }
        n += rows.len();
    }
    writer.finish()?;
    Ok(n)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub hands: Vec<(String, crate::eval::Summary)>,
    pub tracking: TrackingMetrics,
}

/// Room-voxel ground truth of a hand.
pub fn gt_hand_voxel(grid: &GridSpec, p: &crate::synth::PersonGt, hand: Hand) -> [i64; 3] {
    let off = person_offset(grid, p.crop_center());
    let v = p.hand(hand).voxel;
    [v[0] + off[0], v[1] + off[1], v[2] + off[2]]
}

/// Joins results to ground truth per frame (greedy nearest root within the
/// gate) and returns one record per associated hand.
pub fn error_records(results: &[PersonResult], gt: &[FrameGt], grid: &GridSpec, gate: f64) -> Vec<ErrorRecord> {
    let mut by_frame: Vec<Vec<&PersonResult>> = vec![Vec::new(); gt.len()];
    for r in results {
        if let Some(v) = by_frame.get_mut(r.frame as usize) {
            v.push(r);
        }
    }
    let mut out = Vec::new();
    for (g, rs) in gt.iter().zip(&by_frame) {
        let tracks: Vec<TrackObs> = rs.iter().map(|r| TrackObs { id: r.track_id, position: r.center }).collect();
        for (gi, ti) in associate(&gt_obs(g), &tracks, gate) {
            let p = &g.people[gi];
            for hand in Hand::BOTH {
                let h = rs[ti].hand(hand);
                out.push(ErrorRecord::new(g.frame, p.id as u64, hand, h.voxel, gt_hand_voxel(grid, p, hand), h.missing));
            }
        }
    }
    out
}

/// Writes `metrics.csv`, `histogram.csv`, `tracking.json`, and optionally
/// `histogram.svg` into `out_dir`. The grid comes from the `dataset.json`
/// next to `gt_path`.
pub fn cmd_eval(results_path: &Path, gt_path: &Path, out_dir: &Path, method: &str, svg: bool, gate: f64) -> Result<EvalReport> {
    let meta_path = gt_path.parent().unwrap_or(Path::new(".")).join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", meta_path.display())))?;
    let gt = read_gt(gt_path)?;
    let results = read_results(results_path)?;
    let records = error_records(&results, &gt, &meta.grid, gate);
    if records.is_empty() {
        return Err(Error::Data("no result could be associated with ground truth".into()));
    }
    let mut rows = Vec::new();
    for (name, hand) in [("left", Some(Hand::Left)), ("right", Some(Hand::Right)), ("both", None)] {
        let errs: Vec<i64> = records
            .iter()
            .filter(|r| hand.is_none_or(|h| r.hand == h))
            .map(|r| r.error)
            .collect();
        rows.push((method.to_string(), name.to_string(), summarize(&errs)?));
    }
    let mut per_frame: Vec<Vec<TrackObs>> = vec![Vec::new(); gt.len()];
    for r in &results {
        if let Some(v) = per_frame.get_mut(r.frame as usize) {
            v.push(TrackObs { id: r.track_id, position: r.center });
        }
    }
    let gts: Vec<Vec<GtObs>> = gt.iter().map(gt_obs).collect();
    let tracking = tracking_metrics(&per_frame, &gts, gate)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let both = &rows[2].2;
    write_file(&out_dir.join("metrics.csv"), metrics_csv(&rows).as_bytes())?;
    write_file(&out_dir.join("histogram.csv"), histogram_csv(both).as_bytes())?;
    write_file(&out_dir.join("tracking.json"), serde_json::to_string_pretty(&tracking)?.as_bytes())?;
    if svg {
        let title = format!("{method}: hand error histogram (n = {})", both.n);
        write_file(&out_dir.join("histogram.svg"), histogram_svg(both, &title).as_bytes())?;
    }
    Ok(EvalReport {
        hands: rows.into_iter().map(|(_, h, s)| (h, s)).collect(),
        tracking,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_by_identity() {
        let people = [3, 1, 4, 5, 9, 2, 6];
        let (train, held) = split_people(&people, 0.2, 11);
        assert_eq!(held.len(), 2);
        assert_eq!(train.len() + held.len(), people.len());
        assert!(train.iter().all(|t| !held.contains(t)));
        assert_eq!(split_people(&people, 0.2, 11), (train, held));
        assert!(split_people(&[1], 0.2, 0).1.is_empty());
    }

    #[test]
    fn frame_sampling_is_even() {
        assert_eq!(sampled_frames(5, 10), vec![0, 1, 2, 3, 4]);
        assert_eq!(sampled_frames(100, 4), vec![0, 25, 50, 75]);
    }

    #[test]
    fn hand_result_world_is_voxel_center() {
        let grid = GridSpec::new([1.0, 2.0, -0.02], 0.02, [300, 300, 100], 1).unwrap();
        let r = hand_result(&grid, [100, 120], &HandPoint { xyz: [40, 40, 50], missing: false });
        assert_eq!(r.voxel, [100, 120, 50]);
        for k in 0..3 {
            assert!((r.world[k] - (grid.origin[k] + (r.voxel[k] as f64 + 0.5) * 0.02)).abs() < 1e-12);
        }
    }

    #[test]
    fn corrupt_seed_varies() {
        assert_ne!(corruption_seed(1, 2, 3), corruption_seed(1, 3, 3));
        assert_eq!(corruption_seed(1, 2, 3), corruption_seed(1, 2, 3));
    }
}

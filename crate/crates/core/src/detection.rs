//! Two-stage people proposer: a 51x51 linear filter on the normalized
//! top-down map, then a verifier over the stacked three-channel patch.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{extract_patch, Grid2, Image3};

mod model_io;

pub use model_io::{read_linear, read_logistic, write_linear, write_logistic};

/// Side of the detector window in pixels.
pub const WINDOW: usize = 51;
const HALF: i64 = (WINDOW / 2) as i64;
/// Flattened length of a stacked verifier patch.
pub const VERIFIER_INPUT: usize = WINDOW * WINDOW * 3;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearDetector {
    pub weights: Grid2<f32>,
    pub bias: f32,
    pub delta: f32,
    pub nms_radius: usize,
}

impl LinearDetector {
    pub fn new(weights: Grid2<f32>, bias: f32, delta: f32) -> Result<Self> {
        if weights.dims() != (WINDOW, WINDOW) {
            return Err(Error::DimensionMismatch(format!("detector weights {:?}, want 51x51", weights.dims())));
        }
        Ok(LinearDetector {
            weights,
            bias,
            delta,
            nms_radius: 25,
        })
    }

    /// Score of one 51x51 patch centered on the candidate.
    pub fn patch_score(&self, patch: &Grid2<f32>) -> f64 {
        self.weights
            .data()
            .iter()
            .zip(patch.data())
            .map(|(&w, &v)| w as f64 * v as f64)
            .sum::<f64>()
            + self.bias as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub xy: [i64; 2],
    pub linear_score: f64,
    pub person_prob: Option<f64>,
}

/// `W ⊗ f + b` evaluated at every pixel, treating the map as zero outside its
/// bounds so each score lines up with the candidate center it rates.
///
/// Only nonzero map pixels are scattered, which keeps sparse top-down maps cheap.
pub fn linear_score_map(top: &Grid2<f32>, det: &LinearDetector) -> Grid2<f64> {
    let (nx, ny) = top.dims();
    let mut out = Grid2::filled(nx, ny, det.bias as f64);
    let w = det.weights.data();
    for (u, v, &val) in top.iter() {
        if val == 0.0 {
            continue;
        }
        let val = val as f64;
        // output (x, y) receives W[i, j] * f[u, v] with x = u - i + HALF
        let i_lo = (u as i64 + HALF - nx as i64 + 1).max(0);
        let i_hi = (u as i64 + HALF).min(WINDOW as i64 - 1);
        let j_lo = (v as i64 + HALF - ny as i64 + 1).max(0);
        let j_hi = (v as i64 + HALF).min(WINDOW as i64 - 1);
        for i in i_lo..=i_hi {
            let x = (u as i64 - i + HALF) as usize;
            let wrow = &w[i as usize * WINDOW..(i as usize + 1) * WINDOW];
            let orow = &mut out.data_mut()[x * ny..(x + 1) * ny];
            for j in j_lo..=j_hi {
                let y = (v as i64 - j + HALF) as usize;
                orow[y] += wrow[j as usize] as f64 * val;
            }
        }
    }
    out
}

/// Local maxima above `det.delta`, greedily suppressed so that kept proposals
/// are more than `nms_radius` apart in Chebyshev distance. Sorted by
/// descending score, ties by position.
pub fn propose(scores: &Grid2<f64>, det: &LinearDetector) -> Vec<Proposal> {
    propose_with(scores, det.delta as f64, det.nms_radius)
}

pub fn propose_with(scores: &Grid2<f64>, delta: f64, nms_radius: usize) -> Vec<Proposal> {
    let (nx, ny) = scores.dims();
    let mut peaks = Vec::new();
    for x in 0..nx {
        for y in 0..ny {
            let s = *scores.get(x, y);
            if !(s > delta) {
                continue;
            }
            let mut is_max = true;
            'nb: for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    if (dx, dy) == (0, 0) {
                        continue;
                    }
                    if let Some(&n) = scores.get_signed(x as i64 + dx, y as i64 + dy) {
                        if n > s {
                            is_max = false;
                            break 'nb;
                        }
                    }
                }
            }
            if is_max {
                peaks.push(Proposal {
                    xy: [x as i64, y as i64],
                    linear_score: s,
                    person_prob: None,
                });
            }
        }
    }
    peaks.sort_by(|a, b| b.linear_score.total_cmp(&a.linear_score).then(a.xy.cmp(&b.xy)));
    let r = nms_radius as i64;
    let mut kept: Vec<Proposal> = Vec::new();
    for p in peaks {
        if kept
            .iter()
            .all(|k| (k.xy[0] - p.xy[0]).abs().max((k.xy[1] - p.xy[1]).abs()) > r)
        {
            kept.push(p);
        }
    }
    kept
}

/// Second cascade stage. Implementations map a stacked 51x51x3 patch to a
/// person probability; `center` is where the patch was cut from.
pub trait Verifier: Sync {
    fn score(&self, patch: &Image3, center: [i64; 2]) -> f64;
}

/// Attaches a person probability to every proposal. Proposals below `p_min`
/// are kept (the tracker's coverage term consumes the probabilities).
pub fn verify(stacked: &Image3, proposals: &[Proposal], verifier: &dyn Verifier) -> Vec<Proposal> {
    proposals
        .iter()
        .map(|p| {
            let patch = extract_patch(stacked, p.xy, WINDOW);
            Proposal {
                person_prob: Some(verifier.score(&patch, p.xy).clamp(0.0, 1.0)),
                ..*p
            }
        })
        .collect()
}

/// Ground-truth-backed verifier: `hit` within `radius` voxels of a known
/// person root, `miss` elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleVerifier {
    pub roots: Vec<[f64; 2]>,
    pub radius: f64,
    pub hit: f64,
    pub miss: f64,
}

impl OracleVerifier {
    pub fn new(roots: Vec<[f64; 2]>) -> Self {
        OracleVerifier {
            roots,
            radius: 10.0,
            hit: 1.0,
            miss: 0.0,
        }
    }
}

impl Verifier for OracleVerifier {
    fn score(&self, _patch: &Image3, center: [i64; 2]) -> f64 {
        let near = self.roots.iter().any(|r| {
            let dx = r[0] - center[0] as f64;
            let dy = r[1] - center[1] as f64;
            dx * dx + dy * dy <= self.radius * self.radius
        });
        if near {
            self.hit
        } else {
            self.miss
        }
    }
}

/// Logistic regression on the flattened stacked patch.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticVerifier {
    pub weights: Vec<f32>,
    pub bias: f32,
}

impl LogisticVerifier {
    pub fn logit(&self, features: &[f32]) -> f64 {
        self.weights
            .iter()
            .zip(features)
            .map(|(&w, &x)| w as f64 * x as f64)
            .sum::<f64>()
            + self.bias as f64
    }
}

pub fn flatten(patch: &Image3) -> Vec<f32> {
    patch.data().iter().flat_map(|p| p.iter().copied()).collect()
}

impl Verifier for LogisticVerifier {
    fn score(&self, patch: &Image3, _center: [i64; 2]) -> f64 {
        sigmoid(self.logit(&flatten(patch)))
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdParams {
    pub epochs: usize,
    pub rate: f64,
    pub regularization: f64,
    pub seed: u64,
}

impl Default for SgdParams {
    fn default() -> Self {
        SgdParams {
            epochs: 30,
            rate: 0.01,
            regularization: 1e-4,
            seed: 0,
        }
    }
}

/// Recall the proposer threshold is calibrated to on the training positives.
pub const DELTA_RECALL: f64 = 0.995;

/// Upper bound on the calibrated threshold, in units of the hinge margin:
/// the proposer always accepts scores a little below the decision boundary.
pub const DELTA_CEILING: f64 = -0.3;

fn check_labels(n: usize, labels: &[i8]) -> Result<()> {
    if n != labels.len() {
        return Err(Error::InvalidInput(format!("{n} samples but {} labels", labels.len())));
    }
    if labels.iter().any(|&l| l != 1 && l != -1) {
        return Err(Error::InvalidInput("labels must be +1 or -1".into()));
    }
    if !labels.contains(&1) || !labels.contains(&-1) {
        return Err(Error::InvalidInput("training needs at least one example per class".into()));
    }
    Ok(())
}

fn dot(w: &[f64], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(&a, &b)| a * b as f64).sum()
}

/// Primal hinge-loss SVM with L2 regularization, trained by stochastic
/// subgradient descent from zero with a seeded shuffle per epoch. The
/// threshold `delta` is the score that keeps [`DELTA_RECALL`] of the
/// training positives, capped at [`DELTA_CEILING`].
pub fn train_linear(patches: &[Grid2<f32>], labels: &[i8], params: &SgdParams) -> Result<LinearDetector> {
    check_labels(patches.len(), labels)?;
    if let Some(p) = patches.iter().find(|p| p.dims() != (WINDOW, WINDOW)) {
        return Err(Error::DimensionMismatch(format!("training patch {:?}, want 51x51", p.dims())));
    }
    let mut w = vec![0.0f64; WINDOW * WINDOW];
    let mut b = 0.0f64;
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let shrink = 1.0 - params.rate * params.regularization;
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &k in &order {
            let x = patches[k].data();
            let y = labels[k] as f64;
            let margin = y * (dot(&w, x) + b);
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                for (wi, &xi) in w.iter_mut().zip(x) {
                    *wi += params.rate * y * xi as f64;
                }
                b += params.rate * y;
            }
        }
    }
    let weights = Grid2::from_vec(WINDOW, WINDOW, w.iter().map(|&v| v as f32).collect())?;
    let mut det = LinearDetector::new(weights, b as f32, 0.0)?;
    let mut pos: Vec<f64> = patches
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(p, _)| det.patch_score(p))
        .collect();
    pos.sort_by(f64::total_cmp);
    let idx = ((1.0 - DELTA_RECALL) * pos.len() as f64).floor() as usize;
    det.delta = (pos[idx.min(pos.len() - 1)] - 1e-4).min(DELTA_CEILING) as f32;
    Ok(det)
}

/// Logistic regression by SGD on flattened stacked patches.
pub fn train_logistic(features: &[Vec<f32>], labels: &[i8], params: &SgdParams) -> Result<LogisticVerifier> {
    check_labels(features.len(), labels)?;
    let len = features[0].len();
    if features.iter().any(|f| f.len() != len) {
        return Err(Error::DimensionMismatch("verifier features differ in length".into()));
    }
    let mut w = vec![0.0f64; len];
    let mut b = 0.0f64;
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let shrink = 1.0 - params.rate * params.regularization;
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &k in &order {
            let x = &features[k];
            let target = if labels[k] == 1 { 1.0 } else { 0.0 };
            let g = sigmoid(dot(&w, x) + b) - target;
            w.iter_mut().for_each(|v| *v *= shrink);
            for (wi, &xi) in w.iter_mut().zip(x) {
                *wi -= params.rate * g * xi as f64;
            }
            b -= params.rate * g;
        }
    }
    Ok(LogisticVerifier {
        weights: w.iter().map(|&v| v as f32).collect(),
        bias: b as f32,
    })
}

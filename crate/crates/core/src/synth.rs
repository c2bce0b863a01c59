//! Synthetic scenes: capsule-and-sphere humanoids walking through a room,
//! surface-sampled into point clouds with exact ground truth.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hands::{Hand, HandVoxels};
use crate::volume::{person_offset, GridSpec, PointFrame, PERSON_HEIGHT};

mod training;

pub use training::{hand_label_views, make_training_set, LabeledView, TrainingConfig, TrainingSet};

/// Body measurements in meters for `height_scale = 1`.
pub mod body {
    pub const SHOULDER_HEIGHT: f64 = 1.4;
    pub const SHOULDER_OFFSET: f64 = 0.18;
    pub const UPPER_ARM: f64 = 0.27;
    pub const FOREARM: f64 = 0.23;
    pub const ARM_RADIUS: f64 = 0.045;
    pub const HAND_RADIUS: f64 = 0.05;
    pub const TORSO_RADIUS: f64 = 0.15;
    pub const TORSO_BOTTOM: f64 = 0.95;
    pub const TORSO_TOP: f64 = 1.3;
    pub const HEAD_CENTER: f64 = 1.6;
    pub const HEAD_RADIUS: f64 = 0.11;
    pub const HIP_OFFSET: f64 = 0.1;
    pub const LEG_RADIUS: f64 = 0.07;
    pub const FOOT_LENGTH: f64 = 0.18;
    pub const FOOT_RADIUS: f64 = 0.05;
}

pub const MIN_HEIGHT_SCALE: f64 = 0.9;
pub const MAX_HEIGHT_SCALE: f64 = 1.03;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ArmAngles {
    /// Rotation of the arm plane about the vertical, positive toward the front.
    pub azimuth: f64,
    /// Upper-arm angle from hanging straight down, positive away from the body.
    pub elevation: f64,
    /// Additional forearm elevation at the elbow.
    pub flexion: f64,
}

impl ArmAngles {
    pub fn within_limits(&self) -> bool {
        (-FRAC_PI_2..=FRAC_PI_2).contains(&self.azimuth)
            && (0.0..=140f64.to_radians()).contains(&self.elevation)
            && (0.0..=150f64.to_radians()).contains(&self.flexion)
            && self.elevation + self.flexion <= 200f64.to_radians()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanoidModel {
    pub root: [f64; 2],
    /// Facing direction, radians from world +x.
    pub heading: f64,
    pub left: ArmAngles,
    pub right: ArmAngles,
    pub height_scale: f64,
}

impl HumanoidModel {
    pub fn standing(root: [f64; 2], heading: f64, preset: PosePreset) -> Self {
        let (left, right) = preset.angles(0.0, &[0.0; 6]);
        HumanoidModel {
            root,
            heading,
            left,
            right,
            height_scale: 1.0,
        }
    }

    /// Body-frame (x forward, y left, z up) point to world.
    fn body_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.heading.sin_cos();
        let k = self.height_scale;
        let (x, y) = (p[0] * k, p[1] * k);
        [self.root[0] + c * x - s * y, self.root[1] + s * x + c * y, p[2] * k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    /// Indexed left, right.
    pub shoulders: [[f64; 3]; 2],
    pub elbows: [[f64; 3]; 2],
    pub hands: [[f64; 3]; 2],
}

impl Kinematics {
    pub fn hand(&self, hand: Hand) -> [f64; 3] {
        self.hands[hand_index(hand)]
    }
}

fn hand_index(hand: Hand) -> usize {
    match hand {
        Hand::Left => 0,
        Hand::Right => 1,
    }
}

/// Unit direction in the body frame of a limb at `elevation` in the arm plane
/// rotated by `azimuth`; `side` is +1 for the left arm, -1 for the right.
fn limb_dir(side: f64, azimuth: f64, elevation: f64) -> [f64; 3] {
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    // Rz(-side * azimuth) applied to (0, side * sin e, -cos e)
    let y = side * se;
    [sa * side * y, ca * y, -ce]
}

pub fn forward_kinematics(m: &HumanoidModel) -> Kinematics {
    let mut out = Kinematics {
        shoulders: [[0.0; 3]; 2],
        elbows: [[0.0; 3]; 2],
        hands: [[0.0; 3]; 2],
    };
    for (i, (side, a)) in [(1.0, m.left), (-1.0, m.right)].into_iter().enumerate() {
        let shoulder = [0.0, side * body::SHOULDER_OFFSET, body::SHOULDER_HEIGHT];
        let u = limb_dir(side, a.azimuth, a.elevation);
        let f = limb_dir(side, a.azimuth, a.elevation + a.flexion);
        let elbow: [f64; 3] = std::array::from_fn(|k| shoulder[k] + body::UPPER_ARM * u[k]);
        let hand: [f64; 3] = std::array::from_fn(|k| elbow[k] + body::FOREARM * f[k]);
        out.shoulders[i] = m.body_to_world(shoulder);
        out.elbows[i] = m.body_to_world(elbow);
        out.hands[i] = m.body_to_world(hand);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Capsule { a: [f64; 3], b: [f64; 3], radius: f64 },
    Sphere { center: [f64; 3], radius: f64 },
    Box { min: [f64; 3], max: [f64; 3] },
    /// Vertical cylinder standing on the floor.
    Cylinder { center: [f64; 2], radius: f64, height: f64 },
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn unit_vector(rng: &mut impl Rng) -> [f64; 3] {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi = rng.random_range(0.0..TAU);
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

impl Primitive {
    pub fn area(&self) -> f64 {
        match *self {
            Primitive::Capsule { a, b, radius } => 2.0 * PI * radius * norm(sub(b, a)) + 4.0 * PI * radius * radius,
            Primitive::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Primitive::Box { min, max } => {
                let d = sub(max, min);
                2.0 * (d[0] * d[1] + d[1] * d[2] + d[0] * d[2])
            }
            Primitive::Cylinder { radius, height, .. } => 2.0 * PI * radius * height + PI * radius * radius,
        }
    }

    /// Strictly inside the solid.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        const EPS: f64 = 1e-9;
        match *self {
            Primitive::Capsule { a, b, radius } => {
                let ab = sub(b, a);
                let len2 = dot(ab, ab);
                let t = if len2 > 0.0 { (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
                let q = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
                norm(sub(p, q)) < radius - EPS
            }
            Primitive::Sphere { center, radius } => norm(sub(p, center)) < radius - EPS,
            Primitive::Box { min, max } => (0..3).all(|k| p[k] > min[k] + EPS && p[k] < max[k] - EPS),
            Primitive::Cylinder { center, radius, height } => {
                p[2] > EPS && p[2] < height - EPS && (p[0] - center[0]).hypot(p[1] - center[1]) < radius - EPS
            }
        }
    }

    /// One point drawn uniformly by area from the surface.
    pub fn sample(&self, rng: &mut impl Rng) -> [f64; 3] {
        match *self {
            Primitive::Capsule { a, b, radius } => {
                let ab = sub(b, a);
                let len = norm(ab);
                let side = 2.0 * PI * radius * len;
                if rng.random::<f64>() * self.area() < side {
                    let axis = ab.map(|v| v / len);
                    let (e1, e2) = basis(axis);
                    let t = rng.random_range(0.0..len);
                    let phi = rng.random_range(0.0..TAU);
                    let (s, c) = phi.sin_cos();
                    std::array::from_fn(|k| a[k] + t * axis[k] + radius * (c * e1[k] + s * e2[k]))
                } else {
                    let n = unit_vector(rng);
                    let end = if len > 0.0 && dot(n, ab) >= 0.0 { b } else { a };
                    std::array::from_fn(|k| end[k] + radius * n[k])
                }
            }
            Primitive::Sphere { center, radius } => {
                let n = unit_vector(rng);
                std::array::from_fn(|k| center[k] + radius * n[k])
            }
            Primitive::Box { min, max } => {
                let d = sub(max, min);
                let faces = [d[1] * d[2], d[1] * d[2], d[0] * d[2], d[0] * d[2], d[0] * d[1], d[0] * d[1]];
                let mut pick = rng.random::<f64>() * faces.iter().sum::<f64>();
                let mut face = 5;
                for (i, &f) in faces.iter().enumerate() {
                    if pick < f {
                        face = i;
                        break;
                    }
                    pick -= f;
                }
                let mut p: [f64; 3] = std::array::from_fn(|k| min[k] + rng.random::<f64>() * d[k]);
                let axis = face / 2;
                p[axis] = if face % 2 == 0 { min[axis] } else { max[axis] };
                p
            }
            Primitive::Cylinder { center, radius, height } => {
                let side = 2.0 * PI * radius * height;
                if rng.random::<f64>() * self.area() < side {
                    let phi = rng.random_range(0.0..TAU);
                    [center[0] + radius * phi.cos(), center[1] + radius * phi.sin(), rng.random_range(0.0..height)]
                } else {
                    let r = radius * rng.random::<f64>().sqrt();
                    let phi = rng.random_range(0.0..TAU);
                    [center[0] + r * phi.cos(), center[1] + r * phi.sin(), height]
                }
            }
        }
    }
}

fn basis(axis: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if axis[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let d = dot(helper, axis);
    let e1 = sub(helper, axis.map(|v| v * d));
    let n = norm(e1);
    let e1 = e1.map(|v| v / n);
    let e2 = [
        axis[1] * e1[2] - axis[2] * e1[1],
        axis[2] * e1[0] - axis[0] * e1[2],
        axis[0] * e1[1] - axis[1] * e1[0],
    ];
    (e1, e2)
}

/// What a body primitive belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Body,
    Head,
    Hand(Hand),
}

/// World-space primitives of one humanoid.
pub fn body_primitives(m: &HumanoidModel) -> Vec<(Part, Primitive)> {
    use body::*;
    let k = forward_kinematics(m);
    let s = m.height_scale;
    let w = |p: [f64; 3]| m.body_to_world(p);
    let mut out = vec![
        (
            Part::Body,
            Primitive::Capsule { a: w([0.0, 0.0, TORSO_BOTTOM]), b: w([0.0, 0.0, TORSO_TOP]), radius: TORSO_RADIUS * s },
        ),
        (
            Part::Body,
            Primitive::Capsule {
                a: w([0.0, -SHOULDER_OFFSET, SHOULDER_HEIGHT]),
                b: w([0.0, SHOULDER_OFFSET, SHOULDER_HEIGHT]),
                radius: 0.06 * s,
            },
        ),
        (Part::Head, Primitive::Sphere { center: w([0.0, 0.0, HEAD_CENTER]), radius: HEAD_RADIUS * s }),
    ];
    for side in [1.0, -1.0] {
        let y = side * HIP_OFFSET;
        out.push((
            Part::Body,
            Primitive::Capsule { a: w([0.0, y, TORSO_BOTTOM - 0.05]), b: w([0.0, y, 0.12]), radius: LEG_RADIUS * s },
        ));
        out.push((
            Part::Body,
            Primitive::Capsule {
                a: w([0.0, y, FOOT_RADIUS]),
                b: w([FOOT_LENGTH, y, FOOT_RADIUS]),
                radius: FOOT_RADIUS * s,
            },
        ));
    }
    for (i, hand) in Hand::BOTH.into_iter().enumerate() {
        let (sh, el, hc) = (k.shoulders[i], k.elbows[i], k.hands[i]);
        let f = sub(hc, el);
        let fl = norm(f);
        // stop the forearm short of the hand so the sphere keeps most of its surface
        let wrist: [f64; 3] = std::array::from_fn(|j| hc[j] - f[j] / fl * (HAND_RADIUS + 0.02) * s);
        out.push((Part::Body, Primitive::Capsule { a: sh, b: el, radius: ARM_RADIUS * s }));
        out.push((Part::Body, Primitive::Capsule { a: el, b: wrist, radius: ARM_RADIUS * s }));
        out.push((Part::Hand(hand), Primitive::Sphere { center: hc, radius: HAND_RADIUS * s }));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosePreset {
    TPose,
    ArmsDown,
    Reaching,
    Waving,
    Random,
}

impl PosePreset {
    pub const ALL: [PosePreset; 5] = [
        PosePreset::TPose,
        PosePreset::ArmsDown,
        PosePreset::Reaching,
        PosePreset::Waving,
        PosePreset::Random,
    ];

    /// Arm angles at frame `t`; `phase` holds per-person random phases.
    pub fn angles(self, t: f64, phase: &[f64; 6]) -> (ArmAngles, ArmAngles) {
        let d = f64::to_radians;
        let wave = |mid: f64, amp: f64, period: f64, ph: f64| mid + amp * (TAU * t / period + ph).sin();
        match self {
            PosePreset::TPose => {
                let a = ArmAngles { azimuth: 0.0, elevation: FRAC_PI_2, flexion: 0.0 };
                (a, a)
            }
            PosePreset::ArmsDown => (ArmAngles::default(), ArmAngles::default()),
            PosePreset::Reaching => {
                let arm = |ph: f64| ArmAngles {
                    azimuth: d(wave(60.0, 20.0, 90.0, ph)),
                    elevation: d(wave(75.0, 10.0, 70.0, ph)),
                    flexion: d(15.0),
                };
                (arm(phase[0]), arm(phase[1]))
            }
            PosePreset::Waving => (
                ArmAngles {
                    azimuth: d(20.0),
                    elevation: d(125.0),
                    flexion: d(wave(40.0, 25.0, 20.0, phase[0])),
                },
                ArmAngles { azimuth: 0.0, elevation: d(10.0), flexion: d(10.0) },
            ),
            PosePreset::Random => {
                let arm = |p: &[f64]| ArmAngles {
                    azimuth: d(wave(30.0, 40.0, 83.0, p[0])),
                    elevation: d(wave(65.0, 55.0, 61.0, p[1])),
                    flexion: d(wave(40.0, 35.0, 47.0, p[2])),
                };
                (arm(&phase[..3]), arm(&phase[3..]))
            }
        }
    }
}

fn default_density() -> f64 {
    2000.0
}
fn default_noise() -> f64 {
    0.005
}
fn default_one() -> f64 {
    1.0
}
fn default_min_separation() -> f64 {
    0.4
}
fn default_wander() -> f64 {
    0.3
}
fn default_turn() -> f64 {
    0.3
}
fn default_color() -> [u8; 3] {
    [180, 60, 60]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonScript {
    pub id: u32,
    /// Mean root position in meters.
    pub home: [f64; 2],
    #[serde(default)]
    pub heading: f64,
    /// Amplitude of the random walk around `home`, meters.
    #[serde(default = "default_wander")]
    pub wander: f64,
    /// Amplitude of heading oscillation, radians.
    #[serde(default = "default_turn")]
    pub turn: f64,
    pub pose: PosePreset,
    #[serde(default = "default_one")]
    pub height_scale: f64,
    #[serde(default = "default_color")]
    pub color: [u8; 3],
    /// First frame the person is present.
    #[serde(default)]
    pub enter: usize,
    /// Frame at which the person leaves, if any.
    #[serde(default)]
    pub exit: Option<usize>,
}

impl PersonScript {
    pub fn present(&self, frame: usize) -> bool {
        frame >= self.enter && self.exit.is_none_or(|e| frame < e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum Clutter {
    Box { center: [f64; 3], size: [f64; 3] },
    Cylinder { center: [f64; 2], radius: f64, height: f64 },
}

impl Clutter {
    pub fn primitive(&self) -> Primitive {
        match *self {
            Clutter::Box { center, size } => Primitive::Box {
                min: std::array::from_fn(|k| center[k] - size[k] / 2.0),
                max: std::array::from_fn(|k| center[k] + size[k] / 2.0),
            },
            Clutter::Cylinder { center, radius, height } => Primitive::Cylinder { center, radius, height },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneScript {
    pub frames: usize,
    #[serde(default)]
    pub seed: u64,
    /// Room extent in meters along x and y; the floor is z = 0.
    pub room: [f64; 2],
    /// Surface points per square meter.
    #[serde(default = "default_density")]
    pub density: f64,
    /// Gaussian noise sigma per coordinate, meters.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Per-point keep probability.
    #[serde(default = "default_one")]
    pub keep: f64,
    #[serde(default)]
    pub colors: bool,
    #[serde(default = "default_min_separation")]
    pub min_separation: f64,
    #[serde(default)]
    pub allow_close: bool,
    pub people: Vec<PersonScript>,
    #[serde(default)]
    pub clutter: Vec<Clutter>,
}

/// Human-readable RNG stream tags.
const STREAM_MOTION: u64 = 1 << 48;
const STREAM_CLUTTER: u64 = 1 << 40;

/// Counter-based stream: the generator state depends only on the key.
fn stream(seed: u64, frame: u64, id: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&frame.to_le_bytes());
    key[16..24].copy_from_slice(&id.to_le_bytes());
    key[24..].copy_from_slice(b"vtsynth\0");
    ChaCha8Rng::from_seed(key)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Motion {
    freq: [f64; 3],
    phase: [f64; 6],
    arm_phase: [f64; 6],
}

impl SceneScript {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: SceneScript = serde_json::from_str(text).map_err(|e| Error::Config(format!("scene script: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    /// Room grid: 20 mm voxels, 100 high, floor at voxel 1.
    pub fn grid(&self) -> GridSpec {
        let dims = [
            (self.room[0] / 0.02).ceil() as usize,
            (self.room[1] / 0.02).ceil() as usize,
            PERSON_HEIGHT,
        ];
        GridSpec {
            origin: [0.0, 0.0, -0.02],
            voxel_size: 0.02,
            dims,
            ground_z: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scene script: {m}")));
        if self.frames == 0 {
            return bad("frames must be positive".into());
        }
        if !(self.room[0] > 0.0 && self.room[1] > 0.0) {
            return bad(format!("room {:?} must be positive", self.room));
        }
        if !(self.density >= 0.0 && self.density.is_finite()) {
            return bad("density must be non-negative".into());
        }
        if !(self.noise >= 0.0) {
            return bad("noise must be non-negative".into());
        }
        if !(self.keep > 0.0 && self.keep <= 1.0) {
            return bad("keep must be in (0, 1]".into());
        }
        let mut ids: Vec<u32> = self.people.iter().map(|p| p.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("person ids must be unique".into());
        }
        for p in &self.people {
            if !(MIN_HEIGHT_SCALE..=MAX_HEIGHT_SCALE).contains(&p.height_scale) {
                return bad(format!("person {}: height_scale {} outside [{MIN_HEIGHT_SCALE}, {MAX_HEIGHT_SCALE}]", p.id, p.height_scale));
            }
            if !(p.wander >= 0.0) || !(p.turn >= 0.0) {
                return bad(format!("person {}: wander and turn must be non-negative", p.id));
            }
        }
        for t in 0..self.frames {
            let models: Vec<(u32, HumanoidModel)> = self
                .people
                .iter()
                .enumerate()
                .filter(|(_, p)| p.present(t))
                .map(|(i, p)| (p.id, self.person_model(i, t)))
                .collect();
            for (id, m) in &models {
                if !(0.0..self.room[0]).contains(&m.root[0]) || !(0.0..self.room[1]).contains(&m.root[1]) {
                    return bad(format!("person {id} leaves the room at frame {t}"));
                }
                if !m.left.within_limits() || !m.right.within_limits() {
                    return bad(format!("person {id} exceeds joint limits at frame {t}"));
                }
            }
            if self.allow_close {
                continue;
            }
            for (i, (a, ma)) in models.iter().enumerate() {
                for (b, mb) in &models[i + 1..] {
                    let d = (ma.root[0] - mb.root[0]).hypot(ma.root[1] - mb.root[1]);
                    if d < self.min_separation {
                        return bad(format!(
                            "people {a} and {b} are {d:.3} m apart at frame {t} (min_separation {})",
                            self.min_separation
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn motion(&self, person: usize) -> Motion {
        let mut rng = stream(self.seed, 0, STREAM_MOTION + person as u64);
        Motion {
            freq: [
                TAU / rng.random_range(150.0..300.0),
                TAU / rng.random_range(60.0..120.0),
                TAU / rng.random_range(100.0..200.0),
            ],
            phase: std::array::from_fn(|_| rng.random_range(0.0..TAU)),
            arm_phase: std::array::from_fn(|_| rng.random_range(0.0..TAU)),
        }
    }

    /// Pose of person `person` (script index) at `frame`.
    pub fn person_model(&self, person: usize, frame: usize) -> HumanoidModel {
        let p = &self.people[person];
        let m = self.motion(person);
        let t = frame as f64;
        let walk = |k: usize| {
            p.wander * (0.6 * (m.freq[0] * t + m.phase[k]).sin() + 0.4 * (m.freq[1] * t + m.phase[k + 2]).sin())
        };
        let (left, right) = p.pose.angles(t, &m.arm_phase);
        HumanoidModel {
            root: [p.home[0] + walk(0), p.home[1] + walk(1)],
            heading: p.heading + p.turn * (m.freq[2] * t + m.phase[4]).sin(),
            left,
            right,
            height_scale: p.height_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandGt {
    pub world: [f64; 3],
    /// Voxel of the hand center in the person volume cropped at the root.
    pub voxel: [i64; 3],
    /// Indices of the frame's points sampled from the hand surface.
    pub points: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonGt {
    pub id: u32,
    /// Root position in continuous room-voxel units.
    pub root_voxel: [f64; 2],
    pub root_world: [f64; 2],
    pub heading: f64,
    pub pose: PosePreset,
    pub left: HandGt,
    pub right: HandGt,
}

impl PersonGt {
    /// Room column the person volume is cropped at.
    pub fn crop_center(&self) -> [i64; 2] {
        [self.root_voxel[0].floor() as i64, self.root_voxel[1].floor() as i64]
    }

    pub fn hand(&self, hand: Hand) -> &HandGt {
        match hand {
            Hand::Left => &self.left,
            Hand::Right => &self.right,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameGt {
    pub frame: u64,
    pub people: Vec<PersonGt>,
}

/// Renders frame `frame` of the script. Ground truth is noise-free; points
/// carry noise and dropout.
pub fn sample_scene(script: &SceneScript, frame: usize) -> Result<(PointFrame, FrameGt)> {
    if frame >= script.frames {
        return Err(Error::InvalidInput(format!("frame {frame} >= script length {}", script.frames)));
    }
    let grid = script.grid();
    let noise = Normal::new(0.0, script.noise).map_err(|e| Error::Config(format!("noise: {e}")))?;
    let mut points: Vec<[f32; 3]> = Vec::new();
    let mut colors: Vec<[u8; 3]> = Vec::new();
    let mut people = Vec::new();
    let f = frame as u64;

    let mut emit = |prim: &Primitive, others: &[Primitive], id: u64, color: [u8; 3], mut record: Option<&mut Vec<u32>>| {
        let mut rng = stream(script.seed, f, id);
        let lambda = script.density * prim.area();
        let n = if lambda > 0.0 {
            Poisson::new(lambda).map(|d| d.sample(&mut rng) as usize).unwrap_or(0)
        } else {
            0
        };
        for _ in 0..n {
            let p = prim.sample(&mut rng);
            let jitter: [f64; 3] = std::array::from_fn(|_| noise.sample(&mut rng));
            let keep = rng.random::<f64>() < script.keep;
            if !keep || others.iter().any(|o| o.contains(p)) {
                continue;
            }
            if let Some(r) = record.as_deref_mut() {
                r.push(points.len() as u32);
            }
            points.push(std::array::from_fn(|k| (p[k] + jitter[k]) as f32));
            colors.push(color);
        }
    };

    for (pi, ps) in script.people.iter().enumerate() {
        if !ps.present(frame) {
            continue;
        }
        let model = script.person_model(pi, frame);
        let kin = forward_kinematics(&model);
        let prims = body_primitives(&model);
        let shapes: Vec<Primitive> = prims.iter().map(|p| p.1).collect();
        let mut hand_points = [Vec::new(), Vec::new()];
        for (k, (part, prim)) in prims.iter().enumerate() {
            let others: Vec<Primitive> = shapes.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, s)| *s).collect();
            let color = match part {
                Part::Body => ps.color,
                Part::Head | Part::Hand(_) => [224, 172, 105],
            };
            let record = match part {
                Part::Hand(h) => Some(&mut hand_points[hand_index(*h)]),
                _ => None,
            };
            emit(prim, &others, (pi as u64) << 8 | k as u64, color, record);
        }
        let root_voxel = [
            (model.root[0] - grid.origin[0]) / grid.voxel_size,
            (model.root[1] - grid.origin[1]) / grid.voxel_size,
        ];
        let crop = [root_voxel[0].floor() as i64, root_voxel[1].floor() as i64];
        let off = person_offset(&grid, crop);
        let [lp, rp] = hand_points;
        let hand_gt = |h: Hand, pts: Vec<u32>| {
            let world = kin.hand(h);
            let v = grid.voxel_of_unbounded(world);
            HandGt {
                world,
                voxel: [v[0] - off[0], v[1] - off[1], v[2] - off[2]],
                points: pts,
            }
        };
        people.push(PersonGt {
            id: ps.id,
            root_voxel,
            root_world: model.root,
            heading: model.heading,
            pose: ps.pose,
            left: hand_gt(Hand::Left, lp),
            right: hand_gt(Hand::Right, rp),
        });
    }
    for (ci, c) in script.clutter.iter().enumerate() {
        emit(&c.primitive(), &[], STREAM_CLUTTER + ci as u64, [128, 128, 128], None);
    }
    let frame_out = PointFrame {
        index: f,
        points,
        colors: script.colors.then_some(colors),
    };
    Ok((frame_out, FrameGt { frame: f, people }))
}

/// Person-volume voxels of a person's sampled hand points, for a crop
/// centered at room column `center`.
pub fn hand_voxels(frame: &PointFrame, gt: &PersonGt, room: &GridSpec, center: [i64; 2]) -> HandVoxels {
    let off = person_offset(room, center);
    let collect = |h: &HandGt| {
        let mut v: Vec<[i64; 3]> = h
            .points
            .iter()
            .filter_map(|&i| frame.points.get(i as usize))
            .map(|p| {
                let r = room.voxel_of_unbounded([p[0] as f64, p[1] as f64, p[2] as f64]);
                [r[0] - off[0], r[1] - off[1], r[2] - off[2]]
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    HandVoxels {
        left: collect(&gt.left),
        right: collect(&gt.right),
    }
}

/// Hand-surface voxel closest to the hand center: the point a surface-only
/// occupancy grid can actually localize. Ties go to the smallest voxel.
pub fn anchor_voxel(voxels: &[[i64; 3]], world: [f64; 3], room: &GridSpec, center: [i64; 2]) -> Option<[i64; 3]> {
    let off = person_offset(room, center);
    let c: [f64; 3] = std::array::from_fn(|k| (world[k] - room.origin[k]) / room.voxel_size - off[k] as f64 - 0.5);
    voxels
        .iter()
        .map(|v| {
            let d: f64 = (0..3).map(|k| (v[k] as f64 - c[k]).powi(2)).sum();
            (d, *v)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, v)| v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{crop_person_volume, voxelize, PERSON_SIDE};

    fn script(people: Vec<PersonScript>) -> SceneScript {
        SceneScript {
            frames: 10,
            seed: 3,
            room: [4.0, 4.0],
            density: 2000.0,
            noise: 0.005,
            keep: 1.0,
            colors: false,
            min_separation: 0.4,
            allow_close: false,
            people,
            clutter: vec![],
        }
    }

    fn person(id: u32, home: [f64; 2], pose: PosePreset) -> PersonScript {
        PersonScript {
            id,
            home,
            heading: 0.3,
            wander: 0.3,
            turn: 0.3,
            pose,
            height_scale: 1.0,
            color: default_color(),
            enter: 0,
            exit: None,
        }
    }

    fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
        norm(sub(a, b))
    }

    #[test]
    fn arms_down_hands_are_symmetric() {
        let m = HumanoidModel::standing([1.0, 2.0], 0.7, PosePreset::ArmsDown);
        let k = forward_kinematics(&m);
        let [l, r] = k.hands;
        assert!((l[2] - (body::SHOULDER_HEIGHT - body::UPPER_ARM - body::FOREARM)).abs() < 1e-12);
        assert!((l[2] - r[2]).abs() < 1e-12);
        // mirror images across the heading axis through the root
        let mid = [(l[0] + r[0]) / 2.0, (l[1] + r[1]) / 2.0];
        assert!((mid[0] - 1.0).abs() < 1e-12 && (mid[1] - 2.0).abs() < 1e-12);
        assert!((dist(l, r) - 2.0 * body::SHOULDER_OFFSET).abs() < 1e-12);
    }

    #[test]
    fn t_pose_span_is_chain_sum() {
        let m = HumanoidModel::standing([0.0, 0.0], 1.1, PosePreset::TPose);
        let k = forward_kinematics(&m);
        let want = 2.0 * (body::SHOULDER_OFFSET + body::UPPER_ARM + body::FOREARM);
        assert!((dist(k.hands[0], k.hands[1]) - want).abs() < 1e-12);
        // left is to the left of the facing direction
        let (s, c) = 1.1f64.sin_cos();
        let lat = -s * k.hands[0][0] + c * k.hands[0][1];
        assert!(lat > 0.0);
    }

    type M3 = [[f64; 3]; 3];

    fn mat_mul(a: M3, b: M3) -> M3 {
        std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
    }

    fn apply(a: M3, v: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| (0..3).map(|k| a[i][k] * v[k]).sum())
    }

    fn rz(t: f64) -> M3 {
        let (s, c) = t.sin_cos();
        [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    }

    fn rx(t: f64) -> M3 {
        let (s, c) = t.sin_cos();
        [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
    }

    #[test]
    fn fk_matches_rotation_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let arm = |rng: &mut ChaCha8Rng| ArmAngles {
                azimuth: rng.random_range(-1.5..1.5),
                elevation: rng.random_range(0.0..2.4),
                flexion: rng.random_range(0.0..1.0),
            };
            let m = HumanoidModel {
                root: [rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)],
                heading: rng.random_range(-PI..PI),
                left: arm(&mut rng),
                right: arm(&mut rng),
                height_scale: rng.random_range(0.9..1.03),
            };
            let k = forward_kinematics(&m);
            for (i, a, side) in [(0, m.left, 1.0), (1, m.right, -1.0)] {
                // world = T(root) Rz(heading) S [ shoulder + Rz(-side az) Rx(side el) down ... ]
                let down = [0.0, 0.0, -1.0];
                let plane = rz(-side * a.azimuth);
                let upper = mat_mul(plane, rx(side * a.elevation));
                let fore = mat_mul(plane, rx(side * (a.elevation + a.flexion)));
                let body_hand: [f64; 3] = std::array::from_fn(|j| {
                    [0.0, side * body::SHOULDER_OFFSET, body::SHOULDER_HEIGHT][j]
                        + body::UPPER_ARM * apply(upper, down)[j]
                        + body::FOREARM * apply(fore, down)[j]
                });
                let scaled = body_hand.map(|v| v * m.height_scale);
                let r = apply(rz(m.heading), scaled);
                let want = [r[0] + m.root[0], r[1] + m.root[1], r[2]];
                assert!(dist(want, k.hands[i]) < 1e-9, "{want:?} vs {:?}", k.hands[i]);
            }
        }
    }

    #[test]
    fn empty_density_gives_empty_frame() {
        let mut s = script(vec![person(1, [2.0, 2.0], PosePreset::TPose)]);
        s.density = 0.0;
        let (f, gt) = sample_scene(&s, 0).unwrap();
        assert!(f.points.is_empty());
        assert_eq!(gt.people.len(), 1);
    }

    #[test]
    fn sphere_count_in_poisson_band() {
        let prim = Primitive::Sphere { center: [1.0, 1.0, 1.0], radius: 0.3 };
        let lambda = 2000.0 * prim.area();
        let mut rng = stream(1, 2, 3);
        let n = Poisson::new(lambda).unwrap().sample(&mut rng);
        assert!((n - lambda).abs() <= 3.0 * lambda.sqrt());
        for _ in 0..1000 {
            let p = prim.sample(&mut rng);
            assert!((dist(p, [1.0, 1.0, 1.0]) - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn capsule_samples_on_surface_uniformly() {
        let prim = Primitive::Capsule { a: [0.0, 0.0, 0.0], b: [0.0, 0.0, 1.0], radius: 0.1 };
        let mut rng = stream(0, 0, 0);
        let mut on_caps = 0;
        let n = 20000;
        for _ in 0..n {
            let p = prim.sample(&mut rng);
            let t = p[2].clamp(0.0, 1.0);
            assert!((dist(p, [0.0, 0.0, t]) - 0.1).abs() < 1e-9);
            if !(0.0..=1.0).contains(&p[2]) {
                on_caps += 1;
            }
        }
        // hemispheres cover 4 pi r^2 of 2 pi r L + 4 pi r^2
        let expect = 0.4 / 2.4 * n as f64;
        assert!((on_caps as f64 - expect).abs() < 4.0 * expect.sqrt());
    }

    #[test]
    fn box_and_cylinder_surfaces() {
        let b = Primitive::Box { min: [0.0, 0.0, 0.0], max: [1.0, 2.0, 0.5] };
        let c = Primitive::Cylinder { center: [3.0, 3.0], radius: 0.2, height: 0.7 };
        let mut rng = stream(0, 0, 1);
        for _ in 0..500 {
            let p = b.sample(&mut rng);
            assert!(!b.contains(p));
            let on_face = (0..3).any(|k| p[k] == [0.0, 0.0, 0.0][k] || p[k] == [1.0, 2.0, 0.5][k]);
            assert!(on_face);
            let q = c.sample(&mut rng);
            assert!(!c.contains(q));
        }
        assert!((b.area() - 2.0 * (2.0 + 1.0 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_bytes() {
        let s = script(vec![person(1, [1.5, 1.5], PosePreset::Random), person(2, [2.8, 2.8], PosePreset::Waving)]);
        let a = sample_scene(&s, 4).unwrap();
        let b = sample_scene(&s, 4).unwrap();
        assert_eq!(crate::volume::write_pc4d(&a.0), crate::volume::write_pc4d(&b.0));
        assert_eq!(a.1, b.1);
        let mut s2 = s.clone();
        s2.seed += 1;
        assert_ne!(sample_scene(&s2, 4).unwrap().0.points, a.0.points);
    }

    #[test]
    fn gt_hands_inside_person_volume_and_occupied() {
        let mut s = script(
            PosePreset::ALL
                .iter()
                .enumerate()
                .map(|(i, &p)| person(i as u32, [1.2 + 0.8 * i as f64, 1.2 + 0.8 * i as f64], p))
                .collect(),
        );
        s.room = [5.6, 5.6];
        s.frames = 40;
        s.keep = 0.5;
        s.validate().unwrap();
        let grid = s.grid();
        for t in (0..40).step_by(7) {
            let (frame, gt) = sample_scene(&s, t).unwrap();
            let room = voxelize(&frame, &grid);
            for p in &gt.people {
                let vol = crop_person_volume(&room, p.crop_center());
                for h in Hand::BOTH {
                    let v = p.hand(h).voxel;
                    assert!((0..PERSON_SIDE as i64).contains(&v[0]) && (0..PERSON_SIDE as i64).contains(&v[1]));
                    assert!((0..PERSON_HEIGHT as i64).contains(&v[2]), "{:?} {v:?}", p.pose);
                    let near = vol.occupied().any(|o| (0..3).map(|k| (o[k] as i64 - v[k]).abs()).max().unwrap() <= 4);
                    assert!(near);
                    let hv = hand_voxels(&frame, p, &grid, p.crop_center());
                    let anchor = anchor_voxel(hv.get(h), p.hand(h).world, &grid, p.crop_center()).unwrap();
                    assert!(vol.get(anchor[0] as usize, anchor[1] as usize, anchor[2] as usize));
                }
            }
        }
    }

    #[test]
    fn close_people_rejected_unless_allowed() {
        let mut s = script(vec![person(1, [2.0, 2.0], PosePreset::TPose), person(2, [2.2, 2.0], PosePreset::TPose)]);
        s.people.iter_mut().for_each(|p| p.wander = 0.0);
        let err = s.validate().unwrap_err();
        assert!(err.to_string().contains("apart"));
        s.allow_close = true;
        s.validate().unwrap();
    }

    #[test]
    fn unknown_script_key_is_named() {
        let text = r#"{"frames": 2, "room": [3, 3], "people": [], "densty": 5}"#;
        let err = SceneScript::from_json(text).unwrap_err().to_string();
        assert!(err.contains("densty"), "{err}");
    }

    #[test]
    fn frame_out_of_range() {
        let s = script(vec![]);
        assert!(sample_scene(&s, 10).is_err());
    }

    #[test]
    fn enter_exit_window() {
        let mut p = person(1, [2.0, 2.0], PosePreset::ArmsDown);
        p.enter = 3;
        p.exit = Some(5);
        let s = script(vec![p]);
        assert!(sample_scene(&s, 2).unwrap().1.people.is_empty());
        assert_eq!(sample_scene(&s, 4).unwrap().1.people.len(), 1);
        assert!(sample_scene(&s, 5).unwrap().1.people.is_empty());
    }
}

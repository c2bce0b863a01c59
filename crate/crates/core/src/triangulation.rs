//! Multi-view baseline: pick the occupied voxel whose projections best agree
//! with per-view 2D keypoints under a truncated L1 reprojection cost.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::OccupancyVolume;

pub const DEFAULT_TAU: f64 = 30.0;

/// Pinhole camera with world-to-camera extrinsics `x_c = R x_w + t`
/// (x right, y down, z forward).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: u32,
    pub h: u32,
    /// Row-major rotation.
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config(format!("focal lengths must be positive, got {} {}", self.fx, self.fy)));
        }
        let r = &self.r;
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[3 * i + k] * r[3 * j + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-6 {
                    return Err(Error::Config("camera rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.r;
        std::array::from_fn(|i| r[3 * i] * p[0] + r[3 * i + 1] * p[1] + r[3 * i + 2] * p[2] + self.t[i])
    }

    /// Pixel of a world point, `None` when it is not in front of the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<[f64; 2]> {
        let [x, y, z] = self.to_camera(p);
        if z <= 0.0 {
            return None;
        }
        Some([self.fx * x / z + self.cx, self.fy * y / z + self.cy])
    }

    pub fn in_image(&self, uv: [f64; 2]) -> bool {
        uv[0] >= 0.0 && uv[1] >= 0.0 && uv[0] < self.w as f64 && uv[1] < self.h as f64
    }

    pub fn center(&self) -> [f64; 3] {
        // -R^T t
        std::array::from_fn(|i| -(0..3).map(|k| self.r[3 * k + i] * self.t[k]).sum::<f64>())
    }

    /// Unit world-space direction of the ray through pixel `uv`.
    pub fn ray(&self, uv: [f64; 2]) -> [f64; 3] {
        let c = [(uv[0] - self.cx) / self.fx, (uv[1] - self.cy) / self.fy, 1.0];
        let d: [f64; 3] = std::array::from_fn(|i| (0..3).map(|k| self.r[3 * k + i] * c[k]).sum());
        let n = norm(d);
        d.map(|v| v / n)
    }

    /// Camera at `eye` looking at `target` with world +z up.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], f: f64, w: u32, h: u32) -> Result<Self> {
        let fwd = normalize(sub(target, eye))?;
        let right = normalize(cross(fwd, [0.0, 0.0, 1.0]))?;
        let down = cross(fwd, right);
        let r = [
            right[0], right[1], right[2], down[0], down[1], down[2], fwd[0], fwd[1], fwd[2],
        ];
        let mut cam = CameraModel {
            fx: f,
            fy: f,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            w,
            h,
            r,
            t: [0.0; 3],
        };
        let rc = cam.to_camera(eye);
        cam.t = rc.map(|v| -v);
        Ok(cam)
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn normalize(a: [f64; 3]) -> Result<[f64; 3]> {
    let n = norm(a);
    if !(n > 1e-12) {
        return Err(Error::Config("degenerate camera orientation".into()));
    }
    Ok(a.map(|v| v / n))
}

/// `n` cameras evenly spaced on a horizontal circle, all aimed at `target`.
pub fn ring_rig(n: usize, center: [f64; 2], radius: f64, height: f64, target: [f64; 3], f: f64) -> Result<Vec<CameraModel>> {
    (0..n)
        .map(|k| {
            let a = std::f64::consts::TAU * (k as f64 + 0.125) / n as f64;
            let eye = [center[0] + radius * a.cos(), center[1] + radius * a.sin(), height];
            CameraModel::look_at(eye, target, f, 1920, 1080)
        })
        .collect()
}

pub fn read_rig(path: &Path) -> Result<Vec<CameraModel>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cams: Vec<CameraModel> =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if cams.is_empty() {
        return Err(Error::Config(format!("{}: rig has no cameras", path.display())));
    }
    for c in &cams {
        c.validate()?;
    }
    Ok(cams)
}

pub fn write_rig(path: &Path, cams: &[CameraModel]) -> Result<()> {
    let text = serde_json::to_string_pretty(cams)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint2D {
    pub view: usize,
    pub uv: [f64; 2],
    pub present: bool,
}

/// Truncated L1 reprojection cost of a world point. Views without a present
/// keypoint, or with the point behind the camera, contribute `tau`.
pub fn reprojection_cost(p: [f64; 3], cams: &[CameraModel], kps: &[Keypoint2D], tau: f64) -> f64 {
    let mut per_view = vec![tau; cams.len()];
    for kp in kps.iter().filter(|k| k.present && k.view < cams.len()) {
        if let Some(uv) = cams[kp.view].project(p) {
            per_view[kp.view] = ((uv[0] - kp.uv[0]).abs() + (uv[1] - kp.uv[1]).abs()).min(tau);
        }
    }
    per_view.iter().sum()
}

/// Occupied voxel of `person` (in its own grid) minimizing
/// [`reprojection_cost`] of its center; ties go to the lexicographically
/// smallest voxel.
pub fn robust_triangulate(person: &OccupancyVolume, cams: &[CameraModel], kps: &[Keypoint2D], tau: f64) -> Result<[usize; 3]> {
    if !kps.iter().any(|k| k.present) {
        return Err(Error::InvalidInput("no present keypoint".into()));
    }
    if let Some(k) = kps.iter().find(|k| k.view >= cams.len()) {
        return Err(Error::InvalidInput(format!("keypoint for view {} but rig has {} cameras", k.view, cams.len())));
    }
    let spec = person.spec();
    let mut best: Option<([usize; 3], f64)> = None;
    for v in person.occupied() {
        let p = spec.voxel_center([v[0] as i64, v[1] as i64, v[2] as i64]);
        let c = reprojection_cost(p, cams, kps, tau);
        if best.is_none_or(|(_, b)| c < b) {
            best = Some((v, c));
        }
    }
    best.map(|(v, _)| v).ok_or_else(|| Error::Data("person volume has no occupied voxels".into()))
}

/// Unweighted least-squares intersection of the keypoint rays: the point
/// minimizing the summed squared distance to every ray.
pub fn least_squares_point(cams: &[CameraModel], kps: &[Keypoint2D]) -> Result<[f64; 3]> {
    let mut a = [[0.0f64; 3]; 3];
    let mut b = [0.0f64; 3];
    let mut n = 0;
    for kp in kps.iter().filter(|k| k.present && k.view < cams.len()) {
        let cam = &cams[kp.view];
        let d = cam.ray(kp.uv);
        let c = cam.center();
        for i in 0..3 {
            for j in 0..3 {
                let m = if i == j { 1.0 } else { 0.0 } - d[i] * d[j];
                a[i][j] += m;
                b[i] += m * c[j];
            }
        }
        n += 1;
    }
    if n < 2 {
        return Err(Error::InvalidInput("least squares needs two rays".into()));
    }
    solve3(a, b).ok_or_else(|| Error::InvalidInput("rays are parallel".into()))
}

fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let d = det3(a);
    if d.abs() < 1e-12 {
        return None;
    }
    Some(std::array::from_fn(|k| {
        let mut m = a;
        for i in 0..3 {
            m[i][k] = b[i];
        }
        det3(m) / d
    }))
}

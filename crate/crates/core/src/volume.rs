//! Point-cloud frames, voxel grids and the sub-volume crops used downstream.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod io;

pub use io::{parse_ply, read_frame, read_pc4d, write_pc4d};

/// Side length of a person sub-volume in voxels (x and y).
pub const PERSON_SIDE: usize = 80;
/// Height of person and thin sub-volumes in voxels.
pub const PERSON_HEIGHT: usize = 100;
/// Side length of the thin hand column in voxels.
pub const THIN_SIDE: usize = 41;

/// Voxel index of the person-volume center column.
pub const PERSON_CENTER: i64 = (PERSON_SIDE / 2) as i64;
/// Voxel index of the thin-volume center column.
pub const THIN_CENTER: i64 = (THIN_SIDE / 2) as i64;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointFrame {
    pub index: u64,
    pub points: Vec<[f32; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointFrame {
    pub fn new(index: u64, points: Vec<[f32; 3]>) -> Self {
        PointFrame {
            index,
            points,
            colors: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub origin: [f64; 3],
    #[serde(default = "default_voxel_size")]
    pub voxel_size: f64,
    pub dims: [usize; 3],
    #[serde(default = "default_ground_z")]
    pub ground_z: usize,
}

fn default_voxel_size() -> f64 {
    0.02
}

fn default_ground_z() -> usize {
    1
}

impl GridSpec {
    pub fn new(origin: [f64; 3], voxel_size: f64, dims: [usize; 3], ground_z: usize) -> Result<Self> {
        let spec = GridSpec {
            origin,
            voxel_size,
            dims,
            ground_z,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Person-sized grid anchored at the world origin with the floor at z = 0.
    pub fn person() -> Self {
        GridSpec {
            origin: [0.0, 0.0, -0.02],
            voxel_size: 0.02,
            dims: [PERSON_SIDE, PERSON_SIDE, PERSON_HEIGHT],
            ground_z: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0) || !self.voxel_size.is_finite() {
            return Err(Error::InvalidGrid(format!("voxel_size {} must be positive", self.voxel_size)));
        }
        if self.dims.contains(&0) {
            return Err(Error::InvalidGrid(format!("dims {:?} must all be >= 1", self.dims)));
        }
        if self.ground_z >= self.dims[2] {
            return Err(Error::InvalidGrid(format!(
                "ground_z {} outside [0, {})",
                self.ground_z, self.dims[2]
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Floor-quantized voxel index of a world point, `None` outside the grid.
    #[inline]
    pub fn voxel_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let q = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if !(q >= 0.0) || q >= self.dims[a] as f64 {
                return None;
            }
            out[a] = q as usize;
        }
        Some(out)
    }

    /// Signed voxel index without bounds checking.
    pub fn voxel_of_unbounded(&self, p: [f64; 3]) -> [i64; 3] {
        let mut out = [0i64; 3];
        for a in 0..3 {
            out[a] = ((p[a] - self.origin[a]) / self.voxel_size).floor() as i64;
        }
        out
    }

    /// World coordinates of a voxel center.
    pub fn voxel_center(&self, v: [i64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = self.origin[a] + (v[a] as f64 + 0.5) * self.voxel_size;
        }
        out
    }
}

/// Dense binary occupancy grid. Each `(x, y)` column is packed into
/// `ceil(N_z / 64)` words with bit `z % 64` of word `z / 64` set when the
/// voxel holds at least one surface point.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyVolume {
    spec: GridSpec,
    words_per_column: usize,
    bits: Vec<u64>,
}

impl OccupancyVolume {
    pub fn new(spec: GridSpec) -> Self {
        let words_per_column = spec.dims[2].div_ceil(64);
        OccupancyVolume {
            spec,
            words_per_column,
            bits: vec![0; spec.dims[0] * spec.dims[1] * words_per_column],
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dims(&self) -> [usize; 3] {
        self.spec.dims
    }

    #[inline]
    fn column_offset(&self, x: usize, y: usize) -> usize {
        (x * self.spec.dims[1] + y) * self.words_per_column
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        let off = self.column_offset(x, y);
        self.bits[off + z / 64] >> (z % 64) & 1 == 1
    }

    /// Signed lookup; out-of-grid voxels read as empty.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64, z: i64) -> bool {
        let d = self.spec.dims;
        if x < 0 || y < 0 || z < 0 || x as usize >= d[0] || y as usize >= d[1] || z as usize >= d[2] {
            return false;
        }
        self.get(x as usize, y as usize, z as usize)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let off = self.column_offset(x, y);
        let word = &mut self.bits[off + z / 64];
        if value {
            *word |= 1 << (z % 64);
        } else {
            *word &= !(1 << (z % 64));
        }
    }

    /// Packed words of one column, lowest z first.
    #[inline]
    pub fn column(&self, x: usize, y: usize) -> &[u64] {
        let off = self.column_offset(x, y);
        &self.bits[off..off + self.words_per_column]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    pub fn clear(&mut self) {
        self.bits.fill(0);
    }

    /// Occupied z indices of a column in ascending order.
    pub fn column_iter(&self, x: usize, y: usize) -> impl Iterator<Item = usize> + '_ {
        self.column(x, y).iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + b)
            })
        })
    }

    /// All occupied voxels in (x, y, z) lexicographic order.
    pub fn occupied(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [nx, ny, _] = self.spec.dims;
        (0..nx).flat_map(move |x| (0..ny).flat_map(move |y| self.column_iter(x, y).map(move |z| [x, y, z])))
    }

    /// Copies a window of `self` into a new volume with `spec`, where local
    /// voxel `(i, j, k)` reads parent voxel `(i + dx, j + dy, k + dz)`.
    fn crop_window(&self, spec: GridSpec, dx: i64, dy: i64, dz: i64) -> OccupancyVolume {
        let mut out = OccupancyVolume::new(spec);
        let [nx, ny, nz] = spec.dims;
        let [px, py, pz] = self.spec.dims;
        let aligned = dz == 0 && nz == pz;
        for i in 0..nx {
            let x = i as i64 + dx;
            if x < 0 || x >= px as i64 {
                continue;
            }
            for j in 0..ny {
                let y = j as i64 + dy;
                if y < 0 || y >= py as i64 {
                    continue;
                }
                if aligned {
                    let src = self.column_offset(x as usize, y as usize);
                    let dst = out.column_offset(i, j);
                    let w = self.words_per_column;
                    out.bits[dst..dst + w].copy_from_slice(&self.bits[src..src + w]);
                } else {
                    for z in self.column_iter(x as usize, y as usize) {
                        let k = z as i64 - dz;
                        if k >= 0 && (k as usize) < nz {
                            out.set(i, j, k as usize, true);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Marks every voxel that receives at least one point. Points outside the
/// grid are dropped; a point on a voxel boundary belongs to the higher index.
pub fn voxelize(frame: &PointFrame, spec: &GridSpec) -> OccupancyVolume {
    let mut volume = OccupancyVolume::new(*spec);
    voxelize_into(frame, &mut volume);
    volume
}

/// Clears `volume` and re-fills it from `frame`, reusing the allocation.
pub fn voxelize_into(frame: &PointFrame, volume: &mut OccupancyVolume) {
    volume.clear();
    let spec = volume.spec;
    for p in &frame.points {
        if let Some([x, y, z]) = spec.voxel_of([p[0] as f64, p[1] as f64, p[2] as f64]) {
            volume.set(x, y, z, true);
        }
    }
}

fn sub_spec(parent: &GridSpec, dx: i64, dy: i64, dz: i64, dims: [usize; 3], ground_z: usize) -> GridSpec {
    let s = parent.voxel_size;
    GridSpec {
        origin: [
            parent.origin[0] + dx as f64 * s,
            parent.origin[1] + dy as f64 * s,
            parent.origin[2] + dz as f64 * s,
        ],
        voxel_size: s,
        dims,
        ground_z,
    }
}

/// Offset from person-volume voxel coordinates to parent (room) coordinates
/// for a person crop centered at `center_xy`.
pub fn person_offset(parent: &GridSpec, center_xy: [i64; 2]) -> [i64; 3] {
    [
        center_xy[0] - PERSON_CENTER,
        center_xy[1] - PERSON_CENTER,
        parent.ground_z as i64 - 1,
    ]
}

/// Cuts the 80x80x100 person volume whose bottom center sits at parent
/// column `center_xy`. Local z = 1 lines up with the parent ground level.
pub fn crop_person_volume(volume: &OccupancyVolume, center_xy: [i64; 2]) -> OccupancyVolume {
    let [dx, dy, dz] = person_offset(&volume.spec, center_xy);
    let spec = sub_spec(&volume.spec, dx, dy, dz, [PERSON_SIDE, PERSON_SIDE, PERSON_HEIGHT], 1);
    volume.crop_window(spec, dx, dy, dz)
}

/// Cuts the 41-wide full-height column centered at `hand_xy` of a person volume.
pub fn crop_thin_volume(person: &OccupancyVolume, hand_xy: [i64; 2]) -> OccupancyVolume {
    let dx = hand_xy[0] - THIN_CENTER;
    let dy = hand_xy[1] - THIN_CENTER;
    let nz = person.spec.dims[2];
    let spec = sub_spec(&person.spec, dx, dy, 0, [THIN_SIDE, THIN_SIDE, nz], person.spec.ground_z);
    person.crop_window(spec, dx, dy, 0)
}

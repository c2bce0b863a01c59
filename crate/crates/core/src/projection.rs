//! Ground-plane feature maps and thin-volume side views.
//!
//! `f_t` is the 1-based height of the highest occupied voxel of each column,
//! `f_s` the number of occupied voxels, and `f_b` emphasizes the lowest
//! surface above the floor as `N_z - z`. All three are zero for empty columns.

use std::io::Write;

use crate::error::{Error, Result};
use crate::image::{Grid2, Image3};
use crate::volume::OccupancyVolume;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub top: Grid2<u16>,
    pub sum: Grid2<u16>,
    pub bottom: Grid2<u16>,
    pub stacked: Image3,
    pub nz: usize,
}

impl FeatureMaps {
    pub fn compute(volume: &OccupancyVolume) -> Self {
        let top = top_down(volume);
        let sum = column_sum(volume);
        let bottom = bottom_up(volume, volume.spec().ground_z);
        let nz = volume.dims()[2];
        let stacked = stack_features(&top, &sum, &bottom, nz).expect("maps share the volume footprint");
        FeatureMaps {
            top,
            sum,
            bottom,
            stacked,
            nz,
        }
    }

    /// `f_t / N_z` as a single float channel.
    pub fn top_normalized(&self) -> Grid2<f32> {
        self.stacked.channel(0)
    }
}

pub fn top_down(volume: &OccupancyVolume) -> Grid2<u16> {
    let [nx, ny, _] = volume.dims();
    Grid2::from_fn(nx, ny, |x, y| {
        let col = volume.column(x, y);
        for (wi, &w) in col.iter().enumerate().rev() {
            if w != 0 {
                return (wi * 64 + 64 - w.leading_zeros() as usize) as u16;
            }
        }
        0
    })
}

pub fn column_sum(volume: &OccupancyVolume) -> Grid2<u16> {
    let [nx, ny, _] = volume.dims();
    Grid2::from_fn(nx, ny, |x, y| volume.column(x, y).iter().map(|w| w.count_ones() as u16).sum())
}

/// Voxels at or below `ground_z` are ignored.
pub fn bottom_up(volume: &OccupancyVolume, ground_z: usize) -> Grid2<u16> {
    let [nx, ny, nz] = volume.dims();
    let first = ground_z + 1;
    Grid2::from_fn(nx, ny, |x, y| {
        for (wi, &w) in volume.column(x, y).iter().enumerate() {
            let base = wi * 64;
            let masked = if first >= base + 64 {
                0
            } else if first > base {
                w & (!0u64 << (first - base))
            } else {
                w
            };
            if masked != 0 {
                return (nz - (base + masked.trailing_zeros() as usize)) as u16;
            }
        }
        0
    })
}

/// Stacks `(f_t, f_s, f_b)` into one image, each channel divided by `nz` and clamped to [0, 1].
pub fn stack_features(top: &Grid2<u16>, sum: &Grid2<u16>, bottom: &Grid2<u16>, nz: usize) -> Result<Image3> {
    if top.dims() != sum.dims() || top.dims() != bottom.dims() {
        return Err(Error::DimensionMismatch(format!(
            "feature maps {:?}, {:?}, {:?}",
            top.dims(),
            sum.dims(),
            bottom.dims()
        )));
    }
    if nz == 0 {
        return Err(Error::InvalidInput("nz must be positive".into()));
    }
    let norm = |v: u16| (v as f32 / nz as f32).clamp(0.0, 1.0);
    let data = top
        .data()
        .iter()
        .zip(sum.data())
        .zip(bottom.data())
        .map(|((&t, &s), &b)| [norm(t), norm(s), norm(b)])
        .collect();
    Grid2::from_vec(top.nx(), top.ny(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViewDir {
    PosX,
    NegX,
    PosY,
    NegY,
}

impl ViewDir {
    pub const ALL: [ViewDir; 4] = [ViewDir::PosX, ViewDir::NegX, ViewDir::PosY, ViewDir::NegY];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Maps a thin-volume voxel to its `(transverse, z)` pixel and depth
    /// measured from the viewer-side face.
    #[inline]
    pub fn project(self, v: [usize; 3], dims: [usize; 3]) -> ([usize; 2], usize) {
        let [x, y, z] = v;
        match self {
            ViewDir::PosX => ([y, z], dims[0] - 1 - x),
            ViewDir::NegX => ([y, z], x),
            ViewDir::PosY => ([x, z], dims[1] - 1 - y),
            ViewDir::NegY => ([x, z], y),
        }
    }

    fn extents(self, dims: [usize; 3]) -> (usize, usize) {
        match self {
            ViewDir::PosX | ViewDir::NegX => (dims[1], dims[0]),
            ViewDir::PosY | ViewDir::NegY => (dims[0], dims[1]),
        }
    }
}

/// Four side images of a thin volume, indexed by [`ViewDir::index`]. Each pixel
/// holds `(near, sum, far)` normalized by the ray length.
#[derive(Debug, Clone, PartialEq)]
pub struct SideViewSet {
    pub views: [Image3; 4],
}

impl SideViewSet {
    pub fn view(&self, dir: ViewDir) -> &Image3 {
        &self.views[dir.index()]
    }
}

pub fn side_views(thin: &OccupancyVolume) -> Result<SideViewSet> {
    let dims = thin.dims();
    if dims[0] != crate::volume::THIN_SIDE || dims[1] != crate::volume::THIN_SIDE {
        return Err(Error::DimensionMismatch(format!("thin volume must be 41x41xN, got {dims:?}")));
    }
    Ok(side_views_any(thin))
}

pub(crate) fn side_views_any(thin: &OccupancyVolume) -> SideViewSet {
    let dims = thin.dims();
    let nz = dims[2];
    // (nearest depth, farthest depth, count) per pixel
    let mut acc: Vec<Grid2<(u16, u16, u16)>> = ViewDir::ALL
        .iter()
        .map(|d| Grid2::filled(d.extents(dims).0, nz, (u16::MAX, 0, 0)))
        .collect();
    for v in thin.occupied() {
        for dir in ViewDir::ALL {
            let ([t, z], depth) = dir.project(v, dims);
            let cell = acc[dir.index()].get_mut(t, z);
            cell.0 = cell.0.min(depth as u16);
            cell.1 = cell.1.max(depth as u16);
            cell.2 += 1;
        }
    }
    let views = std::array::from_fn(|i| {
        let len = ViewDir::ALL[i].extents(dims).1 as f32;
        acc[i].map(|&(near, far, count)| {
            if count == 0 {
                [0.0; 3]
            } else {
                [(len - near as f32) / len, count as f32 / len, (len - far as f32) / len]
            }
        })
    });
    SideViewSet { views }
}

/// Writes a 16-bit binary PGM of `map`, one image row per `y`. Pixel values
/// are `value * scale` with `scale = floor(65535 / nz)` recorded in a header comment.
pub fn write_pgm16<W: Write>(out: &mut W, map: &Grid2<u16>, nz: usize) -> std::io::Result<()> {
    let scale = (65535 / nz.max(1)) as u32;
    write!(out, "P5\n# volumetrack scale={scale} nz={nz} pixel=value*scale\n{} {}\n65535\n", map.nx(), map.ny())?;
    let mut buf = Vec::with_capacity(map.nx() * map.ny() * 2);
    for y in 0..map.ny() {
        for x in 0..map.nx() {
            let v = (*map.get(x, y) as u32 * scale).min(65535) as u16;
            buf.extend_from_slice(&v.to_be_bytes());
        }
    }
    out.write_all(&buf)
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Naive triple-loop projections used as independent test references.

    use super::*;

    pub fn top(v: &OccupancyVolume) -> Grid2<u16> {
        let [nx, ny, nz] = v.dims();
        Grid2::from_fn(nx, ny, |x, y| {
            let mut best = 0;
            for z in 0..nz {
                if v.get(x, y, z) {
                    best = best.max(z as u16 + 1);
                }
            }
            best
        })
    }

    pub fn sum(v: &OccupancyVolume) -> Grid2<u16> {
        let [nx, ny, nz] = v.dims();
        Grid2::from_fn(nx, ny, |x, y| (0..nz).filter(|&z| v.get(x, y, z)).count() as u16)
    }

    pub fn bottom(v: &OccupancyVolume, ground_z: usize) -> Grid2<u16> {
        let [nx, ny, nz] = v.dims();
        Grid2::from_fn(nx, ny, |x, y| {
            let mut best = 0;
            for z in 0..nz {
                if z > ground_z && v.get(x, y, z) {
                    best = best.max((nz - z) as u16);
                }
            }
            best
        })
    }

    /// Marches each ray voxel by voxel from the viewer side.
    pub fn side(v: &OccupancyVolume, dir: ViewDir) -> Image3 {
        let [nx, ny, nz] = v.dims();
        let (width, len) = match dir {
            ViewDir::PosX | ViewDir::NegX => (ny, nx),
            _ => (nx, ny),
        };
        Grid2::from_fn(width, nz, |t, z| {
            let voxel_at = |d: usize| -> bool {
                match dir {
                    ViewDir::PosX => v.get(nx - 1 - d, t, z),
                    ViewDir::NegX => v.get(d, t, z),
                    ViewDir::PosY => v.get(t, ny - 1 - d, z),
                    ViewDir::NegY => v.get(t, d, z),
                }
            };
            let hits: Vec<usize> = (0..len).filter(|&d| voxel_at(d)).collect();
            match (hits.first(), hits.last()) {
                (Some(&a), Some(&b)) => {
                    let l = len as f32;
                    [(l - a as f32) / l, hits.len() as f32 / l, (l - b as f32) / l]
                }
                _ => [0.0; 3],
            }
        })
    }
}

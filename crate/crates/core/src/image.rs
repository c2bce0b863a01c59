//! Dense row-major 2D grids used for feature maps, patches and label images.
//!
//! Indexing is `(x, y)` with `y` the fastest-varying axis, matching the
//! column-major layout of the occupancy volumes the maps are derived from.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    nx: usize,
    ny: usize,
    data: Vec<T>,
}

/// Three-channel image, channels stored per pixel.
pub type Image3 = Grid2<[f32; 3]>;

impl<T: Clone + Default> Grid2<T> {
    pub fn new(nx: usize, ny: usize) -> Self {
        Self::filled(nx, ny, T::default())
    }
}

impl<T: Clone> Grid2<T> {
    pub fn filled(nx: usize, ny: usize, value: T) -> Self {
        Grid2 {
            nx,
            ny,
            data: vec![value; nx * ny],
        }
    }

    pub fn from_vec(nx: usize, ny: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != nx * ny {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {nx}x{ny} grid",
                data.len()
            )));
        }
        Ok(Grid2 { nx, ny, data })
    }

    pub fn from_fn(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(nx * ny);
        for x in 0..nx {
            for y in 0..ny {
                data.push(f(x, y));
            }
        }
        Grid2 { nx, ny, data }
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid2<U> {
        Grid2 {
            nx: self.nx,
            ny: self.ny,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T> Grid2<T> {
    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[x * self.ny + y]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[x * self.ny + y]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[x * self.ny + y] = value;
    }

    /// Signed lookup; `None` outside the grid.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> Option<&T> {
        if x < 0 || y < 0 || x as usize >= self.nx || y as usize >= self.ny {
            None
        } else {
            Some(self.get(x as usize, y as usize))
        }
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Iterates `(x, y, value)` in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let ny = self.ny;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, v)| (i / ny, i % ny, v))
    }
}

impl Image3 {
    pub fn channel(&self, c: usize) -> Grid2<f32> {
        self.map(|p| p[c])
    }
}

/// Copies a `size`x`size` window centered on `center` out of `map`, filling
/// pixels outside the map with `T::default()`.
///
/// The center lands on local index `size / 2` for both odd and even sizes.
pub fn extract_patch<T: Clone + Default>(map: &Grid2<T>, center: [i64; 2], size: usize) -> Grid2<T> {
    assert!(size >= 1, "patch size must be positive");
    let half = (size / 2) as i64;
    Grid2::from_fn(size, size, |i, j| {
        let x = center[0] - half + i as i64;
        let y = center[1] - half + j as i64;
        map.get_signed(x, y).cloned().unwrap_or_default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_interior_is_plain_copy() {
        let map = Grid2::from_fn(20, 20, |x, y| (x * 100 + y) as u32);
        let p = extract_patch(&map, [10, 10], 5);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(*p.get(i, j), ((8 + i) * 100 + 8 + j) as u32);
            }
        }
    }

    #[test]
    fn patch_at_origin_pads_top_left_quadrant() {
        let map = Grid2::filled(100, 100, 1u8);
        let p = extract_patch(&map, [0, 0], 80);
        for i in 0..80 {
            for j in 0..80 {
                let expect = if i < 40 || j < 40 { 0 } else { 1 };
                assert_eq!(*p.get(i, j), expect, "({i},{j})");
            }
        }
    }

    #[test]
    fn even_patch_center_index() {
        let mut map = Grid2::<u8>::new(10, 10);
        map.set(5, 5, 7);
        let p = extract_patch(&map, [5, 5], 4);
        assert_eq!(*p.get(2, 2), 7);
    }

    #[test]
    fn from_vec_checks_len() {
        assert!(Grid2::from_vec(2, 2, vec![0u8; 3]).is_err());
    }
}

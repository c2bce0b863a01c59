//! Single-scale iterative Lucas-Kanade on top-down height maps.

use crate::image::Grid2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    /// Odd window side in pixels.
    pub window: usize,
    pub iterations: usize,
    /// Structure tensors with a larger eigenvalue ratio are rejected.
    pub max_condition: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            window: 21,
            iterations: 10,
            max_condition: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flow {
    pub dx: f64,
    pub dy: f64,
    pub degenerate: bool,
}

impl Flow {
    pub const ZERO_DEGENERATE: Flow = Flow {
        dx: 0.0,
        dy: 0.0,
        degenerate: true,
    };

    pub fn vector(&self) -> [f64; 2] {
        [self.dx, self.dy]
    }
}

/// Bilinear sample with zero padding outside the map.
#[inline]
pub fn sample(map: &Grid2<f32>, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let (xi, yi) = (x0 as i64, y0 as i64);
    let at = |a: i64, b: i64| map.get_signed(a, b).copied().unwrap_or(0.0) as f64;
    (1.0 - fx) * ((1.0 - fy) * at(xi, yi) + fy * at(xi, yi + 1))
        + fx * ((1.0 - fy) * at(xi + 1, yi) + fy * at(xi + 1, yi + 1))
}

/// Displacement of the window around `point` from `prev` to `cur`.
///
/// Returns a zero degenerate flow when the window's structure tensor is
/// singular or worse conditioned than `params.max_condition`.
pub fn lk_flow(prev: &Grid2<f32>, cur: &Grid2<f32>, point: [f64; 2], params: &FlowParams) -> Flow {
    let half = (params.window / 2) as i64;
    let n = (2 * half + 1) as usize;
    let mut gx = Vec::with_capacity(n * n);
    let mut gy = Vec::with_capacity(n * n);
    let mut base = Vec::with_capacity(n * n);
    let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
    for i in -half..=half {
        for j in -half..=half {
            let x = point[0] + i as f64;
            let y = point[1] + j as f64;
            let ix = 0.5 * (sample(prev, x + 1.0, y) - sample(prev, x - 1.0, y));
            let iy = 0.5 * (sample(prev, x, y + 1.0) - sample(prev, x, y - 1.0));
            gxx += ix * ix;
            gxy += ix * iy;
            gyy += iy * iy;
            gx.push(ix);
            gy.push(iy);
            base.push(sample(prev, x, y));
        }
    }
    let trace = gxx + gyy;
    let det = gxx * gyy - gxy * gxy;
    let disc = ((gxx - gyy).powi(2) + 4.0 * gxy * gxy).sqrt();
    let (l_max, l_min) = (0.5 * (trace + disc), 0.5 * (trace - disc));
    if !(l_min > 1e-12) || l_max / l_min > params.max_condition || det <= 0.0 {
        return Flow::ZERO_DEGENERATE;
    }
    let (mut dx, mut dy) = (0.0, 0.0);
    for _ in 0..params.iterations {
        let (mut bx, mut by) = (0.0, 0.0);
        let mut k = 0;
        for i in -half..=half {
            for j in -half..=half {
                let diff = base[k] - sample(cur, point[0] + i as f64 + dx, point[1] + j as f64 + dy);
                bx += gx[k] * diff;
                by += gy[k] * diff;
                k += 1;
            }
        }
        let ux = (gyy * bx - gxy * by) / det;
        let uy = (gxx * by - gxy * bx) / det;
        dx += ux;
        dy += uy;
        if ux * ux + uy * uy < 1e-6 {
            break;
        }
    }
    if !dx.is_finite() || !dy.is_finite() {
        return Flow::ZERO_DEGENERATE;
    }
    Flow {
        dx,
        dy,
        degenerate: false,
    }
}

#[cfg(test)]
pub(crate) fn smooth_texture(nx: usize, ny: usize, blobs: &[([f64; 2], f64, f64)], shift: [f64; 2]) -> Grid2<f32> {
    Grid2::from_fn(nx, ny, |x, y| {
        blobs
            .iter()
            .map(|&(c, sigma, amp)| {
                let dx = x as f64 - c[0] - shift[0];
                let dy = y as f64 - c[1] - shift[1];
                amp * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            })
            .sum::<f64>() as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_frames_give_zero() {
        let m = smooth_texture(64, 64, &[([30.0, 32.0], 4.0, 1.0), ([36.0, 28.0], 3.0, 0.5)], [0.0; 2]);
        let f = lk_flow(&m, &m, [32.0, 32.0], &FlowParams::default());
        assert!(!f.degenerate);
        assert!(f.dx.abs() < 1e-9 && f.dy.abs() < 1e-9);
    }

    #[test]
    fn recovers_translation() {
        let blobs = [([32.0, 32.0], 4.0, 1.0)];
        let a = smooth_texture(64, 64, &blobs, [0.0; 2]);
        let b = smooth_texture(64, 64, &blobs, [2.0, 0.0]);
        let f = lk_flow(&a, &b, [32.0, 32.0], &FlowParams::default());
        assert!((f.dx - 2.0).abs() < 0.5, "{f:?}");
        assert!(f.dy.abs() < 0.5);
    }

    #[test]
    fn flat_window_is_degenerate() {
        let flat = Grid2::filled(40, 40, 0.5f32);
        let f = lk_flow(&flat, &flat, [20.0, 20.0], &FlowParams::default());
        assert_eq!(f, Flow::ZERO_DEGENERATE);
        // a pure ridge constrains only one direction
        let ridge = Grid2::from_fn(40, 40, |x, _| (x as f32 * 0.3).sin());
        assert!(lk_flow(&ridge, &ridge, [20.0, 20.0], &FlowParams::default()).degenerate);
    }

    #[test]
    fn bilinear_sampling() {
        let mut m = Grid2::<f32>::new(3, 3);
        m.set(1, 1, 1.0);
        assert_eq!(sample(&m, 1.0, 1.0), 1.0);
        assert!((sample(&m, 1.5, 1.0) - 0.5).abs() < 1e-12);
        assert!((sample(&m, 0.5, 0.5) - 0.25).abs() < 1e-12);
        assert_eq!(sample(&m, -5.0, 1.0), 0.0);
    }
}

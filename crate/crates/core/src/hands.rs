//! Left/right hand localization inside an 80x80x100 person volume: hand (x, y)
//! from a top-down label map, z from the side views of a thin volume cropped
//! around each hand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Grid2, Image3};
use crate::projection::{side_views, ViewDir};
use crate::volume::{crop_thin_volume, OccupancyVolume, PERSON_HEIGHT, PERSON_SIDE, THIN_CENTER, THIN_SIDE};

pub const NONE: u8 = 0;
pub const LEFT: u8 = 1;
pub const RIGHT: u8 = 2;
/// Side-view hand label.
pub const HAND: u8 = 1;

/// Coordinate reported for a hand that could not be found.
pub const FALLBACK: [i64; 3] = [40, 40, 50];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub const BOTH: [Hand; 2] = [Hand::Left, Hand::Right];

    pub fn label(self) -> u8 {
        match self {
            Hand::Left => LEFT,
            Hand::Right => RIGHT,
        }
    }
}

/// What the segmenter is looking at. Side views carry the hand being refined
/// and where its thin volume was cut (person-volume x, y).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewContext {
    TopDown,
    Side { hand: Hand, center: [i64; 2], dir: ViewDir },
}

/// Per-pixel hand labeling. Top-down maps use [`NONE`]/[`LEFT`]/[`RIGHT`],
/// side maps [`NONE`]/[`HAND`]; the output has the input's dimensions.
///
/// Implementations must label only the person centered in the patch.
pub trait Segmenter2D: Sync {
    fn label(&self, image: &Image3, ctx: &ViewContext) -> Grid2<u8>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandPoint {
    pub xyz: [i64; 3],
    pub missing: bool,
}

impl HandPoint {
    pub const MISSING: HandPoint = HandPoint {
        xyz: FALLBACK,
        missing: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandEstimate {
    pub left: HandPoint,
    pub right: HandPoint,
    /// Labeled pixels behind each hand: `[top-down, side]`.
    pub support: [[usize; 2]; 2],
}

impl HandEstimate {
    pub fn get(&self, hand: Hand) -> &HandPoint {
        match hand {
            Hand::Left => &self.left,
            Hand::Right => &self.right,
        }
    }
}

fn lower_median(v: &mut [i64]) -> i64 {
    v.sort_unstable();
    v[(v.len() - 1) / 2]
}

/// Per-axis lower median of the pixels carrying `class`.
pub fn median_xy(labels: &Grid2<u8>, class: u8) -> Option<[i64; 2]> {
    let (mut xs, mut ys): (Vec<i64>, Vec<i64>) = labels
        .iter()
        .filter(|&(_, _, &l)| l == class)
        .map(|(x, y, _)| (x as i64, y as i64))
        .unzip();
    if xs.is_empty() {
        return None;
    }
    Some([lower_median(&mut xs), lower_median(&mut ys)])
}

/// Lower median of the z rows of every hand pixel pooled over the side views.
pub fn median_z(views: &[Grid2<u8>]) -> Option<i64> {
    let mut zs: Vec<i64> = views
        .iter()
        .flat_map(|v| v.iter().filter(|&(_, _, &l)| l == HAND).map(|(_, z, _)| z as i64))
        .collect();
    if zs.is_empty() {
        return None;
    }
    Some(lower_median(&mut zs))
}

/// Runs the decomposition for both hands. Never fails: a hand missing at
/// either stage is reported at [`FALLBACK`] with its flag set.
pub fn localize_hands(person: &OccupancyVolume, patch: &Image3, seg: &dyn Segmenter2D) -> HandEstimate {
    debug_assert_eq!(person.dims(), [PERSON_SIDE, PERSON_SIDE, PERSON_HEIGHT]);
    let top = seg.label(patch, &ViewContext::TopDown);
    let mut out = HandEstimate {
        left: HandPoint::MISSING,
        right: HandPoint::MISSING,
        support: [[0; 2]; 2],
    };
    for (k, hand) in Hand::BOTH.into_iter().enumerate() {
        let Some(xy) = median_xy(&top, hand.label()) else {
            continue;
        };
        out.support[k][0] = top.data().iter().filter(|&&l| l == hand.label()).count();
        let thin = crop_thin_volume(person, xy);
        let Ok(views) = side_views(&thin) else {
            continue;
        };
        let labels: Vec<Grid2<u8>> = ViewDir::ALL
            .iter()
            .map(|&dir| {
                seg.label(
                    views.view(dir),
                    &ViewContext::Side {
                        hand,
                        center: xy,
                        dir,
                    },
                )
            })
            .collect();
        out.support[k][1] = labels.iter().map(|l| l.data().iter().filter(|&&v| v == HAND).count()).sum();
        if let Some(z) = median_z(&labels) {
            let p = HandPoint {
                xyz: [xy[0], xy[1], z],
                missing: false,
            };
            match hand {
                Hand::Left => out.left = p,
                Hand::Right => out.right = p,
            }
        }
    }
    out
}

/// Ground-truth hand voxels of the centered person, in person-volume
/// coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HandVoxels {
    pub left: Vec<[i64; 3]>,
    pub right: Vec<[i64; 3]>,
}

impl HandVoxels {
    pub fn get(&self, hand: Hand) -> &[[i64; 3]] {
        match hand {
            Hand::Left => &self.left,
            Hand::Right => &self.right,
        }
    }
}

/// Label noise for [`OracleSegmenter`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corruption {
    /// Per-pixel flip probability. Hand pixels flip to none; background pixels
    /// within [`FLIP_BAND`] of a true label flip to that label.
    pub flip_rate: f64,
    /// Independent probability that a side view comes back empty.
    pub wipe_prob: f64,
    /// Side views wiped per hand regardless of `wipe_prob` (0..=4).
    pub wipe_views: usize,
    pub seed: u64,
}

impl Default for Corruption {
    fn default() -> Self {
        Corruption {
            flip_rate: 0.0,
            wipe_prob: 0.0,
            wipe_views: 0,
            seed: 0,
        }
    }
}

/// Background pixels farther than this (Chebyshev) from every true label never
/// flip.
pub const FLIP_BAND: i64 = 3;

/// Labels exactly the pixels onto which the ground-truth hand voxels project,
/// optionally corrupted.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSegmenter {
    gt: HandVoxels,
    pub corruption: Corruption,
}

impl OracleSegmenter {
    pub fn new(gt: Option<HandVoxels>) -> Result<Self> {
        let gt = gt.ok_or_else(|| Error::Data("oracle segmenter needs ground-truth hand voxels".into()))?;
        Ok(OracleSegmenter {
            gt,
            corruption: Corruption::default(),
        })
    }

    pub fn with_corruption(mut self, corruption: Corruption) -> Self {
        self.corruption = corruption;
        self
    }

    fn clean(&self, dims: (usize, usize), ctx: &ViewContext) -> Grid2<u8> {
        let mut out = Grid2::new(dims.0, dims.1);
        match *ctx {
            ViewContext::TopDown => {
                for hand in Hand::BOTH {
                    for v in self.gt.get(hand) {
                        if let Some(l) = out.get_signed(v[0], v[1]) {
                            // overlapping hands keep the first (left) label
                            if *l == NONE {
                                out.set(v[0] as usize, v[1] as usize, hand.label());
                            }
                        }
                    }
                }
            }
            ViewContext::Side { hand, center, dir } => {
                let side = THIN_SIDE as i64;
                for v in self.gt.get(hand) {
                    let lx = v[0] - center[0] + THIN_CENTER;
                    let ly = v[1] - center[1] + THIN_CENTER;
                    if !(0..side).contains(&lx) || !(0..side).contains(&ly) || v[2] < 0 {
                        continue;
                    }
                    let ([t, z], _) = dir.project([lx as usize, ly as usize, v[2] as usize], [THIN_SIDE, THIN_SIDE, dims.1]);
                    if t < dims.0 && z < dims.1 {
                        out.set(t, z, HAND);
                    }
                }
            }
        }
        out
    }

    fn rng(&self, ctx: &ViewContext) -> ChaCha8Rng {
        let tag = match *ctx {
            ViewContext::TopDown => 0u64,
            ViewContext::Side { hand, center, dir } => {
                1 + hand.label() as u64 * 8
                    + dir.index() as u64
                    + ((center[0] as u64 & 0xffff) << 16)
                    + ((center[1] as u64 & 0xffff) << 32)
            }
        };
        ChaCha8Rng::seed_from_u64(self.corruption.seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    fn wiped(&self, ctx: &ViewContext) -> bool {
        let ViewContext::Side { hand, dir, .. } = *ctx else {
            return false;
        };
        let c = &self.corruption;
        if c.wipe_views > 0 {
            // a per-hand seeded permutation of the four views; the first k are wiped
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed ^ hand.label() as u64);
            let mut order = ViewDir::ALL;
            for i in (1..4).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            if order[..c.wipe_views.min(4)].contains(&dir) {
                return true;
            }
        }
        c.wipe_prob > 0.0 && self.rng(ctx).random_bool(c.wipe_prob.min(1.0))
    }
}

impl Segmenter2D for OracleSegmenter {
    fn label(&self, image: &Image3, ctx: &ViewContext) -> Grid2<u8> {
        let dims = image.dims();
        if self.wiped(ctx) {
            return Grid2::new(dims.0, dims.1);
        }
        let clean = self.clean(dims, ctx);
        let rate = self.corruption.flip_rate;
        if rate <= 0.0 {
            return clean;
        }
        let mut rng = self.rng(ctx);
        let mut out = clean.clone();
        for (x, y, &l) in clean.iter() {
            // one draw per pixel keeps the stream aligned across rates
            let flip = rng.random::<f64>() < rate;
            if !flip {
                continue;
            }
            if l != NONE {
                out.set(x, y, NONE);
                continue;
            }
            let mut near = NONE;
            'band: for dx in -FLIP_BAND..=FLIP_BAND {
                for dy in -FLIP_BAND..=FLIP_BAND {
                    if let Some(&n) = clean.get_signed(x as i64 + dx, y as i64 + dy) {
                        if n != NONE {
                            near = n;
                            break 'band;
                        }
                    }
                }
            }
            out.set(x, y, near);
        }
        out
    }
}

/// Learning-free extremity finder; best effort, reliable only when the
/// hands stick out of the silhouette (e.g. a T-pose).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicSegmenter {
    pub search_radius: f64,
    pub min_separation: f64,
    pub disk_radius: i64,
    /// Normalized bottom-up value above which a pixel counts as ground contact.
    pub foot_level: f32,
}

impl Default for HeuristicSegmenter {
    fn default() -> Self {
        HeuristicSegmenter {
            search_radius: 35.0,
            min_separation: 10.0,
            disk_radius: 3,
            foot_level: 0.9,
        }
    }
}

fn centroid(pts: &[[f64; 2]]) -> Option<[f64; 2]> {
    if pts.is_empty() {
        return None;
    }
    let n = pts.len() as f64;
    Some([pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n])
}

impl HeuristicSegmenter {
    fn top(&self, image: &Image3) -> Grid2<u8> {
        let (nx, ny) = image.dims();
        let mut out = Grid2::new(nx, ny);
        let c = [(nx / 2) as f64, (ny / 2) as f64];
        let occ: Vec<[f64; 2]> = image
            .iter()
            .filter(|(x, y, p)| p[0] > 0.0 && (*x as f64 - c[0]).hypot(*y as f64 - c[1]) <= self.search_radius)
            .map(|(x, y, _)| [x as f64, y as f64])
            .collect();
        let Some(mid) = centroid(&occ) else {
            return out;
        };
        let dist = |p: &[f64; 2]| (p[0] - mid[0]).hypot(p[1] - mid[1]);
        let far = |pts: &mut dyn Iterator<Item = &[f64; 2]>| {
            pts.fold(None::<[f64; 2]>, |best, p| match best {
                Some(b) if dist(&b) >= dist(p) => Some(b),
                _ => Some(*p),
            })
        };
        let Some(a) = far(&mut occ.iter()) else {
            return out;
        };
        let Some(b) = far(&mut occ.iter().filter(|p| (p[0] - a[0]).hypot(p[1] - a[1]) >= self.min_separation)) else {
            return out;
        };
        // facing direction: ground-contact pixels (feet) sit ahead of the body
        let feet: Vec<[f64; 2]> = image
            .iter()
            .filter(|(x, y, p)| p[2] >= self.foot_level && (*x as f64 - c[0]).hypot(*y as f64 - c[1]) <= self.search_radius)
            .map(|(x, y, _)| [x as f64, y as f64])
            .collect();
        let mut axis = centroid(&feet).map(|f| [f[0] - mid[0], f[1] - mid[1]]).unwrap_or([0.0; 2]);
        if axis[0].hypot(axis[1]) < 0.5 {
            axis = [(a[0] + b[0]) / 2.0 - mid[0], (a[1] + b[1]) / 2.0 - mid[1]];
        }
        let side = |p: [f64; 2]| axis[0] * (p[1] - mid[1]) - axis[1] * (p[0] - mid[0]);
        let (left, right) = if side(a) >= side(b) { (a, b) } else { (b, a) };
        let r = self.disk_radius;
        for (p, label) in [(right, RIGHT), (left, LEFT)] {
            let (px, py) = (p[0] as i64, p[1] as i64);
            for dx in -r..=r {
                for dy in -r..=r {
                    if dx * dx + dy * dy > r * r {
                        continue;
                    }
                    let (x, y) = (px + dx, py + dy);
                    if image.get_signed(x, y).is_some_and(|v| v[0] > 0.0) {
                        out.set(x as usize, y as usize, label);
                    }
                }
            }
        }
        out
    }

    fn side(&self, image: &Image3) -> Grid2<u8> {
        let (nt, nz) = image.dims();
        let mut out = Grid2::new(nt, nz);
        let mid = (nt / 2) as i64;
        let r = self.disk_radius;
        // highest occupied pixel near the center line: the top of the hand
        let top = (0..nz).rev().find(|&z| {
            (mid - 1..=mid + 1).any(|t| image.get_signed(t, z as i64).is_some_and(|p| p[1] > 0.0))
        });
        let Some(z_top) = top else {
            return out;
        };
        let zc = z_top as i64 - r + 1;
        for dt in -r..=r {
            for dz in -r..=r {
                if dt * dt + dz * dz <= r * r && out.get_signed(mid + dt, zc + dz).is_some() {
                    out.set((mid + dt) as usize, (zc + dz) as usize, HAND);
                }
            }
        }
        out
    }
}

impl Segmenter2D for HeuristicSegmenter {
    fn label(&self, image: &Image3, ctx: &ViewContext) -> Grid2<u8> {
        match ctx {
            ViewContext::TopDown => self.top(image),
            ViewContext::Side { .. } => self.side(image),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::projection::FeatureMaps;
    use crate::volume::GridSpec;

    struct Blank;

    impl Segmenter2D for Blank {
        fn label(&self, image: &Image3, _: &ViewContext) -> Grid2<u8> {
            Grid2::new(image.nx(), image.ny())
        }
    }

    fn labels_from(nx: usize, ny: usize, px: &[(usize, usize)], class: u8) -> Grid2<u8> {
        let mut g = Grid2::new(nx, ny);
        for &(x, y) in px {
            g.set(x, y, class);
        }
        g
    }

    #[test]
    fn median_xy_examples() {
        assert_eq!(median_xy(&labels_from(80, 80, &[(10, 10)], LEFT), LEFT), Some([10, 10]));
        assert_eq!(median_xy(&labels_from(80, 80, &[(0, 0), (10, 0), (20, 0)], RIGHT), RIGHT), Some([10, 0]));
        assert_eq!(median_xy(&labels_from(80, 80, &[(0, 5), (10, 1)], LEFT), LEFT), Some([0, 1]));
        assert_eq!(median_xy(&labels_from(80, 80, &[(3, 3)], LEFT), RIGHT), None);
    }

    #[test]
    fn median_z_rejects_one_outlier_view() {
        let mk = |zs: &[usize]| labels_from(41, 100, &zs.iter().map(|&z| (20, z)).collect::<Vec<_>>(), HAND);
        assert_eq!(median_z(&[mk(&[50])]), Some(50));
        assert_eq!(median_z(&[mk(&[48]), mk(&[50]), mk(&[52]), mk(&[90])]), Some(50));
        assert_eq!(median_z(&[mk(&[]), mk(&[]), mk(&[]), mk(&[])]), None);
    }

    proptest! {
        #[test]
        fn median_xy_matches_sort(px in proptest::collection::vec((0usize..80, 0usize..80), 1..60)) {
            let g = labels_from(80, 80, &px, LEFT);
            let mut pts: Vec<(usize, usize)> = px.clone();
            pts.sort_unstable();
            pts.dedup();
            let mut xs: Vec<usize> = pts.iter().map(|p| p.0).collect();
            let mut ys: Vec<usize> = pts.iter().map(|p| p.1).collect();
            xs.sort_unstable();
            ys.sort_unstable();
            let k = (xs.len() - 1) / 2;
            prop_assert_eq!(median_xy(&g, LEFT), Some([xs[k] as i64, ys[k] as i64]));
        }
    }

    /// Two hand balls on an otherwise empty person volume.
    fn ball_person(left: [i64; 3], right: [i64; 3]) -> (OccupancyVolume, HandVoxels) {
        let mut v = OccupancyVolume::new(GridSpec::person());
        let mut gt = HandVoxels::default();
        for (c, dst) in [(left, &mut gt.left), (right, &mut gt.right)] {
            for dx in -2i64..=2 {
                for dy in -2i64..=2 {
                    for dz in -2i64..=2 {
                        let r2 = dx * dx + dy * dy + dz * dz;
                        if (3..=6).contains(&r2) {
                            let p = [c[0] + dx, c[1] + dy, c[2] + dz];
                            v.set(p[0] as usize, p[1] as usize, p[2] as usize, true);
                            dst.push(p);
                        }
                    }
                }
            }
        }
        (v, gt)
    }

    fn manhattan(a: [i64; 3], b: [i64; 3]) -> i64 {
        (0..3).map(|i| (a[i] - b[i]).abs()).sum()
    }

    #[test]
    fn oracle_recovers_hand_centers() {
        let (l, r) = ([30, 55, 70], [52, 20, 45]);
        let (v, gt) = ball_person(l, r);
        let seg = OracleSegmenter::new(Some(gt)).unwrap();
        let maps = FeatureMaps::compute(&v);
        let est = localize_hands(&v, &maps.stacked, &seg);
        assert!(!est.left.missing && !est.right.missing);
        assert!(manhattan(est.left.xyz, l) <= 1, "{est:?}");
        assert!(manhattan(est.right.xyz, r) <= 1, "{est:?}");
    }

    #[test]
    fn blank_segmenter_falls_back() {
        let (v, _) = ball_person([30, 55, 70], [52, 20, 45]);
        let est = localize_hands(&v, &FeatureMaps::compute(&v).stacked, &Blank);
        assert_eq!(est.left, HandPoint::MISSING);
        assert_eq!(est.right.xyz, [40, 40, 50]);
    }

    #[test]
    fn oracle_without_gt_is_an_error() {
        assert!(OracleSegmenter::new(None).is_err());
    }

    #[test]
    fn side_labels_only_move_z() {
        let (v, gt) = ball_person([30, 55, 70], [52, 20, 45]);
        let stacked = FeatureMaps::compute(&v).stacked;
        let clean = localize_hands(&v, &stacked, &OracleSegmenter::new(Some(gt.clone())).unwrap());
        let noisy = OracleSegmenter::new(Some(gt)).unwrap().with_corruption(Corruption {
            wipe_views: 3,
            ..Default::default()
        });
        let est = localize_hands(&v, &stacked, &noisy);
        assert_eq!(est.left.xyz[..2], clean.left.xyz[..2]);
        assert_eq!(est.right.xyz[..2], clean.right.xyz[..2]);
    }

    #[test]
    fn one_wiped_view_keeps_z() {
        let (v, gt) = ball_person([30, 55, 70], [52, 20, 45]);
        let stacked = FeatureMaps::compute(&v).stacked;
        let clean = localize_hands(&v, &stacked, &OracleSegmenter::new(Some(gt.clone())).unwrap());
        for seed in 0..8 {
            let seg = OracleSegmenter::new(Some(gt.clone())).unwrap().with_corruption(Corruption {
                wipe_views: 1,
                seed,
                ..Default::default()
            });
            let est = localize_hands(&v, &stacked, &seg);
            assert_eq!(est.left.xyz, clean.left.xyz);
            assert_eq!(est.right.xyz, clean.right.xyz);
        }
    }

    #[test]
    fn all_views_wiped_marks_missing() {
        let (v, gt) = ball_person([30, 55, 70], [52, 20, 45]);
        let seg = OracleSegmenter::new(Some(gt)).unwrap().with_corruption(Corruption {
            wipe_views: 4,
            ..Default::default()
        });
        let est = localize_hands(&v, &FeatureMaps::compute(&v).stacked, &seg);
        assert!(est.left.missing && est.right.missing);
        assert!(est.support[0][0] > 0 && est.support[0][1] == 0);
    }

    #[test]
    fn flips_are_deterministic_and_banded() {
        let (_, gt) = ball_person([30, 55, 70], [52, 20, 45]);
        let seg = OracleSegmenter::new(Some(gt)).unwrap().with_corruption(Corruption {
            flip_rate: 0.3,
            seed: 7,
            ..Default::default()
        });
        let img = Image3::new(80, 80);
        let a = seg.label(&img, &ViewContext::TopDown);
        assert_eq!(a, seg.label(&img, &ViewContext::TopDown));
        for (x, y, &l) in a.iter() {
            if l != NONE {
                let d = (x as i64 - 30).abs().max((y as i64 - 55).abs()).min((x as i64 - 52).abs().max((y as i64 - 20).abs()));
                assert!(d <= 2 + FLIP_BAND);
            }
        }
    }

    #[test]
    fn left_right_medians_disjoint() {
        let (v, gt) = ball_person([30, 55, 70], [33, 58, 45]);
        let labels = OracleSegmenter::new(Some(gt)).unwrap().label(&FeatureMaps::compute(&v).stacked, &ViewContext::TopDown);
        assert_ne!(median_xy(&labels, LEFT), median_xy(&labels, RIGHT));
    }

    #[test]
    fn heuristic_on_empty_patch_is_blank() {
        let h = HeuristicSegmenter::default();
        let img = Image3::new(80, 80);
        assert!(h.label(&img, &ViewContext::TopDown).data().iter().all(|&l| l == NONE));
        let side = Image3::new(41, 100);
        let ctx = ViewContext::Side {
            hand: Hand::Left,
            center: [40, 40],
            dir: ViewDir::PosX,
        };
        assert!(h.label(&side, &ctx).data().iter().all(|&l| l == NONE));
    }
}

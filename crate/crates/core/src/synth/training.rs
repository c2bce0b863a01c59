//! Labeled samples for the detector, the verifier, and the hand segmenters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FrameGt;
use crate::detection::{flatten, WINDOW};
use crate::hands::{Hand, HandVoxels, OracleSegmenter, Segmenter2D, ViewContext};
use crate::image::{extract_patch, Grid2, Image3};
use crate::projection::{side_views, FeatureMaps, ViewDir};
use crate::volume::{crop_thin_volume, voxelize, GridSpec, OccupancyVolume, PointFrame};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    /// Negatives drawn per positive; half near people, half anywhere.
    pub negatives_per_positive: usize,
    /// Extra positives jittered by up to this many pixels.
    pub jitter: i64,
    /// Negatives lie farther than this (Chebyshev) from every root.
    pub min_negative_distance: i64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            negatives_per_positive: 4,
            jitter: 1,
            min_negative_distance: 12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    /// Normalized top-down patches for the linear proposer.
    pub patches: Vec<Grid2<f32>>,
    /// Flattened stacked patches for the verifier, parallel to `patches`.
    pub features: Vec<Vec<f32>>,
    pub labels: Vec<i8>,
    /// Patch centers in room pixels, parallel to `labels`.
    pub centers: Vec<(u64, [i64; 2])>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn push(&mut self, maps: &FeatureMaps, top: &Grid2<f32>, frame: u64, c: [i64; 2], label: i8) {
        self.patches.push(extract_patch(top, c, WINDOW));
        self.features.push(flatten(&extract_patch(&maps.stacked, c, WINDOW)));
        self.labels.push(label);
        self.centers.push((frame, c));
    }
}

/// Positives at every ground-truth root (plus jittered copies), negatives
/// off-person. `keep_person` filters which people count as positives; people
/// filtered out still block negatives from landing on them.
pub fn make_training_set(
    frames: &[(PointFrame, FrameGt)],
    room: &GridSpec,
    cfg: &TrainingConfig,
    keep_person: &dyn Fn(u32) -> bool,
) -> TrainingSet {
    let mut out = TrainingSet::default();
    let (nx, ny) = (room.dims[0] as i64, room.dims[1] as i64);
    for (frame, gt) in frames {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ frame.index.wrapping_mul(0x2545_f491_4f6c_dd1d));
        let maps = FeatureMaps::compute(&voxelize(frame, room));
        let top = maps.top_normalized();
        let roots: Vec<[i64; 2]> = gt.people.iter().map(|p| p.crop_center()).collect();
        let clear = |c: [i64; 2]| {
            roots
                .iter()
                .all(|r| (r[0] - c[0]).abs().max((r[1] - c[1]).abs()) > cfg.min_negative_distance)
        };
        let mut positives = 0;
        for (p, &r) in gt.people.iter().zip(&roots) {
            if !keep_person(p.id) {
                continue;
            }
            out.push(&maps, &top, frame.index, r, 1);
            positives += 1;
            if cfg.jitter > 0 {
                let j = [rng.random_range(-cfg.jitter..=cfg.jitter), rng.random_range(-cfg.jitter..=cfg.jitter)];
                out.push(&maps, &top, frame.index, [r[0] + j[0], r[1] + j[1]], 1);
                positives += 1;
            }
        }
        let wanted = positives.max(1) * cfg.negatives_per_positive;
        let mut made = 0;
        let mut tries = 0;
        while made < wanted && tries < wanted * 50 {
            tries += 1;
            let c = if made % 2 == 0 && !roots.is_empty() {
                let r = roots[rng.random_range(0..roots.len())];
                let d = cfg.min_negative_distance + 1;
                let spread = d + 2 * WINDOW as i64 / 3;
                [
                    r[0] + rng.random_range(-spread..=spread),
                    r[1] + rng.random_range(-spread..=spread),
                ]
            } else {
                [rng.random_range(0..nx), rng.random_range(0..ny)]
            };
            if (0..nx).contains(&c[0]) && (0..ny).contains(&c[1]) && clear(c) {
                out.push(&maps, &top, frame.index, c, -1);
                made += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledView {
    pub image: Image3,
    pub labels: Grid2<u8>,
    pub context: ViewContext,
}

/// Top-down and side-view label images of one person volume, labeled from
/// ground-truth hand voxels.
pub fn hand_label_views(person: &OccupancyVolume, gt: &HandVoxels, hand_xy: [[i64; 2]; 2]) -> Vec<LabeledView> {
    let oracle = OracleSegmenter::new(Some(gt.clone())).expect("ground truth present");
    let maps = FeatureMaps::compute(person);
    let mut out = vec![LabeledView {
        labels: oracle.label(&maps.stacked, &ViewContext::TopDown),
        image: maps.stacked,
        context: ViewContext::TopDown,
    }];
    for (hand, xy) in Hand::BOTH.into_iter().zip(hand_xy) {
        let thin = crop_thin_volume(person, xy);
        let views = side_views(&thin).expect("thin volumes are 41x41");
        for dir in ViewDir::ALL {
            let context = ViewContext::Side { hand, center: xy, dir };
            let image = views.view(dir).clone();
            out.push(LabeledView {
                labels: oracle.label(&image, &context),
                image,
                context,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::super::{hand_voxels, sample_scene, PersonScript, PosePreset, SceneScript};
    use super::*;
    use crate::hands::{HAND, LEFT, RIGHT};
    use crate::volume::{crop_person_volume, THIN_CENTER};

    fn one_person() -> SceneScript {
        SceneScript::from_json(
            r#"{"frames": 3, "seed": 9, "room": [3, 3],
                "people": [{"id": 4, "home": [1.5, 1.5], "pose": "random"}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn positive_at_root_sees_the_person() {
        let s = one_person();
        let data = vec![sample_scene(&s, 0).unwrap()];
        let set = make_training_set(&data, &s.grid(), &TrainingConfig::default(), &|_| true);
        let (k, _) = set.labels.iter().enumerate().find(|(_, &l)| l == 1).unwrap();
        assert_eq!(set.centers[k].1, data[0].1.people[0].crop_center());
        assert!(*set.patches[k].get(25, 25) > 0.0);
        assert!(set.labels.iter().filter(|&&l| l == -1).count() >= 4);
        for (c, &l) in set.centers.iter().zip(&set.labels) {
            if l == -1 {
                let r = data[0].1.people[0].crop_center();
                assert!((c.1[0] - r[0]).abs().max((c.1[1] - r[1]).abs()) > 12);
            }
        }
    }

    #[test]
    fn excluded_people_are_not_positive() {
        let s = one_person();
        let data = vec![sample_scene(&s, 1).unwrap()];
        let set = make_training_set(&data, &s.grid(), &TrainingConfig::default(), &|id| id != 4);
        assert!(set.labels.iter().all(|&l| l == -1));
    }

    #[test]
    fn label_images_are_gt_projections() {
        let s = one_person();
        let room = s.grid();
        let (frame, gt) = sample_scene(&s, 2).unwrap();
        let p = &gt.people[0];
        let c = p.crop_center();
        let vol = crop_person_volume(&voxelize(&frame, &room), c);
        let hv = hand_voxels(&frame, p, &room, c);
        let xy = [[p.left.voxel[0], p.left.voxel[1]], [p.right.voxel[0], p.right.voxel[1]]];
        let views = hand_label_views(&vol, &hv, xy);
        assert_eq!(views.len(), 9);
        // top-down: exactly the quantized GT hand points' columns
        let labeled = |g: &Grid2<u8>, class: u8| -> BTreeSet<[i64; 2]> {
            g.iter().filter(|&(_, _, &l)| l == class).map(|(x, y, _)| [x as i64, y as i64]).collect()
        };
        let cols = |v: &[[i64; 3]]| -> BTreeSet<[i64; 2]> { v.iter().map(|p| [p[0], p[1]]).collect() };
        let left_cols = cols(&hv.left);
        let right_only: BTreeSet<_> = cols(&hv.right).difference(&left_cols).copied().collect();
        assert_eq!(labeled(&views[0].labels, LEFT), left_cols);
        assert_eq!(labeled(&views[0].labels, RIGHT), right_only);
        // +x side view of the left hand: (y, z) of voxels inside the thin window
        let want: BTreeSet<[i64; 2]> = hv
            .left
            .iter()
            .filter(|v| (v[0] - xy[0][0]).abs() <= THIN_CENTER && (v[1] - xy[0][1]).abs() <= THIN_CENTER)
            .map(|v| [v[1] - xy[0][1] + THIN_CENTER, v[2]])
            .collect();
        let pos_x = views.iter().find(|v| matches!(v.context, ViewContext::Side { hand: Hand::Left, dir: ViewDir::PosX, .. })).unwrap();
        assert_eq!(labeled(&pos_x.labels, HAND), want);
    }

    #[test]
    fn unused_types_compile() {
        let _ = PersonScript {
            id: 0,
            home: [0.0; 2],
            heading: 0.0,
            wander: 0.0,
            turn: 0.0,
            pose: PosePreset::TPose,
            height_scale: 1.0,
            color: [0; 3],
            enter: 0,
            exit: None,
        };
    }
}

//! Trajectory lifecycle: matching-driven extension, motion-predicted
//! coasting, score bookkeeping, birth and death.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::Grid2;
use crate::matching::{build_problem, solve, BuildConfig, Weights};

mod appearance;
mod flow;

pub use appearance::{appearance_descriptor, ColoredPoints, Descriptor, DescriptorKind};
pub use flow::{lk_flow, sample, Flow, FlowParams};

#[cfg(test)]
pub(crate) use flow::smooth_texture;

/// Longest position history kept per trajectory.
pub const HISTORY_CAPACITY: usize = 1000;

/// Appearance updates never weigh a new sample below 1/APPEARANCE_MEMORY.
const APPEARANCE_MEMORY: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub gate_radius: f64,
    pub weights: Weights,
    pub tau_kill: f64,
    pub probation: usize,
    pub flow: FlowParams,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            gate_radius: 10.0,
            weights: Weights::default(),
            tau_kill: 0.3,
            probation: 3,
            flow: FlowParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub position: [f64; 2],
    pub predicted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub history: VecDeque<HistoryEntry>,
    pub appearance: Descriptor,
    pub motion: [f64; 2],
    /// Frames since birth; zero on the birth frame.
    pub age: usize,
    matched_frames: usize,
    prob_sum: f64,
    prob_count: usize,
}

impl Trajectory {
    fn born(id: u64, c: &Candidate) -> Self {
        let mut history = VecDeque::with_capacity(16);
        history.push_back(HistoryEntry {
            position: c.position,
            predicted: false,
        });
        Trajectory {
            id,
            history,
            appearance: c.descriptor.clone(),
            motion: [0.0; 2],
            age: 0,
            matched_frames: 1,
            prob_sum: c.probability,
            prob_count: 1,
        }
    }

    /// Mean person probability over all frames observed so far.
    pub fn person_score(&self) -> f64 {
        if self.prob_count == 0 {
            0.0
        } else {
            (self.prob_sum / self.prob_count as f64).clamp(0.0, 1.0)
        }
    }

    pub fn position(&self) -> [f64; 2] {
        self.history.back().expect("history is never empty").position
    }

    fn push(&mut self, position: [f64; 2], predicted: bool, probability: f64) {
        if self.history.len() == HISTORY_CAPACITY {
            self.history.pop_front();
        }
        self.history.push_back(HistoryEntry { position, predicted });
        self.prob_sum += probability.clamp(0.0, 1.0);
        self.prob_count += 1;
    }
}

/// A verified person proposal with its appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub position: [f64; 2],
    pub probability: f64,
    pub descriptor: Descriptor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub id: u64,
    pub position: [f64; 2],
    pub predicted: bool,
    pub person_score: f64,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<Trajectory>,
    next_id: u64,
    prev_top: Option<Grid2<f32>>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Tracker {
            config,
            tracks: Vec::new(),
            next_id: 0,
            prev_top: None,
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.tracks
    }

    /// Advances all trajectories by one frame.
    ///
    /// `top` is the normalized top-down map of the frame; `reverify` scores
    /// the person probability at a coasting trajectory's predicted position.
    /// Returns the trajectories past probation, ordered by id.
    pub fn step(
        &mut self,
        top: &Grid2<f32>,
        candidates: &[Candidate],
        mut reverify: impl FnMut([f64; 2]) -> f64,
    ) -> Result<Vec<TrackReport>> {
        let flows: Vec<Flow> = match &self.prev_top {
            Some(prev) => self
                .tracks
                .iter()
                .map(|t| lk_flow(prev, top, t.position(), &self.config.flow))
                .collect(),
            None => vec![Flow::ZERO_DEGENERATE; self.tracks.len()],
        };
        let predicted: Vec<[f64; 2]> = self
            .tracks
            .iter()
            .zip(&flows)
            .map(|(t, f)| {
                let p = t.position();
                let d = if f.degenerate { t.motion } else { f.vector() };
                [p[0] + d[0], p[1] + d[1]]
            })
            .collect();

        let positions: Vec<[f64; 2]> = candidates.iter().map(|c| c.position).collect();
        let probs: Vec<f64> = candidates.iter().map(|c| c.probability).collect();
        let build = BuildConfig {
            gate_radius: self.config.gate_radius,
            weights: self.config.weights,
            ..BuildConfig::default()
        };
        let tracks = &self.tracks;
        let problem = build_problem(
            &predicted,
            &positions,
            &probs,
            |i, j| tracks[i].appearance.distance(&candidates[j].descriptor),
            &build,
        )?;
        let matching = solve(&problem);

        let mut track_match = vec![None; self.tracks.len()];
        let mut cand_taken = vec![false; candidates.len()];
        for &(i, j) in &matching.pairs {
            track_match[i] = Some(j);
            cand_taken[j] = true;
        }

        for (i, t) in self.tracks.iter_mut().enumerate() {
            let last = t.position();
            let flow = flows[i];
            match track_match[i] {
                Some(j) => {
                    let c = &candidates[j];
                    let delta = [c.position[0] - last[0], c.position[1] - last[1]];
                    t.motion = if flow.degenerate {
                        delta
                    } else {
                        [0.5 * delta[0] + 0.5 * flow.dx, 0.5 * delta[1] + 0.5 * flow.dy]
                    };
                    t.matched_frames += 1;
                    let w = 1.0 / t.matched_frames.min(APPEARANCE_MEMORY) as f64;
                    t.appearance.blend(&c.descriptor, w)?;
                    t.push(c.position, false, c.probability);
                }
                None => {
                    let p = predicted[i];
                    t.motion = [p[0] - last[0], p[1] - last[1]];
                    let prob = reverify(p);
                    t.push(p, true, prob);
                }
            }
            t.age += 1;
        }

        for (j, c) in candidates.iter().enumerate() {
            if !cand_taken[j] {
                self.tracks.push(Trajectory::born(self.next_id, c));
                self.next_id += 1;
            }
        }

        let tau = self.config.tau_kill;
        self.tracks.retain(|t| t.person_score() >= tau);
        self.prev_top = Some(top.clone());

        Ok(self
            .tracks
            .iter()
            .filter(|t| t.age >= self.config.probation)
            .map(|t| {
                let last = t.history.back().unwrap();
                TrackReport {
                    id: t.id,
                    position: last.position,
                    predicted: last.predicted,
                    person_score: t.person_score(),
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc() -> Descriptor {
        Descriptor::zeros(DescriptorKind::Height)
    }

    fn cand(x: f64, y: f64, p: f64) -> Candidate {
        Candidate {
            position: [x, y],
            probability: p,
            descriptor: desc(),
        }
    }

    fn blob_map(center: [f64; 2]) -> Grid2<f32> {
        smooth_texture(120, 120, &[(center, 5.0, 0.8), ([center[0] + 3.0, center[1] - 2.0], 3.0, 0.4)], [0.0; 2])
    }

    #[test]
    fn stationary_person_keeps_one_track() {
        let mut tr = Tracker::new(TrackerConfig::default());
        for _ in 0..10 {
            tr.step(&blob_map([60.0, 60.0]), &[cand(60.0, 60.0, 1.0)], |_| 1.0).unwrap();
        }
        assert_eq!(tr.trajectories().len(), 1);
        let t = &tr.trajectories()[0];
        assert_eq!(t.history.len(), 10);
        assert!(t.history.iter().all(|h| !h.predicted));
    }

    #[test]
    fn coasts_through_missing_proposals() {
        let mut tr = Tracker::new(TrackerConfig::default());
        let mut ids = Vec::new();
        for f in 0..12 {
            let x = 40.0 + f as f64;
            let cands = if (5..8).contains(&f) { vec![] } else { vec![cand(x, 60.0, 1.0)] };
            let rep = tr.step(&blob_map([x, 60.0]), &cands, |_| 0.9).unwrap();
            ids.extend(rep.iter().map(|r| r.id));
        }
        assert_eq!(tr.trajectories().len(), 1);
        let t = &tr.trajectories()[0];
        assert_eq!(t.history.iter().filter(|h| h.predicted).count(), 3);
        assert!(ids.iter().all(|&id| id == t.id));
        // coasting followed the flow
        let h = &t.history[7];
        assert!(h.predicted && (h.position[0] - 47.0).abs() < 1.0, "{h:?}");
    }

    #[test]
    fn false_alarm_dies_unreported() {
        let mut tr = Tracker::new(TrackerConfig::default());
        for _ in 0..10 {
            let rep = tr.step(&blob_map([60.0, 60.0]), &[cand(20.0, 20.0, 0.1)], |_| 0.1).unwrap();
            assert!(rep.is_empty());
        }
        assert!(tr.trajectories().is_empty());
    }

    #[test]
    fn probation_delays_reporting() {
        let mut tr = Tracker::new(TrackerConfig::default());
        let counts: Vec<usize> = (0..5)
            .map(|_| tr.step(&blob_map([60.0, 60.0]), &[cand(60.0, 60.0, 1.0)], |_| 1.0).unwrap().len())
            .collect();
        assert_eq!(counts, vec![0, 0, 0, 1, 1]);
        let mut tr = Tracker::new(TrackerConfig { probation: 0, ..TrackerConfig::default() });
        assert_eq!(tr.step(&blob_map([60.0, 60.0]), &[cand(60.0, 60.0, 1.0)], |_| 1.0).unwrap().len(), 1);
    }

    #[test]
    fn score_is_mean_of_observed_probabilities() {
        let mut tr = Tracker::new(TrackerConfig::default());
        let probs = [0.9, 0.7, 0.8, 0.6, 0.95];
        let mut seen = Vec::new();
        for (f, &p) in probs.iter().enumerate() {
            // frame 2 has no proposal; the re-verification probability counts instead
            let cands = if f == 2 { vec![] } else { vec![cand(60.0, 60.0, p)] };
            tr.step(&blob_map([60.0, 60.0]), &cands, |_| 0.5).unwrap();
            seen.push(if f == 2 { 0.5 } else { p });
            let naive = seen.iter().sum::<f64>() / seen.len() as f64;
            assert!((tr.trajectories()[0].person_score() - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn separated_people_keep_ids() {
        let mut tr = Tracker::new(TrackerConfig::default());
        let mut first = None;
        for f in 0..20 {
            let a = [30.0 + 0.5 * f as f64, 30.0];
            let b = [90.0 - 0.5 * f as f64, 90.0];
            let map = smooth_texture(120, 120, &[(a, 5.0, 0.8), (b, 5.0, 0.8)], [0.0; 2]);
            let rep = tr.step(&map, &[cand(b[0], b[1], 1.0), cand(a[0], a[1], 1.0)], |_| 1.0).unwrap();
            if rep.len() == 2 {
                let ids: Vec<(u64, bool)> = rep.iter().map(|r| (r.id, r.position[0] < 60.0)).collect();
                match first {
                    None => first = Some(ids),
                    Some(ref f0) => assert_eq!(&ids, f0),
                }
            }
        }
        assert!(first.is_some());
    }

    #[test]
    fn history_is_capped() {
        let mut tr = Tracker::new(TrackerConfig::default());
        let map = blob_map([60.0, 60.0]);
        for _ in 0..HISTORY_CAPACITY + 5 {
            tr.step(&map, &[cand(60.0, 60.0, 1.0)], |_| 1.0).unwrap();
        }
        assert_eq!(tr.trajectories()[0].history.len(), HISTORY_CAPACITY);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut tr = Tracker::new(TrackerConfig::default());
            let mut out = Vec::new();
            for f in 0..15 {
                let x = 40.0 + 0.7 * f as f64;
                let cands = if f % 4 == 1 { vec![] } else { vec![cand(x, 50.0, 0.9), cand(80.0, 20.0, 0.2)] };
                out.extend(tr.step(&blob_map([x, 50.0]), &cands, |_| 0.8).unwrap());
            }
            out
        };
        assert_eq!(run(), run());
    }
}

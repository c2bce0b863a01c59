//! Error statistics, tracking quality, and CSV/SVG reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hands::Hand;

/// Errors above this many voxels count as gross.
pub const GROSS_THRESHOLD: i64 = 20;
/// Histogram bins `0..=HISTOGRAM_MAX`, plus one overflow bin.
pub const HISTOGRAM_MAX: usize = 60;

pub fn manhattan_error(est: [i64; 3], gt: [i64; 3]) -> i64 {
    (0..3).map(|k| (est[k] - gt[k]).abs()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub frame: u64,
    pub person: u64,
    pub hand: Hand,
    pub estimate: [i64; 3],
    pub gt: [i64; 3],
    pub error: i64,
    pub missing: bool,
}

impl ErrorRecord {
    pub fn new(frame: u64, person: u64, hand: Hand, estimate: [i64; 3], gt: [i64; 3], missing: bool) -> Self {
        ErrorRecord {
            frame,
            person,
            hand,
            estimate,
            gt,
            error: manhattan_error(estimate, gt),
            missing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub gross_rate: f64,
    /// Counts for errors `0..=60` followed by the overflow bin.
    pub histogram: Vec<u64>,
}

pub fn summarize(errors: &[i64]) -> Result<Summary> {
    if errors.is_empty() {
        return Err(Error::Data("no error records to summarize".into()));
    }
    let n = errors.len();
    // integer sums keep the result independent of record order
    let sum: i128 = errors.iter().map(|&e| e as i128).sum();
    let mean = sum as f64 / n as f64;
    let sq: f64 = errors.iter().map(|&e| (e as f64 - mean).powi(2)).sum();
    let mut histogram = vec![0u64; HISTOGRAM_MAX + 2];
    for &e in errors {
        histogram[(e.max(0) as usize).min(HISTOGRAM_MAX + 1)] += 1;
    }
    let gross = errors.iter().filter(|&&e| e > GROSS_THRESHOLD).count();
    Ok(Summary {
        n,
        mean,
        std: (sq / n as f64).sqrt(),
        gross_rate: gross as f64 / n as f64,
        histogram,
    })
}

pub fn summarize_records(records: &[ErrorRecord]) -> Result<Summary> {
    summarize(&records.iter().map(|r| r.error).collect::<Vec<_>>())
}

/// One reported track position in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackObs {
    pub id: u64,
    pub position: [f64; 2],
}

/// One ground-truth person position in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtObs {
    pub id: u64,
    pub position: [f64; 2],
}

/// Greedy nearest-first association within `gate`: pairs are taken in order
/// of distance (ties by GT id, then track id) while both ends are free.
/// Returns `(gt index, track index)` pairs.
pub fn associate(gt: &[GtObs], tracks: &[TrackObs], gate: f64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, g) in gt.iter().enumerate() {
        for (j, t) in tracks.iter().enumerate() {
            let d = (g.position[0] - t.position[0]).hypot(g.position[1] - t.position[1]);
            if d <= gate {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(gt[a.1].id.cmp(&gt[b.1].id))
            .then(tracks[a.2].id.cmp(&tracks[b.2].id))
    });
    let mut gt_used = vec![false; gt.len()];
    let mut tr_used = vec![false; tracks.len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !gt_used[i] && !tr_used[j] {
            gt_used[i] = true;
            tr_used[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackingMetrics {
    /// Matched / (matched + false positives + misses).
    pub accuracy: f64,
    /// Matched / ground-truth person-frames.
    pub recall: f64,
    pub id_switches: usize,
    /// Times a ground-truth person regains an association after losing it.
    pub fragmentations: usize,
    /// Reported track ids never associated with anyone.
    pub false_tracks: usize,
    /// Reported person-frames not associated with anyone.
    pub false_positives: usize,
    pub gt_frames: usize,
    pub matched: usize,
}

/// Frames are matched by position in the slices.
pub fn tracking_metrics(tracks: &[Vec<TrackObs>], gt: &[Vec<GtObs>], gate: f64) -> Result<TrackingMetrics> {
    if tracks.len() != gt.len() {
        return Err(Error::DimensionMismatch(format!("{} track frames vs {} GT frames", tracks.len(), gt.len())));
    }
    let mut m = TrackingMetrics::default();
    let mut last_id: BTreeMap<u64, u64> = BTreeMap::new();
    let mut lost: BTreeSet<u64> = BTreeSet::new();
    let mut seen_tracks: BTreeSet<u64> = BTreeSet::new();
    let mut matched_tracks: BTreeSet<u64> = BTreeSet::new();
    for (tf, gf) in tracks.iter().zip(gt) {
        let pairs = associate(gf, tf, gate);
        m.gt_frames += gf.len();
        m.matched += pairs.len();
        m.false_positives += tf.len() - pairs.len();
        seen_tracks.extend(tf.iter().map(|t| t.id));
        let mut hit = vec![false; gf.len()];
        for &(i, j) in &pairs {
            hit[i] = true;
            let (g, t) = (gf[i].id, tf[j].id);
            matched_tracks.insert(t);
            if let Some(prev) = last_id.insert(g, t) {
                if prev != t {
                    m.id_switches += 1;
                }
            }
            if lost.remove(&g) {
                m.fragmentations += 1;
            }
        }
        for (i, g) in gf.iter().enumerate() {
            if !hit[i] && last_id.contains_key(&g.id) {
                lost.insert(g.id);
            }
        }
    }
    m.false_tracks = seen_tracks.difference(&matched_tracks).count();
    let denom = m.gt_frames + m.false_positives;
    m.accuracy = if denom == 0 { 1.0 } else { m.matched as f64 / denom as f64 };
    m.recall = if m.gt_frames == 0 { 1.0 } else { m.matched as f64 / m.gt_frames as f64 };
    Ok(m)
}

/// `metrics.csv`: one row per (method, hand).
pub fn metrics_csv(rows: &[(String, String, Summary)]) -> String {
    let mut out = String::from("# errors in voxels (Manhattan); std is the population standard deviation\n");
    out.push_str("method,hand,mean,std,gross_rate,n\n");
    for (method, hand, s) in rows {
        let _ = writeln!(out, "{method},{hand},{:.6},{:.6},{:.6},{}", s.mean, s.std, s.gross_rate, s.n);
    }
    out
}

pub fn histogram_csv(s: &Summary) -> String {
    let mut out = String::from("bin,count\n");
    for (b, c) in s.histogram.iter().enumerate() {
        if b <= HISTOGRAM_MAX {
            let _ = writeln!(out, "{b},{c}");
        } else {
            let _ = writeln!(out, ">{HISTOGRAM_MAX},{c}");
        }
    }
    out
}

/// Static bar chart of a histogram.
pub fn histogram_svg(s: &Summary, title: &str) -> String {
    let (w, h, pad) = (640.0, 320.0, 40.0);
    let bins = s.histogram.len() as f64;
    let bw = (w - 2.0 * pad) / bins;
    let max = s.histogram.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{pad}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        escape(title)
    );
    for (b, &c) in s.histogram.iter().enumerate() {
        let bh = (h - 2.0 * pad) * c as f64 / max;
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
            pad + b as f64 * bw,
            h - pad - bh,
            (bw - 1.0).max(0.5),
            bh,
            if b as i64 > GROSS_THRESHOLD { "#c0504d" } else { "#4f81bd" }
        );
    }
    let _ = writeln!(
        out,
        "<line x1=\"{pad}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"black\"/>\n\
         <text x=\"{pad}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"11\">0</text>\n\
         <text x=\"{x3:.1}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"11\">&gt;{HISTOGRAM_MAX} voxels</text>\n</svg>",
        y = h - pad,
        x2 = w - pad,
        ty = h - pad + 16.0,
        x3 = w - pad - 80.0,
    );
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn manhattan_examples() {
        assert_eq!(manhattan_error([40, 40, 50], [40, 40, 50]), 0);
        assert_eq!(manhattan_error([0, 0, 0], [1, 2, 3]), 6);
        assert_eq!(manhattan_error([40, 40, 50], [10, 40, 50]), 30);
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[0, 10]).unwrap();
        assert_eq!((s.mean, s.std), (5.0, 5.0));
        assert_eq!(summarize(&[25; 7]).unwrap().gross_rate, 1.0);
        assert!(summarize(&[]).is_err());
        let s = summarize(&[0, 60, 61, 1000]).unwrap();
        assert_eq!(s.histogram.len(), 62);
        assert_eq!((s.histogram[0], s.histogram[60], s.histogram[61]), (1, 1, 2));
    }

    #[test]
    fn summary_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let errs: Vec<i64> = (0..10_000).map(|_| rng.random_range(0..80)).collect();
        let s = summarize(&errs).unwrap();
        // streaming (Welford) pass as the independent reference
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for &e in &errs {
            n += 1.0;
            let d = e as f64 - mean;
            mean += d / n;
            m2 += d * (e as f64 - mean);
        }
        assert!((s.mean - mean).abs() < 1e-9);
        assert!((s.std - (m2 / n).sqrt()).abs() < 1e-9);
        assert_eq!(s.histogram.iter().sum::<u64>(), 10_000);
    }

    proptest! {
        #[test]
        fn summary_is_order_free(mut errs in proptest::collection::vec(0i64..100, 1..200), seed in any::<u64>()) {
            let a = summarize(&errs).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..errs.len()).rev() {
                errs.swap(i, rng.random_range(0..=i));
            }
            let b = summarize(&errs).unwrap();
            prop_assert_eq!(&a.histogram, &b.histogram);
            prop_assert_eq!(a.mean, b.mean);
            prop_assert!((a.std - b.std).abs() < 1e-9);
            let over: u64 = a.histogram[21..].iter().sum();
            prop_assert_eq!(a.gross_rate, over as f64 / a.n as f64);
        }
    }

    fn g(id: u64, x: f64) -> GtObs {
        GtObs { id, position: [x, 0.0] }
    }

    fn t(id: u64, x: f64) -> TrackObs {
        TrackObs { id, position: [x, 0.0] }
    }

    #[test]
    fn perfect_log() {
        let gt: Vec<Vec<GtObs>> = (0..20).map(|f| vec![g(1, f as f64)]).collect();
        let tr: Vec<Vec<TrackObs>> = (0..20).map(|f| vec![t(7, f as f64 + 0.5)]).collect();
        let m = tracking_metrics(&tr, &gt, 10.0).unwrap();
        assert_eq!((m.accuracy, m.recall, m.id_switches, m.false_tracks), (1.0, 1.0, 0, 0));
    }

    #[test]
    fn id_change_is_one_switch() {
        let gt: Vec<Vec<GtObs>> = (0..10).map(|_| vec![g(1, 50.0)]).collect();
        let tr: Vec<Vec<TrackObs>> = (0..10).map(|f| vec![t(if f < 5 { 1 } else { 2 }, 50.0)]).collect();
        assert_eq!(tracking_metrics(&tr, &gt, 10.0).unwrap().id_switches, 1);
    }

    #[test]
    fn gap_is_a_fragmentation_and_far_track_is_false() {
        let gt: Vec<Vec<GtObs>> = (0..6).map(|_| vec![g(1, 50.0)]).collect();
        let tr: Vec<Vec<TrackObs>> = (0..6)
            .map(|f| if f == 2 { vec![t(9, 200.0)] } else { vec![t(1, 50.0)] })
            .collect();
        let m = tracking_metrics(&tr, &gt, 10.0).unwrap();
        assert_eq!((m.fragmentations, m.false_tracks, m.false_positives, m.matched), (1, 1, 1, 5));
        assert!((m.recall - 5.0 / 6.0).abs() < 1e-12);
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for i in 0..=p.len() {
                let mut q = p.clone();
                q.insert(i, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn association_matches_brute_force_on_separated_scenes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let n = rng.random_range(1..=3);
            let gt: Vec<GtObs> = (0..n).map(|i| GtObs { id: i as u64, position: [30.0 * i as f64, rng.random_range(0.0..5.0)] }).collect();
            let mut tracks = Vec::new();
            for g in &gt {
                if rng.random_bool(0.8) {
                    let p = [g.position[0] + rng.random_range(-4.0..4.0), g.position[1] + rng.random_range(-4.0..4.0)];
                    tracks.push(TrackObs { id: 10 + g.id, position: p });
                }
            }
            if rng.random_bool(0.3) {
                tracks.push(TrackObs { id: 99, position: [rng.random_range(-20.0..80.0), rng.random_range(-20.0..20.0)] });
            }
            let got = associate(&gt, &tracks, 10.0);
            // oracle: maximum number of gated pairs, then minimum total distance
            let k = tracks.len().max(gt.len());
            let mut best: Option<(usize, f64, Vec<(usize, usize)>)> = None;
            for perm in permutations(k) {
                let mut pairs = Vec::new();
                let mut cost = 0.0;
                for (i, &j) in perm.iter().enumerate() {
                    if i < gt.len() && j < tracks.len() {
                        let d = (gt[i].position[0] - tracks[j].position[0]).hypot(gt[i].position[1] - tracks[j].position[1]);
                        if d <= 10.0 {
                            pairs.push((i, j));
                            cost += d;
                        }
                    }
                }
                let better = match &best {
                    None => true,
                    Some((c, d, _)) => pairs.len() > *c || (pairs.len() == *c && cost < *d - 1e-12),
                };
                if better {
                    best = Some((pairs.len(), cost, pairs));
                }
            }
            let mut want = best.unwrap().2;
            want.sort_unstable();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn reports_are_well_formed() {
        let s = summarize(&[1, 2, 30]).unwrap();
        let csv = metrics_csv(&[("oracle".into(), "left".into(), s.clone())]);
        assert!(csv.lines().nth(1).unwrap().starts_with("method,hand,mean,std,gross_rate,n"));
        assert!(csv.contains("oracle,left,11.000000,"));
        let h = histogram_csv(&s);
        assert_eq!(h.lines().count(), 63);
        assert!(h.ends_with(">60,0\n"));
        let svg = histogram_svg(&s, "a<b");
        assert!(svg.starts_with("<svg") && svg.contains("a&lt;b") && svg.trim_end().ends_with("</svg>"));
    }
}

//! `key = value` run configuration. Unknown keys are rejected; later
//! assignments (command-line overrides) win.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::hands::Corruption;
use crate::matching::Weights;
use crate::tracking::TrackerConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum VerifierChoice {
    /// Ground-truth person positions stand in for a trained verifier.
    Oracle,
    Model(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmenterChoice {
    Oracle,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub detector: Option<PathBuf>,
    pub verifier: VerifierChoice,
    pub segmenter: SegmenterChoice,
    pub weights: Weights,
    pub gate_radius: f64,
    pub tau_kill: f64,
    pub probation: usize,
    /// Minimum verifier probability for a proposal to reach the tracker.
    pub p_min: f64,
    pub nms_radius: usize,
    /// Triangulation truncation, pixels.
    pub tau: f64,
    pub seed: u64,
    pub corruption: Corruption,
    /// Ground-truth association gate in voxels (oracles and evaluation).
    pub association_gate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrackerConfig::default();
        RunConfig {
            detector: None,
            verifier: VerifierChoice::Oracle,
            segmenter: SegmenterChoice::Oracle,
            weights: t.weights,
            gate_radius: t.gate_radius,
            tau_kill: t.tau_kill,
            probation: t.probation,
            p_min: 0.5,
            nms_radius: 25,
            tau: crate::triangulation::DEFAULT_TAU,
            seed: 0,
            corruption: Corruption::default(),
            association_gate: 10.0,
        }
    }
}

pub const KEYS: &[&str] = &[
    "detector",
    "verifier",
    "segmenter",
    "lambda_distance",
    "lambda_appearance",
    "lambda_coverage",
    "gate_radius",
    "tau_kill",
    "probation",
    "p_min",
    "nms_radius",
    "tau",
    "seed",
    "flip_rate",
    "wipe_prob",
    "wipe_views",
    "association_gate",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn prefixed(e: Error, at: &str) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{at}: {m}")),
        other => other,
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = RunConfig::default();
        c.apply_text(&text).map_err(|e| prefixed(e, &path.display().to_string()))?;
        Ok(c)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| prefixed(e, &format!("line {}", n + 1)))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{kv}' is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "detector" => self.detector = Some(PathBuf::from(value)),
            "verifier" => {
                self.verifier = if value == "oracle" {
                    VerifierChoice::Oracle
                } else {
                    VerifierChoice::Model(PathBuf::from(value))
                }
            }
            "segmenter" => {
                self.segmenter = match value {
                    "oracle" => SegmenterChoice::Oracle,
                    "heuristic" => SegmenterChoice::Heuristic,
                    _ => return Err(Error::Config(format!("segmenter: expected oracle or heuristic, got '{value}'"))),
                }
            }
            "lambda_distance" => self.weights.distance = num(key, value)?,
            "lambda_appearance" => self.weights.appearance = num(key, value)?,
            "lambda_coverage" => self.weights.coverage = num(key, value)?,
            "gate_radius" => self.gate_radius = num(key, value)?,
            "tau_kill" => self.tau_kill = num(key, value)?,
            "probation" => self.probation = num(key, value)?,
            "p_min" => self.p_min = num(key, value)?,
            "nms_radius" => self.nms_radius = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "flip_rate" => self.corruption.flip_rate = num(key, value)?,
            "wipe_prob" => self.corruption.wipe_prob = num(key, value)?,
            "wipe_views" => self.corruption.wipe_views = num(key, value)?,
            "association_gate" => self.association_gate = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Range checks, plus existence of every referenced model file.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (k, v) in [
            ("lambda_distance", self.weights.distance),
            ("lambda_appearance", self.weights.appearance),
            ("lambda_coverage", self.weights.coverage),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{k} must be a non-negative number"));
            }
        }
        if !(self.gate_radius > 0.0) || !(self.association_gate > 0.0) {
            return bad("gate radii must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.tau_kill) || !(0.0..=1.0).contains(&self.p_min) {
            return bad("tau_kill and p_min must be in [0, 1]".into());
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive".into());
        }
        let c = &self.corruption;
        if !(0.0..=1.0).contains(&c.flip_rate) || !(0.0..=1.0).contains(&c.wipe_prob) || c.wipe_views > 4 {
            return bad("flip_rate and wipe_prob must be in [0, 1], wipe_views in 0..=4".into());
        }
        for p in self.detector.iter().chain(match &self.verifier {
            VerifierChoice::Model(p) => Some(p),
            VerifierChoice::Oracle => None,
        }) {
            if !p.is_file() {
                return bad(format!("model file {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            gate_radius: self.gate_radius,
            weights: self.weights,
            tau_kill: self.tau_kill,
            probation: self.probation,
            ..TrackerConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nsegmenter = heuristic\nlambda_coverage=7.5 # trailing\n\nprobation = 5\n").unwrap();
        assert_eq!(c.segmenter, SegmenterChoice::Heuristic);
        assert_eq!(c.weights.coverage, 7.5);
        c.apply_override("probation=2").unwrap();
        assert_eq!(c.probation, 2);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut c = RunConfig::default();
        let e = c.apply_text("colour = red\n").unwrap_err();
        assert!(e.is_config() && e.to_string().contains("colour"));
        assert!(c.apply_text("probation five").is_err());
        assert!(c.apply_override("probation=five").is_err());
        assert!(c.apply_override("segmenter=fcn").is_err());
    }

    #[test]
    fn missing_model_fails_validation() {
        let mut c = RunConfig::default();
        c.set("detector", "/nonexistent/model.vtld").unwrap();
        assert!(c.validate().unwrap_err().is_config());
    }

    #[test]
    fn every_key_is_settable() {
        for k in KEYS {
            let v = match *k {
                "detector" | "verifier" => "x",
                "segmenter" => "oracle",
                _ => "1",
            };
            RunConfig::default().set(k, v).unwrap();
        }
    }
}

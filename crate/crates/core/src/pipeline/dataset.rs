//! On-disk dataset: `frame_%06d.pc4d`, `gt.jsonl`, `scene.json`, `dataset.json`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::FrameGt;
use crate::volume::{read_frame, GridSpec, PointFrame};

pub const META_FILE: &str = "dataset.json";
pub const GT_FILE: &str = "gt.jsonl";
pub const SCENE_FILE: &str = "scene.json";
pub const RIG_FILE: &str = "rig.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub frames: usize,
    pub grid: GridSpec,
    pub colors: bool,
    /// Scripted person ids.
    pub people: Vec<u32>,
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:06}.pc4d")
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: DatasetMeta =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        meta.grid.validate()?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            meta,
        })
    }

    pub fn frame_path(&self, i: usize) -> PathBuf {
        self.dir.join(frame_name(i))
    }

    pub fn read_frame(&self, i: usize) -> Result<PointFrame> {
        read_frame(&self.frame_path(i), i as u64)
    }

    /// Errors with the list of absent frame ranges, if any.
    pub fn check_frames(&self) -> Result<()> {
        let missing: Vec<usize> = (0..self.meta.frames).filter(|&i| !self.frame_path(i).is_file()).collect();
        if missing.is_empty() {
            return Ok(());
        }
        let mut ranges: Vec<String> = Vec::new();
        let mut start = missing[0];
        for w in missing.windows(2).map(|w| (w[0], w[1])).chain(std::iter::once((*missing.last().unwrap(), usize::MAX))) {
            if w.1 != w.0 + 1 {
                ranges.push(if start == w.0 { format!("{start}") } else { format!("{start}-{}", w.0) });
                start = w.1;
            }
        }
        Err(Error::Data(format!(
            "{}: missing frames {}",
            self.dir.display(),
            ranges.join(", ")
        )))
    }

    pub fn read_gt(&self) -> Result<Vec<FrameGt>> {
        let gt = read_gt(&self.dir.join(GT_FILE))?;
        if gt.len() != self.meta.frames {
            return Err(Error::Data(format!(
                "{} holds {} records for {} frames",
                GT_FILE,
                gt.len(),
                self.meta.frames
            )));
        }
        Ok(gt)
    }
}

pub fn read_gt(path: &Path) -> Result<Vec<FrameGt>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameGt = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if rec.frame != out.len() as u64 {
            return Err(Error::Data(format!("{}:{}: expected frame {}", path.display(), n + 1, out.len())));
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaps_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset {
            dir: dir.path().to_path_buf(),
            meta: DatasetMeta {
                frames: 8,
                grid: GridSpec::person(),
                colors: false,
                people: vec![],
            },
        };
        for i in [0, 1, 4, 6] {
            fs::write(ds.frame_path(i), b"").unwrap();
        }
        let err = ds.check_frames().unwrap_err().to_string();
        assert!(err.contains("missing frames 2-3, 5, 7"), "{err}");
        for i in [2, 3, 5, 7] {
            fs::write(ds.frame_path(i), b"").unwrap();
        }
        ds.check_frames().unwrap();
    }
}

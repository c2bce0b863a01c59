//! Appearance descriptors: an 8x8x8 RGB histogram when colors are available,
//! otherwise a 20-band height profile of the person volume.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::OccupancyVolume;

pub const COLOR_BINS_PER_CHANNEL: usize = 8;
pub const HEIGHT_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DescriptorKind {
    Color,
    Height,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub kind: DescriptorKind,
    pub values: Vec<f64>,
}

impl Descriptor {
    pub fn zeros(kind: DescriptorKind) -> Self {
        let len = match kind {
            DescriptorKind::Color => COLOR_BINS_PER_CHANNEL.pow(3),
            DescriptorKind::Height => HEIGHT_BINS,
        };
        Descriptor {
            kind,
            values: vec![0.0; len],
        }
    }

    /// Euclidean distance; only defined between descriptors of one kind.
    pub fn distance(&self, other: &Descriptor) -> Result<f64> {
        if self.kind != other.kind {
            return Err(Error::InvalidInput(format!(
                "cannot compare {:?} and {:?} descriptors",
                self.kind, other.kind
            )));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt())
    }

    /// Moves `self` toward `sample` by `weight` (cumulative running mean).
    pub fn blend(&mut self, sample: &Descriptor, weight: f64) -> Result<()> {
        if self.kind != sample.kind {
            return Err(Error::InvalidInput("descriptor kind mismatch".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&sample.values) {
            *a += weight * (b - *a);
        }
        Ok(())
    }

    fn normalize(mut self) -> Self {
        let total: f64 = self.values.iter().sum();
        if total > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= total);
        }
        self
    }
}

/// Colored points in world coordinates, parallel slices.
#[derive(Debug, Clone, Copy)]
pub struct ColoredPoints<'a> {
    pub points: &'a [[f32; 3]],
    pub colors: &'a [[u8; 3]],
}

pub fn appearance_descriptor(person: &OccupancyVolume, colored: Option<ColoredPoints<'_>>) -> Descriptor {
    match colored {
        Some(cp) => {
            let mut d = Descriptor::zeros(DescriptorKind::Color);
            let spec = person.spec();
            let shift = 8 - COLOR_BINS_PER_CHANNEL.trailing_zeros();
            for (p, c) in cp.points.iter().zip(cp.colors) {
                if spec.voxel_of([p[0] as f64, p[1] as f64, p[2] as f64]).is_some() {
                    let [r, g, b] = c.map(|v| (v >> shift) as usize);
                    d.values[(r * COLOR_BINS_PER_CHANNEL + g) * COLOR_BINS_PER_CHANNEL + b] += 1.0;
                }
            }
            d.normalize()
        }
        None => {
            let mut d = Descriptor::zeros(DescriptorKind::Height);
            let band = person.dims()[2].div_ceil(HEIGHT_BINS);
            for [_, _, z] in person.occupied() {
                d.values[(z / band).min(HEIGHT_BINS - 1)] += 1.0;
            }
            d.normalize()
        }
    }
}

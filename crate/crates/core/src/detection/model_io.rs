//! Little-endian model files: `VTLD` for the linear proposer, `VTLV` for the
//! logistic verifier.

use super::{LinearDetector, LogisticVerifier, WINDOW};
use crate::error::{Error, Result};
use crate::image::Grid2;

const LINEAR_MAGIC: &[u8; 4] = b"VTLD";
const LOGISTIC_MAGIC: &[u8; 4] = b"VTLV";
const VERSION: u32 = 1;

pub fn write_linear(det: &LinearDetector) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + WINDOW * WINDOW * 4);
    out.extend_from_slice(LINEAR_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for w in det.weights.data() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&det.bias.to_le_bytes());
    out.extend_from_slice(&det.delta.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::format(self.format, "truncated file"))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        let v = f32::from_le_bytes(self.take(4)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(self.format, "non-finite parameter"));
        }
        Ok(v)
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(self.format, "missing magic"));
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(Error::format(self.format, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.format, "trailing bytes"));
        }
        Ok(())
    }
}

pub fn read_linear(bytes: &[u8]) -> Result<LinearDetector> {
    let mut r = Reader { bytes, pos: 0, format: "VTLD" };
    r.header(LINEAR_MAGIC)?;
    let w = (0..WINDOW * WINDOW).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    let bias = r.f32()?;
    let delta = r.f32()?;
    r.finish()?;
    LinearDetector::new(Grid2::from_vec(WINDOW, WINDOW, w)?, bias, delta)
}

pub fn write_logistic(v: &LogisticVerifier) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + v.weights.len() * 4);
    out.extend_from_slice(LOGISTIC_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(v.weights.len() as u32).to_le_bytes());
    for w in &v.weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&v.bias.to_le_bytes());
    out
}

pub fn read_logistic(bytes: &[u8]) -> Result<LogisticVerifier> {
    let mut r = Reader { bytes, pos: 0, format: "VTLV" };
    r.header(LOGISTIC_MAGIC)?;
    let n = r.u32()? as usize;
    if n.saturating_mul(4) > bytes.len() {
        return Err(Error::format("VTLV", "weight count exceeds file size"));
    }
    let weights = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    let bias = r.f32()?;
    r.finish()?;
    Ok(LogisticVerifier { weights, bias })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_round_trip() {
        let w = Grid2::from_fn(51, 51, |x, y| x as f32 * 0.01 - y as f32 * 0.003);
        let det = LinearDetector::new(w, -0.25, 0.125).unwrap();
        let bytes = write_linear(&det);
        assert_eq!(bytes.len(), 8 + 51 * 51 * 4 + 8);
        assert_eq!(read_linear(&bytes).unwrap(), det);
    }

    #[test]
    fn logistic_round_trip() {
        let v = LogisticVerifier { weights: vec![0.5, -1.0, 2.0], bias: 0.1 };
        assert_eq!(read_logistic(&write_logistic(&v)).unwrap(), v);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let det = LinearDetector::new(Grid2::new(51, 51), 0.0, 0.0).unwrap();
        let mut bytes = write_linear(&det);
        assert!(read_linear(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(read_linear(&bytes).is_err());
        let mut bytes = write_linear(&det);
        bytes[4] = 9;
        assert!(read_linear(&bytes).is_err());
        let v = write_logistic(&LogisticVerifier { weights: vec![1.0], bias: 0.0 });
        assert!(read_linear(&v).is_err());
        let mut big = v.clone();
        big[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(read_logistic(&big).is_err());
    }
}

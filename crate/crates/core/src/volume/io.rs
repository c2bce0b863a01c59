//! Frame readers and writers: the binary PC4D container and an ASCII PLY subset.

use std::fs;
use std::path::Path;

use super::PointFrame;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PC4D";
const VERSION: u8 = 1;
const FLAG_RGB: u8 = 1;

pub fn write_pc4d(frame: &PointFrame) -> Vec<u8> {
    let has_rgb = frame.colors.is_some();
    let stride = if has_rgb { 15 } else { 12 };
    let mut out = Vec::with_capacity(10 + frame.points.len() * stride);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(if has_rgb { FLAG_RGB } else { 0 });
    out.extend_from_slice(&(frame.points.len() as u32).to_le_bytes());
    for (i, p) in frame.points.iter().enumerate() {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
        if let Some(colors) = &frame.colors {
            out.extend_from_slice(&colors[i]);
        }
    }
    out
}

pub fn read_pc4d(bytes: &[u8], index: u64) -> Result<PointFrame> {
    if bytes.len() < 10 || &bytes[..4] != MAGIC {
        return Err(Error::format("PC4D", "missing magic"));
    }
    if bytes[4] != VERSION {
        return Err(Error::format("PC4D", format!("unsupported version {}", bytes[4])));
    }
    let has_rgb = bytes[5] & FLAG_RGB != 0;
    let count = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let stride = if has_rgb { 15 } else { 12 };
    let body = &bytes[10..];
    if body.len() != count * stride {
        return Err(Error::format(
            "PC4D",
            format!("expected {} payload bytes for {count} points, found {}", count * stride, body.len()),
        ));
    }
    let mut points = Vec::with_capacity(count);
    let mut colors = has_rgb.then(|| Vec::with_capacity(count));
    for (i, rec) in body.chunks_exact(stride).enumerate() {
        let f = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().unwrap());
        let p = [f(0), f(4), f(8)];
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::format("PC4D", format!("non-finite coordinate at point {i}")));
        }
        points.push(p);
        if let Some(colors) = colors.as_mut() {
            colors.push([rec[12], rec[13], rec[14]]);
        }
    }
    Ok(PointFrame { index, points, colors })
}

/// Parses the vertex element of an ASCII PLY file. Only `x`, `y`, `z` and the
/// optional `red`, `green`, `blue` properties are interpreted.
pub fn parse_ply(text: &str, index: u64) -> Result<PointFrame> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::format("PLY", "missing 'ply' header"));
    }
    let mut vertex_count = None;
    let mut props: Vec<String> = Vec::new();
    let mut skip_before = 0usize;
    let mut in_vertex = false;
    let mut seen_vertex = false;
    for line in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(Error::format("PLY", format!("unsupported format {fmt}")));
            }
            ["element", name, n] => {
                let n: usize = n.parse().map_err(|_| Error::format("PLY", format!("bad element count {n}")))?;
                in_vertex = *name == "vertex";
                if in_vertex {
                    vertex_count = Some(n);
                    seen_vertex = true;
                } else if !seen_vertex {
                    skip_before += n;
                }
            }
            ["property", "list", ..] => {}
            ["property", _ty, name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let n = vertex_count.ok_or_else(|| Error::format("PLY", "no vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::format("PLY", "vertex element lacks x/y/z")),
    };
    let rgb = match (col("red"), col("green"), col("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let mut body = lines.skip(skip_before).filter(|l| !l.trim().is_empty());
    let mut points = Vec::with_capacity(n);
    let mut colors = rgb.map(|_| Vec::with_capacity(n));
    for i in 0..n {
        let line = body
            .next()
            .ok_or_else(|| Error::format("PLY", format!("expected {n} vertices, found {i}")))?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() < props.len() {
            return Err(Error::format("PLY", format!("vertex {i} has {} values", vals.len())));
        }
        let f = |k: usize| -> Result<f32> {
            vals[k]
                .parse::<f32>()
                .map_err(|_| Error::format("PLY", format!("bad number '{}' at vertex {i}", vals[k])))
        };
        let p = [f(ix)?, f(iy)?, f(iz)?];
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::format("PLY", format!("non-finite coordinate at vertex {i}")));
        }
        points.push(p);
        if let (Some(colors), Some(cols)) = (colors.as_mut(), rgb) {
            let mut c = [0u8; 3];
            for (k, &ci) in cols.iter().enumerate() {
                c[k] = vals[ci]
                    .parse::<f32>()
                    .map_err(|_| Error::format("PLY", format!("bad color at vertex {i}")))?
                    .clamp(0.0, 255.0) as u8;
            }
            colors.push(c);
        }
    }
    Ok(PointFrame { index, points, colors })
}

/// Reads a frame file, choosing the parser from the leading bytes.
pub fn read_frame(path: &Path, index: u64) -> Result<PointFrame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        read_pc4d(&bytes, index)
    } else if bytes.starts_with(b"ply") {
        let text = std::str::from_utf8(&bytes).map_err(|_| Error::format("PLY", "not valid UTF-8"))?;
        parse_ply(text, index)
    } else {
        Err(Error::format("frame", format!("{} is neither PC4D nor PLY", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn header_layout() {
        let frame = PointFrame {
            index: 0,
            points: vec![[1.0, 2.0, 3.0]],
            colors: Some(vec![[7, 8, 9]]),
        };
        let b = write_pc4d(&frame);
        assert_eq!(&b[..4], b"PC4D");
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 1);
        assert_eq!(u32::from_le_bytes(b[6..10].try_into().unwrap()), 1);
        assert_eq!(f32::from_le_bytes(b[10..14].try_into().unwrap()), 1.0);
        assert_eq!(&b[22..25], &[7, 8, 9]);
        assert_eq!(b.len(), 25);
    }

    #[test]
    fn rejects_non_finite_and_truncation() {
        let mut b = write_pc4d(&PointFrame::new(0, vec![[f32::NAN, 0.0, 0.0]]));
        assert!(read_pc4d(&b, 0).is_err());
        b = write_pc4d(&PointFrame::new(0, vec![[0.0, 0.0, 0.0]]));
        b.pop();
        assert!(read_pc4d(&b, 0).is_err());
        assert!(read_pc4d(b"PC4X\x01\x00\x00\x00\x00\x00", 0).is_err());
    }

    #[test]
    fn ply_subset() {
        let text = "ply\nformat ascii 1.0\ncomment x\nelement vertex 2\nproperty float x\nproperty float y\n\
                    property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n\
                    element face 0\nproperty list uchar int vertex_indices\nend_header\n\
                    0.1 0.2 0.3 255 0 10\n1 2 3 1 2 3\n";
        let f = parse_ply(text, 4).unwrap();
        assert_eq!(f.index, 4);
        assert_eq!(f.points, vec![[0.1, 0.2, 0.3], [1.0, 2.0, 3.0]]);
        assert_eq!(f.colors.unwrap(), vec![[255, 0, 10], [1, 2, 3]]);
    }

    #[test]
    fn ply_rejects_binary_and_nan() {
        assert!(parse_ply("ply\nformat binary_little_endian 1.0\nend_header\n", 0).is_err());
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\nnan 0 0\n";
        assert!(parse_ply(text, 0).is_err());
    }

    proptest! {
        #[test]
        fn pc4d_roundtrip(pts in prop::collection::vec(prop::array::uniform3(-100.0f32..100.0), 0..64), rgb in any::<bool>()) {
            let colors = rgb.then(|| pts.iter().enumerate().map(|(i, _)| [i as u8, 3, 200]).collect());
            let frame = PointFrame { index: 3, points: pts, colors };
            let back = read_pc4d(&write_pc4d(&frame), 3).unwrap();
            prop_assert_eq!(back, frame);
        }
    }
}

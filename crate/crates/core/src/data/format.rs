//! On-disk formats.
//!
//! Tensor container (`.tnsr`), all integers little-endian:
//!
//! ```text
//! offset  size      field
//! 0       4         magic "TNSR"
//! 4       1         version (1)
//! 5       1         ndim
//! 6       4*ndim    extents, u32 each
//! ...     4*prod    payload, f32 row-major
//! ```
//!
//! Grayscale maps are written as binary PGM (P5, maxval 255) with
//! `byte = floor(255 * v + 0.5)`.

use crate::engine::Tensor;
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

pub const TENSOR_MAGIC: &[u8; 4] = b"TNSR";
pub const TENSOR_VERSION: u8 = 1;

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let shape = t.shape();
    if shape.len() > u8::MAX as usize {
        return Err(Error::invalid("tensor rank exceeds 255"));
    }
    let mut out = Vec::with_capacity(6 + 4 * shape.len() + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(TENSOR_VERSION);
    out.push(shape.len() as u8);
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| Error::invalid("tensor extent exceeds u32"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses a tensor container; `origin` only labels errors.
pub fn decode_tensor(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let bad = |reason: String| Error::format(origin, reason);
    if bytes.len() < 6 {
        return Err(bad(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != TENSOR_MAGIC {
        return Err(bad(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    if bytes[4] != TENSOR_VERSION {
        return Err(bad(format!("unsupported version {}", bytes[4])));
    }
    let ndim = bytes[5] as usize;
    let header = 6 + 4 * ndim;
    if ndim == 0 || bytes.len() < header {
        return Err(bad("truncated header".into()));
    }
    let dims: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad("extent product overflows".into()))?;
    let payload = &bytes[header..];
    if payload.len() != count * 4 {
        return Err(bad(format!(
            "dims {dims:?} need {} payload bytes, found {}",
            count * 4,
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(&dims, data).map_err(|e| bad(e.to_string()))
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    write_bytes(path, &encode_tensor(t)?)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// 8-bit grayscale value of `v` in [0, 1], rounding half up.
pub fn gray_level(v: f32) -> u8 {
    (255.0 * v as f64 + 0.5).floor() as u8
}

pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = image.dims2()?;
    if let Some(v) = image.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("PGM values must lie in [0, 1], found {v}")));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| gray_level(v)));
    Ok(out)
}

pub fn export_pgm(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_bytes(path, &encode_pgm(image)?)
}

/// Parsed header and pixels of a binary PGM.
#[derive(Debug, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u8>,
}

/// Strict P5 reader (comments, arbitrary whitespace, maxval < 256).
pub fn parse_pgm(bytes: &[u8]) -> std::result::Result<Pgm, String> {
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> std::result::Result<String, String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err("unexpected end of header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if token(&mut pos)? != "P5" {
        return Err("magic is not P5".into());
    }
    let num = |s: String| s.parse::<usize>().map_err(|_| format!("bad number {s:?}"));
    let width = num(token(&mut pos)?)?;
    let height = num(token(&mut pos)?)?;
    let maxval = num(token(&mut pos)?)?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 255 {
        return Err(format!("bad geometry {width}x{height} maxval {maxval}"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing single whitespace after maxval".into());
    }
    pos += 1;
    let pixels = bytes[pos..].to_vec();
    if pixels.len() != width * height {
        return Err(format!(
            "expected {} pixel bytes, found {}",
            width * height,
            pixels.len()
        ));
    }
    if pixels.iter().any(|&p| p as usize > maxval) {
        return Err("pixel exceeds maxval".into());
    }
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        pixels,
    })
}

/// Flat `key=value` text: one pair per line, `#` comments and blank lines
/// ignored. Duplicate keys are an error.
pub fn parse_key_values(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::format(origin, format!("line {}: expected key=value", lineno + 1))
        })?;
        let key = k.trim().to_string();
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::format(
                origin,
                format!("line {}: duplicate key {key:?}", lineno + 1),
            ));
        }
    }
    Ok(map)
}

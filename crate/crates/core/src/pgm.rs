//! Binary PGM ("P5") I/O for relevance masks (maxval 255, samples 0 or 255)
//! and depth maps (maxval 65535, big-endian 16-bit samples).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::{DepthMap, PixelMask};

pub const MASK_MAXVAL: u32 = 255;
pub const DEPTH_MAXVAL: u32 = 65535;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    /// Byte offset of the first raster sample.
    raster_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format("missing P5 magic".into()));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in fields.iter_mut() {
        // Whitespace and comments may separate header tokens.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Format("truncated PGM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!("expected a number in PGM header at byte {start}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = text.parse().map_err(|_| Error::Format(format!("header value {text:?} out of range")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("PGM dims must be >= 1, got {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PGM maxval {maxval} outside 1..=65535")));
    }
    Ok(Header { width: width as usize, height: height as usize, maxval: maxval as u32, raster_start: pos })
}

fn raster<'a>(bytes: &'a [u8], header: &Header, bytes_per_sample: usize) -> Result<&'a [u8]> {
    let n = header.width * header.height;
    let body = &bytes[header.raster_start..];
    if body.len() < n * bytes_per_sample {
        return Err(Error::Length { expected: n, found: body.len() / bytes_per_sample });
    }
    if body.len() > n * bytes_per_sample {
        return Err(Error::Format(format!(
            "{} trailing bytes after raster",
            body.len() - n * bytes_per_sample
        )));
    }
    Ok(body)
}

fn encode_header(width: usize, height: usize, maxval: u32) -> Vec<u8> {
    format!("P5\n{width} {height}\n{maxval}\n").into_bytes()
}

pub fn mask_from_pgm_bytes(bytes: &[u8]) -> Result<PixelMask> {
    let header = parse_header(bytes)?;
    if header.maxval != MASK_MAXVAL {
        return Err(Error::Format(format!("mask maxval must be {MASK_MAXVAL}, got {}", header.maxval)));
    }
    let body = raster(bytes, &header, 1)?;
    let relevant = body
        .iter()
        .enumerate()
        .map(|(i, &v)| match v {
            0 => Ok(false),
            255 => Ok(true),
            other => Err(Error::Format(format!("mask sample {other} at index {i} is neither 0 nor 255"))),
        })
        .collect::<Result<Vec<_>>>()?;
    PixelMask::from_vec(header.height, header.width, relevant)
}

pub fn mask_to_pgm_bytes(mask: &PixelMask) -> Vec<u8> {
    let mut out = encode_header(mask.width(), mask.height(), MASK_MAXVAL);
    out.extend(mask.as_slice().iter().map(|&r| if r { 255u8 } else { 0 }));
    out
}

pub fn depth_from_pgm_bytes(bytes: &[u8]) -> Result<DepthMap> {
    let header = parse_header(bytes)?;
    if header.maxval != DEPTH_MAXVAL {
        return Err(Error::Format(format!("depth maxval must be {DEPTH_MAXVAL}, got {}", header.maxval)));
    }
    let body = raster(bytes, &header, 2)?;
    let values = body
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / DEPTH_MAXVAL as f64)
        .collect();
    DepthMap::new(header.height, header.width, values)
}

/// Quantizes each depth to the nearest of 65536 levels.
pub fn depth_to_pgm_bytes(depth: &DepthMap) -> Vec<u8> {
    let mut out = encode_header(depth.width(), depth.height(), DEPTH_MAXVAL);
    for &d in depth.values() {
        let q = (d * DEPTH_MAXVAL as f64).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn mask_read(path: impl AsRef<Path>) -> Result<PixelMask> {
    mask_from_pgm_bytes(&read(path.as_ref())?)
}

pub fn mask_write(mask: &PixelMask, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &mask_to_pgm_bytes(mask))
}

pub fn depth_read(path: impl AsRef<Path>) -> Result<DepthMap> {
    depth_from_pgm_bytes(&read(path.as_ref())?)
}

pub fn depth_write(depth: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &depth_to_pgm_bytes(depth))
}

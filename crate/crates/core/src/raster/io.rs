//! Binary PNM I/O. Rasters are 8-bit P6 pixmaps; masks are P5 graymaps whose
//! maxval is `arity - 1`, so the file itself records whether it is a
//! land/water or a land/natural/dam mask.

use std::fs;
use std::path::Path;

use super::{LabelMask, Raster};
use crate::error::{Error, Result};

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    offset: usize,
}

fn parse_header(bytes: &[u8], context: &str) -> Result<Header> {
    let malformed = || Error::MalformedHeader(context.to_string());
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(malformed());
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(malformed()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(malformed)?;
    }
    // exactly one whitespace byte separates the header from the payload
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(malformed()),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 255 {
        return Err(malformed());
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        offset: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, per_pixel: usize, context: &str) -> Result<&'a [u8]> {
    let expected = header.width * header.height * per_pixel;
    let found = bytes.len() - header.offset;
    if found < expected {
        return Err(Error::TruncatedPayload {
            context: context.to_string(),
            expected,
            found,
        });
    }
    Ok(&bytes[header.offset..header.offset + expected])
}

pub(crate) fn encode_raster(r: &Raster) -> Result<Vec<u8>> {
    if r.channels() != 3 {
        return Err(Error::DimensionMismatch(format!(
            "pixmap output needs 3 channels, raster has {}",
            r.channels()
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", r.width(), r.height()).into_bytes();
    out.extend(r.data().iter().map(|v| (v * 255.0).round() as u8));
    Ok(out)
}

pub(crate) fn decode_raster(bytes: &[u8], context: &str) -> Result<Raster> {
    let header = parse_header(bytes, context)?;
    if &header.magic != b"P6" {
        return Err(Error::MalformedHeader(context.to_string()));
    }
    let scale = header.maxval as f64;
    let data = payload(bytes, &header, 3, context)?
        .iter()
        .map(|&b| (f64::from(b) / scale).min(1.0))
        .collect();
    Raster::new(header.width, header.height, 3, data)
}

pub(crate) fn encode_mask(m: &LabelMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", m.width(), m.height(), m.arity() - 1).into_bytes();
    out.extend_from_slice(m.values());
    out
}

pub(crate) fn decode_mask(bytes: &[u8], context: &str) -> Result<LabelMask> {
    let header = parse_header(bytes, context)?;
    if &header.magic != b"P5" {
        return Err(Error::MalformedHeader(context.to_string()));
    }
    let arity = (header.maxval + 1).min(3) as u8;
    let values = payload(bytes, &header, 1, context)?.to_vec();
    LabelMask::new(header.width, header.height, arity.max(2), values)
}

pub fn write_raster(r: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_raster(r)?).map_err(|e| Error::io(path, e))
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raster(&bytes, &path.display().to_string())
}

pub fn write_mask(m: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_mask(m)).map_err(|e| Error::io(path, e))
}

/// Reads a mask; its arity comes from the file's maxval.
pub fn read_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes, &path.display().to_string())
}

/// Reads a mask and checks every value against the expected arity.
pub fn read_mask_with_arity(path: impl AsRef<Path>, arity: u8) -> Result<LabelMask> {
    let m = read_mask(path)?;
    LabelMask::new(m.width(), m.height(), arity, m.values().to_vec())
}

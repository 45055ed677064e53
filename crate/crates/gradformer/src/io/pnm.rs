//! Binary netpbm: P6 color images and P5 gray masks, 8-bit only.
//!
//! Reads map pixel v to v/255; masks additionally binarize at 128. Writes
//! invert with round-half-up, so 8-bit-exact data round-trips bitwise.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

// ── Header parsing ──────────────────────────────────────────────────────────

/// Reads the three header integers after the magic, skipping whitespace and
/// `#` comments, and returns (width, height, maxval, payload offset).
fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<(usize, usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(
            0,
            format!("bad magic (expected {})", std::str::from_utf8(magic).unwrap()),
        ));
    }
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comment lines
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
                None => return Err(Error::format(pos as u64, "truncated header".to_string())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if pos == start {
            return Err(Error::format(pos as u64, "expected a decimal header field".to_string()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(start as u64, "header field out of range".to_string()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(pos as u64, "missing raster separator".to_string())),
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(pos as u64, format!("maxval must be 255, got {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(Error::format(pos as u64, "zero image dimension".to_string()));
    }
    Ok((w, h, maxval, pos))
}

fn check_raster_len(bytes: &[u8], start: usize, expected: usize) -> Result<()> {
    let have = bytes.len() - start;
    if have != expected {
        return Err(Error::format(
            start as u64,
            format!("raster has {have} bytes, expected {expected}"),
        ));
    }
    Ok(())
}

fn quantize<T: Scalar>(v: T) -> u8 {
    let scaled = v.to_f64() * 255.0 + 0.5;
    scaled.floor().clamp(0.0, 255.0) as u8
}

// ── Color images (P6) ───────────────────────────────────────────────────────

/// Reads an 8-bit P6 file into a `[3, H, W]` tensor scaled to [0, 1].
pub fn read_image<T: Scalar>(path: &std::path::Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path)?;
    let (w, h, _, start) = parse_header(&bytes, b"P6")?;
    check_raster_len(&bytes, start, 3 * w * h)?;
    let mut data = vec![T::zero(); 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = bytes[start + 3 * (y * w + x) + c] as f64 / 255.0;
                data[c * h * w + y * w + x] = T::from_f64(v);
            }
        }
    }
    Tensor::from_vec(data, &[3, h, w])
}

/// Writes a `[3, H, W]` tensor as P6, quantizing with round-half-up.
pub fn write_image<T: Scalar>(path: &std::path::Path, t: &Tensor<T>) -> Result<()> {
    let shape = t.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::contract(format!("write_image expects [3, H, W], got {shape:?}")));
    }
    let (h, w) = (shape[1], shape[2]);
    let data = t.data();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push(quantize(data[c * h * w + y * w + x]));
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ── Binary masks (P5) ───────────────────────────────────────────────────────

/// Reads an 8-bit P5 file into a `[H, W]` tensor of {0, 1}: pixels ≥ 128 are 1.
pub fn read_mask<T: Scalar>(path: &std::path::Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path)?;
    let (w, h, _, start) = parse_header(&bytes, b"P5")?;
    check_raster_len(&bytes, start, w * h)?;
    let data = bytes[start..]
        .iter()
        .map(|&b| if b >= 128 { T::one() } else { T::zero() })
        .collect();
    Tensor::from_vec(data, &[h, w])
}

/// Writes a `[H, W]` tensor of {0, 1} as P5 with pixels 0 or 255.
pub fn write_mask<T: Scalar>(path: &std::path::Path, t: &Tensor<T>) -> Result<()> {
    let shape = t.shape();
    if shape.len() != 2 {
        return Err(Error::contract(format!("write_mask expects [H, W], got {shape:?}")));
    }
    let (h, w) = (shape[0], shape[1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(t.data().iter().map(|&v| quantize(v)));
    std::fs::write(path, out)?;
    Ok(())
}

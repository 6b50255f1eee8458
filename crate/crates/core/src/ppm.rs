//! Binary PPM (P6, 8-bit) frame I/O. Images are `[H, W, 3]` tensors with
//! values in [0,1]; writing quantizes to bytes with round-to-nearest, reading
//! divides by the file's declared maximum value.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{HitError, Result};
use crate::tensor::Tensor;

/// Write an image tensor as a binary P6 file, clamping values into [0,1].
pub fn write_ppm(path: &Path, img: &Tensor) -> Result<()> {
    let (h, w, c) = img.dims3("write_ppm")?;
    if c != 3 {
        return Err(HitError::PpmFormat(format!(
            "expected 3 channels, got {c}"
        )));
    }
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P6\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

/// Read a binary P6 file into an `[H, W, 3]` tensor scaled to [0,1].
pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 2];
    r.read_exact(&mut magic)
        .map_err(|_| HitError::PpmFormat("file too short for magic".into()))?;
    if &magic != b"P6" {
        return Err(HitError::PpmFormat(format!(
            "bad magic {:?}, expected P6",
            String::from_utf8_lossy(&magic)
        )));
    }
    let w = read_header_int(&mut r)?;
    let h = read_header_int(&mut r)?;
    let maxval = read_header_int(&mut r)?;
    if !(1..=255).contains(&maxval) {
        return Err(HitError::PpmFormat(format!(
            "unsupported maxval {maxval}, need 1..=255 (8-bit)"
        )));
    }
    if w == 0 || h == 0 || w * h > 64 * 1024 * 1024 {
        return Err(HitError::PpmFormat(format!("bad dimensions {w}x{h}")));
    }
    let mut bytes = vec![0u8; w * h * 3];
    r.read_exact(&mut bytes).map_err(|_| {
        HitError::PpmFormat(format!("pixel data truncated, expected {} bytes", w * h * 3))
    })?;
    let max = maxval as f32;
    let data = bytes.iter().map(|&b| b as f32 / max).collect();
    Tensor::new(vec![h, w, 3], data)
}

/// Consume whitespace and `#` comment lines, then parse one decimal integer.
fn read_header_int(r: &mut impl Read) -> Result<usize> {
    let mut byte = [0u8; 1];
    // skip whitespace and comments
    let mut cur = loop {
        if r.read(&mut byte)? == 0 {
            return Err(HitError::PpmFormat("header ended early".into()));
        }
        match byte[0] {
            b'#' => loop {
                if r.read(&mut byte)? == 0 {
                    return Err(HitError::PpmFormat("header ended early".into()));
                }
                if byte[0] == b'\n' {
                    break;
                }
            },
            b' ' | b'\t' | b'\r' | b'\n' => {}
            b => break b,
        }
    };
    let mut value: usize = 0;
    let mut digits = 0;
    loop {
        if !cur.is_ascii_digit() {
            return Err(HitError::PpmFormat(format!(
                "expected digit in header, got byte {cur:#04x}"
            )));
        }
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add((cur - b'0') as usize))
            .ok_or_else(|| HitError::PpmFormat("header number overflow".into()))?;
        digits += 1;
        if digits > 9 {
            return Err(HitError::PpmFormat("header number too long".into()));
        }
        if r.read(&mut byte)? == 0 {
            return Err(HitError::PpmFormat("header ended early".into()));
        }
        if byte[0].is_ascii_whitespace() {
            return Ok(value);
        }
        cur = byte[0];
    }
}

/// List the `.ppm` files directly inside a directory, lexicographically by
/// file name — the frame order contract for sequence directories.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.is_file() && p.extension().map(|e| e.eq_ignore_ascii_case("ppm")) == Some(true)
        })
        .collect();
    frames.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(frames)
}

//! Depth maps as PFM (single channel, 32-bit float) or 16-bit grayscale PNG.
//!
//! Loaded maps are normalized by their maximum; PNG values are read as
//! `v / 65535` first.

use std::fs;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, ImageReader, Luma};

use crate::error::{Error, Result};
use crate::haze::DepthMap;

pub fn load_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let raw = match ext.as_deref() {
        Some("pfm") => read_pfm(path)?,
        Some("png") => read_png16(path)?,
        _ => return Err(Error::format(path, "depth must be .pfm or .png")),
    };
    Ok(raw.normalized())
}

fn read_png16(path: &Path) -> Result<DepthMap> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let Some(buf) = img.as_luma16() else {
        return Err(Error::format(
            path,
            format!("expected 16-bit grayscale PNG, got {:?}", img.color()),
        ));
    };
    let values = buf.as_raw().iter().map(|&v| v as f32 / 65535.0).collect();
    DepthMap::new(buf.width() as usize, buf.height() as usize, values)
}

fn read_pfm(path: &Path) -> Result<DepthMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pfm(&bytes).map_err(|m| Error::format(path, m))?
}

/// Parses a grayscale PFM; rows are stored bottom to top, the sign of the
/// scale selects the byte order (negative: little-endian).
fn parse_pfm(bytes: &[u8]) -> std::result::Result<Result<DepthMap>, String> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PFM header".into());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ASCII PFM header")?);
    }
    // exactly one whitespace byte separates the header from the data
    pos += 1;
    match fields[0] {
        "Pf" => {}
        "PF" => return Err("color PFM is not a depth map".into()),
        other => return Err(format!("bad PFM magic `{other}`")),
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| format!("bad PFM extent `{s}`"))
    };
    let (w, h) = (parse(fields[1])?, parse(fields[2])?);
    let scale: f32 = fields[3]
        .parse()
        .map_err(|_| format!("bad PFM scale `{}`", fields[3]))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format!("bad PFM scale {scale}"));
    }
    let little = scale < 0.0;
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or("PFM extents overflow")?;
    let data = bytes
        .get(pos..)
        .filter(|d| d.len() == need)
        .ok_or_else(|| {
            format!(
                "PFM payload is {} bytes, expected {need}",
                bytes.len().saturating_sub(pos)
            )
        })?;
    let mut values = vec![0.0f32; w * h];
    for (i, chunk) in data.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().unwrap();
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (row, col) = (i / w, i % w);
        values[(h - 1 - row) * w + col] = v;
    }
    Ok(DepthMap::new(w, h, values))
}

/// Writes a little-endian grayscale PFM of the stored values.
pub fn save_depth_pfm(depth: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (depth.width(), depth.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for row in (0..h).rev() {
        for v in &depth.values()[row * w..(row + 1) * w] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes values in [0,1] as 16-bit grayscale, `round(v · 65535)`.
pub fn save_depth_png16(depth: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw = depth
        .values()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width() as u32, depth.height() as u32, raw)
            .expect("sized by DepthMap");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))
}

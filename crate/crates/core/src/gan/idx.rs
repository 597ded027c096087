//! IDX image files (the MNIST container format): magic `0x00000803`, three
//! big-endian `u32` dimensions (count, rows, cols), then unsigned bytes.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: u32 = 0x0000_0803;
const HEADER_LEN: usize = 16;

/// Images as rows of `rows * cols` pixels scaled to `[0, 1]`.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    parse_idx_images(&fs::read(path)?)
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<Array2<f64>> {
    let word = |offset: usize| -> Result<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_be_bytes(b.try_into().expect("four bytes")))
            .ok_or_else(|| Error::Format { offset, message: "truncated header".into() })
    };
    let magic = word(0)?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic 0x{magic:08x}, expected 0x{MAGIC:08x} (unsigned-byte images)"),
        });
    }
    let count = word(4)? as usize;
    let rows = word(8)? as usize;
    let cols = word(12)? as usize;
    let pixels = rows
        .checked_mul(cols)
        .and_then(|p| p.checked_mul(count).map(|total| (p, total)))
        .ok_or_else(|| Error::Format { offset: 4, message: "dimensions overflow".into() })?;
    let (per_image, total) = pixels;
    let body = &bytes[HEADER_LEN..];
    if body.len() < total {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!("truncated pixel data: expected {total} bytes after the header, found {}", body.len()),
        });
    }
    Ok(Array2::from_shape_fn((count, per_image), |(i, j)| body[i * per_image + j] as f64 / 255.0))
}

/// Encode raw pixel rows as an IDX image file.
pub fn encode_idx_images(images: &[u8], count: usize, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if images.len() != count * rows * cols {
        return Err(Error::input(format!(
            "{} pixels do not fill {count} images of {rows}x{cols}",
            images.len()
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + images.len());
    for v in [MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(images);
    Ok(out)
}

pub fn write_idx_images(path: impl AsRef<Path>, images: &[u8], count: usize, rows: usize, cols: usize) -> Result<()> {
    fs::write(path, encode_idx_images(images, count, rows, cols)?)?;
    Ok(())
}

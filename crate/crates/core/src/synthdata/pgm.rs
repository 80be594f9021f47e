//! 8-bit binary PGM (P5) files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor_core::{Scalar, Tensor};

/// Value range a tensor is mapped from when saved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Range {
    /// `[-1, 1]`, the image convention.
    Signed,
    /// `[0, 1]`, used for masks and probability maps.
    Unit,
}

impl Range {
    fn to_byte(self, v: f64) -> u8 {
        let scaled = match self {
            Range::Signed => (v + 1.0) * 127.5,
            Range::Unit => v * 255.0,
        };
        scaled.round_ties_even().clamp(0.0, 255.0) as u8
    }

    fn from_byte(self, b: u8) -> f64 {
        match self {
            Range::Signed => b as f64 / 127.5 - 1.0,
            Range::Unit => b as f64 / 255.0,
        }
    }
}

fn format_error(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Parses a P5 file with maxval 255 into `(width, height, pixels)`.
pub fn parse(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let mut token = |name: &str| -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_error(path, format!("missing {name}")));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token("magic")? != "P5" {
        return Err(format_error(path, "not a binary PGM (P5)"));
    }
    let mut number = |name: &str| -> Result<usize> {
        let t = token(name)?;
        t.parse().map_err(|_| format_error(path, format!("bad {name} `{t}`")))
    };
    let (width, height, maxval) = (number("width")?, number("height")?, number("maxval")?);
    if maxval != 255 {
        return Err(format_error(path, format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(format_error(path, "empty image"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let len = width * height;
    if bytes.len() != start + len {
        return Err(format_error(
            path,
            format!("expected {len} pixel bytes, found {}", bytes.len().saturating_sub(start)),
        ));
    }
    Ok((width, height, bytes[start..].to_vec()))
}

pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes, path)
}

pub fn encode(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write_gray(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::InvalidArgument(format!(
            "{width}x{height} image needs {} pixels, got {}",
            width * height,
            pixels.len()
        )));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode(width, height, pixels)).map_err(|e| Error::io(path, e))
}

/// Loads a P5 file as a `1 x H x W` tensor in `range`.
pub fn load_pgm_as<T: Scalar>(path: &Path, range: Range) -> Result<Tensor<T>> {
    let (w, h, px) = read_gray(path)?;
    Tensor::from_vec(&[1, h, w], px.into_iter().map(|b| T::of(range.from_byte(b))).collect())
}

/// Loads a P5 image with `[0, 255]` mapped linearly onto `[-1, 1]`.
pub fn load_pgm<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    load_pgm_as(path, Range::Signed)
}

/// Saves an `H x W` or `1 x H x W` tensor. Values are quantised with
/// round-half-to-even and clamped to the byte range.
pub fn save_pgm<T: Scalar>(t: &Tensor<T>, range: Range, path: &Path) -> Result<()> {
    let (h, w) = match *t.shape() {
        [h, w] | [1, h, w] | [1, 1, h, w] => (h, w),
        _ => {
            return Err(Error::InvalidShape {
                op: "save_pgm",
                detail: format!("expected a single plane, got {:?}", t.shape()),
            })
        }
    };
    let px: Vec<u8> = t.data().iter().map(|v| range.to_byte(v.as_f64())).collect();
    write_gray(path, w, h, &px)
}

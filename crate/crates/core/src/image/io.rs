//! PGM (P5, maxval 255) reading and writing; PNG behind the `png` feature.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use super::{BinaryMask, GrayImage};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error("unsupported image format: {0}")]
    Unsupported(String),
    #[cfg(feature = "png")]
    #[error("png: {0}")]
    Png(#[from] image::ImageError),
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
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
    (start < *pos).then(|| &bytes[start..*pos])
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, IoError> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos).ok_or_else(|| IoError::Pgm("empty file".into()))?;
    if magic != b"P5" {
        return Err(IoError::Pgm("expected P5 magic".into()));
    }
    let mut field = |name: &str| -> Result<usize, IoError> {
        let tok = next_token(bytes, &mut pos).ok_or_else(|| IoError::Pgm(format!("missing {name}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| IoError::Pgm(format!("bad {name}")))
    };
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if maxval != 255 {
        return Err(IoError::Pgm(format!("maxval {maxval} unsupported, need 255")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let end = start + width * height;
    if end > bytes.len() {
        return Err(IoError::Pgm("truncated raster".into()));
    }
    GrayImage::from_vec(width, height, bytes[start..end].to_vec()).map_err(|e| IoError::Pgm(e.to_string()))
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<(), IoError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(img))?;
    Ok(())
}

/// Loads a grayscale image. PGM always; PNG when built with `png`.
pub fn load_image(path: &Path) -> Result<GrayImage, IoError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "pgm" => decode_pgm(&fs::read(path)?),
        #[cfg(feature = "png")]
        "png" => load_png(path),
        other => Err(IoError::Unsupported(other.to_string())),
    }
}

#[cfg(feature = "png")]
fn load_png(path: &Path) -> Result<GrayImage, IoError> {
    let dynimg = image::open(path)?;
    let rgb = dynimg.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb
        .pixels()
        .map(|p| {
            let [r, g, b] = p.0;
            ((299 * r as u32 + 587 * g as u32 + 114 * b as u32) / 1000) as u8
        })
        .collect();
    GrayImage::from_vec(w as usize, h as usize, data).map_err(|e| IoError::Pgm(e.to_string()))
}

/// Masks on disk are PGMs where any nonzero pixel is foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask, IoError> {
    let img = load_image(path)?;
    Ok(BinaryMask::from_fn(img.width(), img.height(), |x, y| img.get(x, y) != 0))
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<(), IoError> {
    let img = GrayImage::from_fn(mask.width(), mask.height(), |x, y| if mask.get(x, y) { 255 } else { 0 })
        .map_err(|e| IoError::Pgm(e.to_string()))?;
    write_pgm(path, &img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_with_comment() {
        let img = GrayImage::from_fn(7, 3, |x, y| (x * 30 + y) as u8).unwrap();
        assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);

        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[10, 20]);
        assert_eq!(decode_pgm(&bytes).unwrap().data(), &[10, 20]);
    }

    #[test]
    fn pgm_rejects_garbage() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n4 4\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }
}

//! Binary PGM (P5) grayscale images.

use std::fs;
use std::path::Path;

use crate::error::{contract_err, Error, Result};

/// Grayscale image with intensities scaled to `[0, 1]` by the file's maxval.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(contract_err!("{width}x{height} image cannot hold {} values", data.len()));
        }
        Ok(Self { width, height, data })
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }
}

/// Parses a P5 file with maxval up to 65535 (16-bit samples are big-endian).
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let bad = |m: &str| Error::Format(format!("PGM: {m}"));
    let mut pos = 0;
    let mut token = || -> Result<&[u8]> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(&bytes[start..pos])
    };
    if token()? != b"P5" {
        return Err(bad("only binary P5 files are supported"));
    }
    let mut number = || -> Result<usize> {
        std::str::from_utf8(token()?).ok().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad header number"))
    };
    let (width, height, maxval) = (number()?, number()?, number()?);
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval must be in 1..=65535"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let depth = if maxval < 256 { 1 } else { 2 };
    let n = width.checked_mul(height).ok_or_else(|| bad("extents overflow"))?;
    let raster = bytes.get(start..start + n * depth).ok_or_else(|| bad("truncated raster"))?;
    let scale = maxval as f32;
    let data = if depth == 1 {
        raster.iter().map(|&v| v as f32 / scale).collect()
    } else {
        raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / scale).collect()
    };
    GrayImage::new(width, height, data).map_err(|e| bad(&e.to_string()))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    parse_pgm(&fs::read(path)?)
}

/// Encodes 8-bit pixels as P5 with maxval 255.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(contract_err!("{width}x{height} image cannot hold {} pixels", pixels.len()));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    fs::write(path, encode_pgm(width, height, pixels)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_8bit() {
        let px: Vec<u8> = (0..12).map(|v| v * 20).collect();
        let img = parse_pgm(&encode_pgm(4, 3, &px).unwrap()).unwrap();
        assert_eq!((img.width, img.height), (4, 3));
        assert_eq!(img.get(1, 0), 80.0 / 255.0);
    }

    #[test]
    fn comments_and_16bit() {
        let mut bytes = b"P5 # c\n2 1\n# x\n65535\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xff, 0x00, 0x00]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!(img.data, vec![1.0, 0.0]);
        assert!(parse_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\x00").is_err());
    }
}

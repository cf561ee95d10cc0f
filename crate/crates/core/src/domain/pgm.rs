//! Binary portable graymap (P5) reading and writing, 8- or 16-bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Raw integer intensities as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graymap {
    pub height: usize,
    pub width: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

impl Graymap {
    /// Quantizes [0, 1] intensities to the full 16-bit range.
    pub fn from_unit(height: usize, width: usize, values: &[f32]) -> Self {
        let data = values
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16)
            .collect();
        Graymap {
            height,
            width,
            maxval: u16::MAX,
            data,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval > 255 {
            for &v in &self.data {
                out.extend_from_slice(&v.to_be_bytes());
            }
        } else {
            out.extend(self.data.iter().map(|&v| v as u8));
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::invalid(format!("malformed P5 graymap: {msg}"));
        let mut pos = 0;
        let mut header = Vec::with_capacity(4);
        while header.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            header.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
        }
        if header[0] != "P5" {
            return Err(bad("missing P5 magic"));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| bad("non-numeric header field"))
        };
        let (width, height, maxval) = (num(header[1])?, num(header[2])?, num(header[3])?);
        if maxval == 0 || maxval > 65535 {
            return Err(bad("maxval out of range"));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let n = width * height;
        let raster = bytes.get(pos..).ok_or_else(|| bad("missing raster"))?;
        let data: Vec<u16> = if maxval > 255 {
            if raster.len() < 2 * n {
                return Err(bad("raster too short"));
            }
            raster[..2 * n]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        } else {
            if raster.len() < n {
                return Err(bad("raster too short"));
            }
            raster[..n].iter().map(|&b| b as u16).collect()
        };
        Ok(Graymap {
            height,
            width,
            maxval: maxval as u16,
            data,
        })
    }
}

pub fn write_pgm(path: impl AsRef<Path>, image: &Graymap) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, image.encode()).map_err(|e| Error::file(path, e))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Graymap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    Graymap::decode(&bytes)
}

/// Reads a graymap, min-max normalizes it and centers it on a
/// `canvas`x`canvas` zero background.
pub fn load_slice(path: impl AsRef<Path>, canvas: usize) -> Result<super::SliceImage> {
    let g = read_pgm(path)?;
    let img = super::minmax_normalize(g.height, g.width, &g.data)?;
    super::pad_to_size(&img, canvas)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_bit_round_trip() {
        let g = Graymap {
            height: 2,
            width: 3,
            maxval: 65535,
            data: vec![0, 1, 256, 40000, 65535, 7],
        };
        assert_eq!(Graymap::decode(&g.encode()).unwrap(), g);
    }

    #[test]
    fn eight_bit_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[3, 250]);
        let g = Graymap::decode(&bytes).unwrap();
        assert_eq!((g.width, g.height, g.maxval), (2, 1, 255));
        assert_eq!(g.data, vec![3, 250]);
    }

    #[test]
    fn rejects_other_magic() {
        assert!(Graymap::decode(b"P2\n1 1\n255\n0").is_err());
        assert!(Graymap::decode(b"P5\n2 2\n255\n\x01").is_err());
    }
}

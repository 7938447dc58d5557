//! Portable graymap / pixmap images: plain (`P2`, `P3`) and binary
//! (`P5`, `P6`) variants with `maxval` up to 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::frame::{GrayImage, RgbImage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PnmImage {
    Gray(GrayImage),
    Rgb(RgbImage),
}

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn next_token(&mut self) -> Result<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse("unexpected end of PNM data".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn next_number(&mut self) -> Result<usize> {
        let tok = self.next_token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad PNM number {:?}", String::from_utf8_lossy(tok))))
    }
}

pub fn parse_pnm(bytes: &[u8]) -> Result<PnmImage> {
    let mut t = Tokens { bytes, pos: 0 };
    let magic = t.next_token()?.to_vec();
    let (channels, binary) = match magic.as_slice() {
        b"P2" => (1, false),
        b"P3" => (3, false),
        b"P5" => (1, true),
        b"P6" => (3, true),
        other => {
            return Err(Error::Parse(format!(
                "unsupported PNM magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = t.next_number()?;
    let height = t.next_number()?;
    let maxval = t.next_number()?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse(format!("unsupported PNM maxval {maxval}")));
    }
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::Parse("PNM dimensions overflow".into()))?;
    let raw: Vec<u8> = if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = t.pos + 1;
        let end = start + count;
        if end > bytes.len() {
            return Err(Error::Parse(format!(
                "PNM raster truncated: need {count} bytes, have {}",
                bytes.len().saturating_sub(start)
            )));
        }
        bytes[start..end].to_vec()
    } else {
        (0..count)
            .map(|_| {
                let v = t.next_number()?;
                if v > maxval {
                    return Err(Error::Parse(format!("PNM sample {v} exceeds maxval {maxval}")));
                }
                Ok(v as u8)
            })
            .collect::<Result<_>>()?
    };
    let data = if maxval == 255 {
        raw
    } else {
        raw.into_iter()
            .map(|v| ((v as usize * 255 + maxval / 2) / maxval) as u8)
            .collect()
    };
    Ok(if channels == 1 {
        PnmImage::Gray(GrayImage::new(width, height, data)?)
    } else {
        PnmImage::Rgb(RgbImage::new(width, height, data)?)
    })
}

pub fn read_pnm(path: &Path) -> Result<PnmImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pnm(&bytes)
}

/// Binary `P5` encoding.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Plain `P2` encoding, one image row per line.
pub fn encode_pgm_plain(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P2\n{} {}\n255\n", img.width, img.height);
    for row in img.data.chunks(img.width.max(1)) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out.into_bytes()
}

/// Binary `P6` encoding.
pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_pgm_with_comments() {
        let src = b"P2\n# a comment\n3 2\n# another\n255\n0 1 2\n3 4 255\n";
        let PnmImage::Gray(img) = parse_pnm(src).unwrap() else {
            panic!("expected gray")
        };
        assert_eq!((img.width, img.height), (3, 2));
        assert_eq!(img.data, vec![0, 1, 2, 3, 4, 255]);
    }

    #[test]
    fn plain_ppm() {
        let src = b"P3 2 1 255 10 20 30 40 50 60";
        let PnmImage::Rgb(img) = parse_pnm(src).unwrap() else {
            panic!("expected rgb")
        };
        assert_eq!(img.data, vec![10, 20, 30, 40, 50, 60]);
    }

    #[test]
    fn binary_round_trip() {
        let gray = GrayImage::new(4, 2, vec![0, 9, 10, 32, 200, 13, 255, 1]).unwrap();
        assert_eq!(parse_pnm(&encode_pgm(&gray)).unwrap(), PnmImage::Gray(gray.clone()));
        assert_eq!(parse_pnm(&encode_pgm_plain(&gray)).unwrap(), PnmImage::Gray(gray));
        let rgb = RgbImage::new(2, 1, vec![1, 2, 3, 10, 32, 9]).unwrap();
        assert_eq!(parse_pnm(&encode_ppm(&rgb)).unwrap(), PnmImage::Rgb(rgb));
    }

    #[test]
    fn small_maxval_is_rescaled() {
        let PnmImage::Gray(img) = parse_pnm(b"P2 2 1 1 0 1").unwrap() else {
            panic!()
        };
        assert_eq!(img.data, vec![0, 255]);
    }

    #[test]
    fn errors() {
        assert!(parse_pnm(b"P7 1 1 255 0").is_err());
        assert!(parse_pnm(b"P5\n2 2\n255\n\x01\x02").is_err());
        assert!(parse_pnm(b"P2 1 1 255 256").is_err());
        assert!(parse_pnm(b"P2 1 1 65535 0").is_err());
        assert!(parse_pnm(b"P2 2 2 255 1 2 3").is_err());
    }
}

//! MNIST ingestion: the big-endian IDX container and labelled datasets.
//!
//! Only unsigned-byte payloads are accepted, with magic `00 00 08 03`
//! (image stacks) or `00 00 08 01` (label vectors). Dimensions follow the
//! magic as big-endian `u32`s.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: [u8; 4] = [0x00, 0x00, 0x08, 0x03];
pub const LABEL_MAGIC: [u8; 4] = [0x00, 0x00, 0x08, 0x01];

/// Decoded IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxFile {
    Images {
        rows: usize,
        cols: usize,
        images: Vec<Vec<u8>>,
    },
    Labels(Vec<u8>),
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxFile> {
    if bytes.len() < 4 {
        return Err(Error::IdxTruncated {
            expected: 4,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
    let ndims = match magic {
        IMAGE_MAGIC => 3,
        LABEL_MAGIC => 1,
        other => return Err(Error::IdxBadMagic(other)),
    };
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::IdxTruncated {
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("chunk of 4")) as usize)
        .collect();
    let payload_len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::IdxDimensionOverflow)?;
    let expected = header
        .checked_add(payload_len)
        .ok_or(Error::IdxDimensionOverflow)?;
    if bytes.len() < expected {
        return Err(Error::IdxTruncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Parse(format!(
            "IDX stream has {} trailing bytes",
            bytes.len() - expected
        )));
    }
    let payload = &bytes[header..];
    Ok(match ndims {
        3 => {
            let (rows, cols) = (dims[1], dims[2]);
            let size = rows * cols;
            let images = if size == 0 {
                vec![Vec::new(); dims[0]]
            } else {
                payload.chunks_exact(size).map(<[u8]>::to_vec).collect()
            };
            IdxFile::Images { rows, cols, images }
        }
        _ => IdxFile::Labels(payload.to_vec()),
    })
}

pub fn write_idx(file: &IdxFile) -> Vec<u8> {
    match file {
        IdxFile::Images { rows, cols, images } => {
            let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
            out.extend_from_slice(&IMAGE_MAGIC);
            for d in [images.len(), *rows, *cols] {
                out.extend_from_slice(&(d as u32).to_be_bytes());
            }
            for img in images {
                out.extend_from_slice(img);
            }
            out
        }
        IdxFile::Labels(labels) => {
            let mut out = Vec::with_capacity(8 + labels.len());
            out.extend_from_slice(&LABEL_MAGIC);
            out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
            out.extend_from_slice(labels);
            out
        }
    }
}

pub fn read_idx(path: &Path) -> Result<IdxFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}

/// 28×28 grayscale digits with class labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabeledDataset {
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
}

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_LEN: usize = IMAGE_SIDE * IMAGE_SIDE;

impl LabeledDataset {
    pub fn new(images: Vec<Vec<u8>>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(bad) = images.iter().position(|img| img.len() != IMAGE_LEN) {
            return Err(Error::shape(format!(
                "image {bad} has {} pixels, expected {IMAGE_LEN}",
                images[bad].len()
            )));
        }
        Ok(Self { images, labels })
    }

    /// Pairs an image file with a label file.
    pub fn from_idx(images: IdxFile, labels: IdxFile) -> Result<Self> {
        match (images, labels) {
            (IdxFile::Images { rows, cols, images }, IdxFile::Labels(labels)) => {
                if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
                    return Err(Error::shape(format!(
                        "expected {IMAGE_SIDE}x{IMAGE_SIDE} images, got {rows}x{cols}"
                    )));
                }
                Self::new(images, labels)
            }
            _ => Err(Error::Parse(
                "expected an image file and a label file".into(),
            )),
        }
    }

    pub fn load(images: &Path, labels: &Path) -> Result<Self> {
        Self::from_idx(read_idx(images)?, read_idx(labels)?)
    }

    /// Loads `train` or `t10k` from a directory holding the four MNIST files.
    pub fn load_mnist(dir: &Path, split: MnistSplit) -> Result<Self> {
        let prefix = split.prefix();
        Self::load(
            &dir.join(format!("{prefix}-images-idx3-ubyte")),
            &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    pub fn to_idx(&self) -> (IdxFile, IdxFile) {
        (
            IdxFile::Images {
                rows: IMAGE_SIDE,
                cols: IMAGE_SIDE,
                images: self.images.clone(),
            },
            IdxFile::Labels(self.labels.clone()),
        )
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

impl MnistSplit {
    fn prefix(self) -> &'static str {
        match self {
            MnistSplit::Train => "train",
            MnistSplit::Test => "t10k",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_images() -> IdxFile {
        IdxFile::Images {
            rows: 2,
            cols: 3,
            images: vec![vec![0, 1, 2, 3, 4, 5], vec![255, 254, 253, 252, 251, 250]],
        }
    }

    #[test]
    fn accepts_both_magics() {
        let bytes = write_idx(&two_images());
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(parse_idx(&bytes).unwrap(), two_images());

        let labels = IdxFile::Labels(vec![3, 1, 4]);
        let bytes = write_idx(&labels);
        assert_eq!(&bytes[..4], &[0, 0, 8, 1]);
        assert_eq!(parse_idx(&bytes).unwrap(), labels);
    }

    #[test]
    fn header_layout_is_big_endian() {
        let bytes = write_idx(&two_images());
        assert_eq!(
            &bytes[..16],
            &[0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3]
        );
        assert_eq!(bytes.len(), 16 + 12);
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let mut bytes = write_idx(&two_images());
        bytes.pop();
        assert!(matches!(
            parse_idx(&bytes),
            Err(Error::IdxTruncated { expected: 28, found: 27 })
        ));
        assert!(matches!(parse_idx(&bytes[..10]), Err(Error::IdxTruncated { .. })));
        assert!(matches!(parse_idx(&[0, 0]), Err(Error::IdxTruncated { .. })));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = write_idx(&two_images());
        bytes[2] = 0x0d;
        assert!(matches!(parse_idx(&bytes), Err(Error::IdxBadMagic(_))));
    }

    #[test]
    fn oversized_dimensions_overflow() {
        let mut bytes = IMAGE_MAGIC.to_vec();
        for _ in 0..3 {
            bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        }
        let r = parse_idx(&bytes);
        if usize::BITS == 64 {
            // 2^96 > usize::MAX
            assert!(matches!(r, Err(Error::IdxDimensionOverflow)));
        } else {
            assert!(r.is_err());
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = write_idx(&IdxFile::Labels(vec![1]));
        bytes.push(0);
        assert!(matches!(parse_idx(&bytes), Err(Error::Parse(_))));
    }

    #[test]
    fn dataset_pairing_checks_lengths() {
        let images = IdxFile::Images {
            rows: 28,
            cols: 28,
            images: vec![vec![0; IMAGE_LEN]; 2],
        };
        assert!(LabeledDataset::from_idx(images.clone(), IdxFile::Labels(vec![1])).is_err());
        let ds = LabeledDataset::from_idx(images, IdxFile::Labels(vec![1, 7])).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_classes(), 8);
        assert!(LabeledDataset::from_idx(two_images(), IdxFile::Labels(vec![1, 2])).is_err());
    }
}

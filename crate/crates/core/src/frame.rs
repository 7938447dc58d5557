//! Camera-frame preprocessing with shift-only integer arithmetic:
//! centre crop to 224×224, weighted grayscale, 8×8 block averaging to 28×28.

use crate::error::{Error, Result};

pub const FRAME_WIDTH: usize = 320;
pub const FRAME_HEIGHT: usize = 240;
pub const CROP_SIDE: usize = 224;
pub const BLOCK: usize = 8;
pub const OUT_SIDE: usize = CROP_SIDE / BLOCK;

/// Interleaved RGB bytes, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: rgb.repeat(width * height),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Single-channel bytes, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} gray image needs {} bytes, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

/// Offsets `(x, y)` of the centred crop inside a 320×240 frame.
pub const fn crop_offsets() -> (usize, usize) {
    ((FRAME_WIDTH - CROP_SIDE) / 2, (FRAME_HEIGHT - CROP_SIDE) / 2)
}

const _: () = assert!((FRAME_WIDTH - CROP_SIDE).is_multiple_of(2) && (FRAME_HEIGHT - CROP_SIDE).is_multiple_of(2));

pub fn crop_center(frame: &RgbImage) -> Result<RgbImage> {
    if frame.width != FRAME_WIDTH || frame.height != FRAME_HEIGHT {
        return Err(Error::shape(format!(
            "camera frame must be {FRAME_WIDTH}x{FRAME_HEIGHT}, got {}x{}",
            frame.width, frame.height
        )));
    }
    let (ox, oy) = crop_offsets();
    let mut data = Vec::with_capacity(CROP_SIDE * CROP_SIDE * 3);
    for y in oy..oy + CROP_SIDE {
        let start = (y * FRAME_WIDTH + ox) * 3;
        data.extend_from_slice(&frame.data[start..start + CROP_SIDE * 3]);
    }
    RgbImage::new(CROP_SIDE, CROP_SIDE, data)
}

/// `(8G + 5R + 3B) / 16`, rounded down.
#[inline]
pub fn to_gray(r: u8, g: u8, b: u8) -> u8 {
    let (r, g, b) = (r as u32, g as u32, b as u32);
    (((g << 3) + (r << 2) + r + (b << 1) + b) >> 4) as u8
}

pub fn rgb_to_gray(img: &RgbImage) -> GrayImage {
    GrayImage {
        width: img.width,
        height: img.height,
        data: img
            .data
            .chunks_exact(3)
            .map(|p| to_gray(p[0], p[1], p[2]))
            .collect(),
    }
}

/// Replaces each 8×8 block of a 224×224 image by its floor mean.
pub fn block_average(gray: &GrayImage) -> Result<GrayImage> {
    if gray.width != CROP_SIDE || gray.height != CROP_SIDE {
        return Err(Error::shape(format!(
            "block averaging needs {CROP_SIDE}x{CROP_SIDE}, got {}x{}",
            gray.width, gray.height
        )));
    }
    let mut sums = vec![0u32; OUT_SIDE * OUT_SIDE];
    for y in 0..CROP_SIDE {
        for x in 0..CROP_SIDE {
            sums[(y / BLOCK) * OUT_SIDE + x / BLOCK] += gray.data[y * CROP_SIDE + x] as u32;
        }
    }
    GrayImage::new(
        OUT_SIDE,
        OUT_SIDE,
        sums.into_iter().map(|s| (s >> 6) as u8).collect(),
    )
}

/// Full pipeline: crop, grayscale, block average.
pub fn preprocess_frame(frame: &RgbImage) -> Result<GrayImage> {
    block_average(&rgb_to_gray(&crop_center(frame)?))
}

/// Brings an arbitrary still down to the 28×28 network input.
///
/// Accepted geometries: 320×240 (full pipeline), 224×224 (grayscale +
/// averaging), 28×28 (grayscale only).
pub fn preprocess_rgb(img: &RgbImage) -> Result<GrayImage> {
    match (img.width, img.height) {
        (FRAME_WIDTH, FRAME_HEIGHT) => preprocess_frame(img),
        (CROP_SIDE, CROP_SIDE) => block_average(&rgb_to_gray(img)),
        (OUT_SIDE, OUT_SIDE) => Ok(rgb_to_gray(img)),
        (w, h) => Err(Error::shape(format!(
            "unsupported image size {w}x{h} (expected 320x240, 224x224 or 28x28)"
        ))),
    }
}

/// Grayscale counterpart of [`preprocess_rgb`].
pub fn preprocess_gray(img: &GrayImage) -> Result<GrayImage> {
    match (img.width, img.height) {
        (FRAME_WIDTH, FRAME_HEIGHT) => {
            let (ox, oy) = crop_offsets();
            let mut data = Vec::with_capacity(CROP_SIDE * CROP_SIDE);
            for y in oy..oy + CROP_SIDE {
                data.extend_from_slice(&img.data[y * FRAME_WIDTH + ox..y * FRAME_WIDTH + ox + CROP_SIDE]);
            }
            block_average(&GrayImage::new(CROP_SIDE, CROP_SIDE, data)?)
        }
        (CROP_SIDE, CROP_SIDE) => block_average(img),
        (OUT_SIDE, OUT_SIDE) => Ok(img.clone()),
        (w, h) => Err(Error::shape(format!(
            "unsupported image size {w}x{h} (expected 320x240, 224x224 or 28x28)"
        ))),
    }
}

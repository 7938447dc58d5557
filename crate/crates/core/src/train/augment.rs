//! On-the-fly augmentation of 28×28 digits.
//!
//! Filters run in a fixed order: inversion, rotation, resize, intensity
//! shift, impulse noise. Geometric filters resample bilinearly and round
//! back to bytes after each step.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{IMAGE_LEN, IMAGE_SIDE};

/// Which way the per-image intensity shift moves pixel values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftDirection {
    /// Subtract on inverted images, add otherwise.
    Auto,
    Add,
    Subtract,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub invert: bool,
    pub max_rotation_deg: f64,
    pub max_resize_px: u32,
    /// Upper bound of the shift, on the 0..=255 scale.
    pub max_intensity_shift: u8,
    pub shift_direction: ShiftDirection,
    /// Upper bound of the fraction of pixels replaced by noise.
    pub max_noise_fraction: f64,
    /// Reserved: camera frames are never mixed into batches.
    pub mix_camera_images: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            invert: false,
            max_rotation_deg: 10.0,
            max_resize_px: 4,
            max_intensity_shift: 80,
            shift_direction: ShiftDirection::Auto,
            max_noise_fraction: 0.10,
            mix_camera_images: false,
        }
    }
}

impl AugmentationConfig {
    /// No geometric or photometric change; only inversion if requested.
    pub fn none(invert: bool) -> Self {
        Self {
            invert,
            max_rotation_deg: 0.0,
            max_resize_px: 0,
            max_intensity_shift: 0,
            shift_direction: ShiftDirection::Auto,
            max_noise_fraction: 0.0,
            mix_camera_images: false,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.max_rotation_deg.is_finite()
            && self.max_rotation_deg >= 0.0
            && (0.0..=1.0).contains(&self.max_noise_fraction)
            && (self.max_resize_px as usize) < IMAGE_SIDE;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Parse(format!("invalid augmentation config {self:?}")))
        }
    }

    fn background(&self) -> u8 {
        if self.invert {
            255
        } else {
            0
        }
    }
}

/// Applies the filter chain to one image; deterministic in `seed`.
pub fn augment(image: &[u8], cfg: &AugmentationConfig, seed: u64) -> Vec<u8> {
    assert_eq!(image.len(), IMAGE_LEN, "augment expects a 28x28 image");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = image.to_vec();
    let background = cfg.background();

    if cfg.invert {
        img.iter_mut().for_each(|p| *p = 255 - *p);
    }

    if cfg.max_rotation_deg > 0.0 {
        let deg = rng.gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg);
        if deg != 0.0 {
            img = rotate(&img, deg.to_radians(), background);
        }
    }

    if cfg.max_resize_px > 0 {
        let m = cfg.max_resize_px as i32;
        let delta = rng.gen_range(-m..=m);
        if delta != 0 {
            img = resize_centered(&img, delta, background);
        }
    }

    if cfg.max_intensity_shift > 0 {
        let shift = rng.gen_range(0..=cfg.max_intensity_shift as i32);
        let subtract = match cfg.shift_direction {
            ShiftDirection::Auto => cfg.invert,
            ShiftDirection::Add => false,
            ShiftDirection::Subtract => true,
        };
        let signed = if subtract { -shift } else { shift };
        img.iter_mut()
            .for_each(|p| *p = (*p as i32 + signed).clamp(0, 255) as u8);
    }

    if cfg.max_noise_fraction > 0.0 {
        let fraction = rng.gen_range(0.0..=cfg.max_noise_fraction);
        let count = (fraction * IMAGE_LEN as f64).round() as usize;
        // impulses take the ink colour, i.e. the opposite of the background
        let ink = 255 - background;
        for i in index::sample(&mut rng, IMAGE_LEN, count.min(IMAGE_LEN)) {
            img[i] = ink;
        }
    }

    img
}

/// Bilinear sample at real coordinates; outside pixels read as `fill`.
fn sample(img: &[u8], x: f64, y: f64, fill: u8) -> f64 {
    let n = IMAGE_SIDE as isize;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let px = |xx: isize, yy: isize| -> f64 {
        if xx < 0 || yy < 0 || xx >= n || yy >= n {
            fill as f64
        } else {
            img[yy as usize * IMAGE_SIDE + xx as usize] as f64
        }
    };
    let top = px(x0, y0) * (1.0 - fx) + px(x0 + 1, y0) * fx;
    let bottom = px(x0, y0 + 1) * (1.0 - fx) + px(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn to_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Rotates about the image centre by `angle` radians.
fn rotate(img: &[u8], angle: f64, fill: u8) -> Vec<u8> {
    let c = (IMAGE_SIDE as f64 - 1.0) / 2.0;
    let (sin, cos) = angle.sin_cos();
    let mut out = vec![0u8; IMAGE_LEN];
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let dx = x as f64 - c;
            let dy = y as f64 - c;
            // inverse mapping: output pixel pulls from the un-rotated source
            let sx = cos * dx + sin * dy + c;
            let sy = -sin * dx + cos * dy + c;
            out[y * IMAGE_SIDE + x] = to_byte(sample(img, sx, sy, fill));
        }
    }
    out
}

/// Scales to `(28 + delta)²` and pads or crops back to 28×28 around the centre.
fn resize_centered(img: &[u8], delta: i32, fill: u8) -> Vec<u8> {
    let side = IMAGE_SIDE as i32;
    let scaled = side + delta;
    let offset = (side - scaled).div_euclid(2);
    let ratio = side as f64 / scaled as f64;
    let mut out = vec![fill; IMAGE_LEN];
    for y in 0..side {
        for x in 0..side {
            let (xs, ys) = (x - offset, y - offset);
            if xs < 0 || ys < 0 || xs >= scaled || ys >= scaled {
                continue;
            }
            let sx = (xs as f64 + 0.5) * ratio - 0.5;
            let sy = (ys as f64 + 0.5) * ratio - 0.5;
            out[(y * side + x) as usize] = to_byte(sample(img, sx, sy, fill));
        }
    }
    out
}

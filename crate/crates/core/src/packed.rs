//! Packed weight memory image: nine weights per memory word so that one
//! address feeds one 3×3 scalar product.
//!
//! Text layout, one hexadecimal word per line:
//!
//! ```text
//! # packed frac_bits=12 field_bits=14 word_bits=126
//! layer 0 blocks 4
//! 10000000000000000000000000003fff
//! ...
//! ```
//!
//! Each word concatenates nine two's-complement fields of `N + 2` bits with
//! the first weight (`w00`) in the most significant field, left-padded with
//! zero bits to a whole number of hex digits. Convolution layers use one
//! word per kernel plane in `[c_out][c_in]` order. Dense layers pack each
//! output row separately and zero-fill the last word of every row.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::cycles::layer_pack_layout;
use crate::error::{Error, Result};
use crate::fixed::{QFormat, MAX_FRAC_BITS};
use crate::nn::{LayerSpec, ModelConfig};
use crate::quant::QuantizedModel;

pub const WEIGHTS_PER_WORD: usize = 9;
pub const MAX_WORD_BITS: u32 = WEIGHTS_PER_WORD as u32 * (MAX_FRAC_BITS + 2);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedLayer {
    pub layer: usize,
    /// Nine mantissas per word, padding included.
    pub words: Vec<[i64; WEIGHTS_PER_WORD]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedMemoryImage {
    pub fmt: QFormat,
    pub layers: Vec<PackedLayer>,
}

pub fn word_bits(fmt: QFormat) -> u32 {
    WEIGHTS_PER_WORD as u32 * fmt.field_width()
}

fn hex_digits(fmt: QFormat) -> usize {
    word_bits(fmt).div_ceil(4) as usize
}

fn chunk_words(weights: &[i64]) -> Vec<[i64; WEIGHTS_PER_WORD]> {
    weights
        .chunks(WEIGHTS_PER_WORD)
        .map(|c| {
            let mut w = [0; WEIGHTS_PER_WORD];
            w[..c.len()].copy_from_slice(c);
            w
        })
        .collect()
}

pub fn pack(qm: &QuantizedModel) -> Result<PackedMemoryImage> {
    qm.validate()?;
    let bits = word_bits(qm.fmt);
    if bits > MAX_WORD_BITS {
        return Err(Error::PackedWidth {
            bits,
            max: MAX_WORD_BITS,
        });
    }
    let layers = qm
        .config
        .weighted_layers()
        .map(|k| {
            let w = &qm.weights[k];
            let words = match qm.config.layers[k] {
                LayerSpec::Dense { n_in, .. } => w.chunks(n_in).flat_map(chunk_words).collect(),
                _ => chunk_words(w),
            };
            debug_assert_eq!(words.len(), layer_pack_layout(&qm.config.layers[k]).blocks);
            PackedLayer { layer: k, words }
        })
        .collect();
    Ok(PackedMemoryImage { fmt: qm.fmt, layers })
}

/// Hex string of one word.
pub fn encode_word(word: &[i64; WEIGHTS_PER_WORD], fmt: QFormat) -> String {
    let f = fmt.field_width();
    let mask = (1u64 << f) - 1;
    let total = hex_digits(fmt) * 4;
    // bit string, most significant first
    let mut bits = vec![false; total - word_bits(fmt) as usize];
    for &m in word {
        let field = (m as u64) & mask;
        bits.extend((0..f).rev().map(|i| field >> i & 1 == 1));
    }
    bits.chunks(4)
        .map(|nib| {
            let v = nib.iter().fold(0u32, |a, &b| a << 1 | b as u32);
            char::from_digit(v, 16).unwrap()
        })
        .collect()
}

pub fn decode_word(hex: &str, fmt: QFormat) -> Result<[i64; WEIGHTS_PER_WORD]> {
    let digits = hex_digits(fmt);
    if hex.len() != digits {
        return Err(Error::Parse(format!(
            "packed word `{hex}` has {} hex digits, expected {digits}",
            hex.len()
        )));
    }
    let mut bits = Vec::with_capacity(digits * 4);
    for c in hex.chars() {
        let v = c
            .to_digit(16)
            .ok_or_else(|| Error::Parse(format!("bad hex digit `{c}` in packed word")))?;
        bits.extend((0..4).rev().map(|i| v >> i & 1 == 1));
    }
    let pad = digits * 4 - word_bits(fmt) as usize;
    if bits[..pad].iter().any(|&b| b) {
        return Err(Error::Parse(format!("packed word `{hex}` has nonzero padding bits")));
    }
    let f = fmt.field_width() as usize;
    let mut out = [0i64; WEIGHTS_PER_WORD];
    for (i, slot) in out.iter_mut().enumerate() {
        let field = bits[pad + i * f..pad + (i + 1) * f]
            .iter()
            .fold(0u64, |a, &b| a << 1 | b as u64);
        // sign-extend from f bits
        let shift = 64 - f;
        *slot = ((field << shift) as i64) >> shift;
        if slot.abs() > fmt.one() {
            return Err(Error::Parse(format!("packed field {} is outside ±2^{}", slot, fmt.frac_bits())));
        }
    }
    Ok(out)
}

impl PackedMemoryImage {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# packed frac_bits={} field_bits={} word_bits={}\n",
            self.fmt.frac_bits(),
            self.fmt.field_width(),
            word_bits(self.fmt)
        );
        for l in &self.layers {
            let _ = writeln!(s, "layer {} blocks {}", l.layer, l.words.len());
            for w in &l.words {
                s.push_str(&encode_word(w, self.fmt));
                s.push('\n');
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty packed image".into()))?;
        let mut frac_bits = None;
        let mut declared_word = None;
        for tok in header.trim_start_matches('#').split_whitespace() {
            if let Some(v) = tok.strip_prefix("frac_bits=") {
                frac_bits = v.parse::<u32>().ok();
            } else if let Some(v) = tok.strip_prefix("word_bits=") {
                declared_word = v.parse::<u32>().ok();
            }
        }
        let n = frac_bits.ok_or_else(|| Error::Parse("packed header lacks frac_bits".into()))?;
        let bits = n.saturating_add(2).saturating_mul(WEIGHTS_PER_WORD as u32);
        if bits > MAX_WORD_BITS {
            return Err(Error::PackedWidth {
                bits,
                max: MAX_WORD_BITS,
            });
        }
        let fmt = QFormat::new(n)?;
        if declared_word.is_some_and(|w| w != bits) {
            return Err(Error::Parse("packed header word_bits disagrees with frac_bits".into()));
        }
        let mut layers: Vec<PackedLayer> = Vec::new();
        let mut expected = 0usize;
        for line in lines {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("layer ") {
                if let Some(l) = layers.last() {
                    if l.words.len() != expected {
                        return Err(Error::Parse(format!("layer {} is missing words", l.layer)));
                    }
                }
                let parts: Vec<&str> = rest.split_whitespace().collect();
                let (layer, blocks) = match parts.as_slice() {
                    [k, "blocks", b] => (
                        k.parse().map_err(|_| Error::Parse(format!("bad layer header `{line}`")))?,
                        b.parse().map_err(|_| Error::Parse(format!("bad layer header `{line}`")))?,
                    ),
                    _ => return Err(Error::Parse(format!("bad layer header `{line}`"))),
                };
                expected = blocks;
                layers.push(PackedLayer {
                    layer,
                    words: Vec::with_capacity(blocks),
                });
            } else {
                let l = layers
                    .last_mut()
                    .ok_or_else(|| Error::Parse("packed word before any layer header".into()))?;
                if l.words.len() == expected {
                    return Err(Error::Parse(format!("layer {} has more words than declared", l.layer)));
                }
                l.words.push(decode_word(line, fmt)?);
            }
        }
        if let Some(l) = layers.last() {
            if l.words.len() != expected {
                return Err(Error::Parse(format!("layer {} is missing words", l.layer)));
            }
        }
        Ok(Self { fmt, layers })
    }

    /// Mantissas per layer of `config`, padding stripped.
    pub fn unpack(&self, config: &ModelConfig) -> Result<Vec<Vec<i64>>> {
        let mut out = vec![Vec::new(); config.layers.len()];
        let weighted: Vec<usize> = config.weighted_layers().collect();
        if weighted != self.layers.iter().map(|l| l.layer).collect::<Vec<_>>() {
            return Err(Error::shape("packed layers do not match the model's weighted layers"));
        }
        for l in &self.layers {
            let spec = config.layers[l.layer];
            if l.words.len() != layer_pack_layout(&spec).blocks {
                return Err(Error::shape(format!("layer {}: wrong number of packed words", l.layer)));
            }
            let flat: Vec<i64> = l.words.iter().flatten().copied().collect();
            out[l.layer] = match spec {
                LayerSpec::Dense { n_in, .. } => {
                    let per_row = n_in.div_ceil(WEIGHTS_PER_WORD) * WEIGHTS_PER_WORD;
                    flat.chunks(per_row).flat_map(|r| r[..n_in].to_vec()).collect()
                }
                _ => flat[..spec.weight_count()].to_vec(),
            };
        }
        Ok(out)
    }
}

pub fn export_packed(qm: &QuantizedModel, path: &Path) -> Result<PackedMemoryImage> {
    let img = pack(qm)?;
    fs::write(path, img.to_text()).map_err(|e| Error::io(path, e))?;
    Ok(img)
}

pub fn import_packed(path: &Path) -> Result<PackedMemoryImage> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PackedMemoryImage::parse(&text)
}

//! On-disk model bundles.
//!
//! A bundle is a directory holding `manifest.json` and one little-endian
//! blob per weighted layer (`layerKK.bin`). Float bundles store `f32`
//! weights, quantized bundles store `i32` mantissas. Every blob is listed
//! in the manifest with its element count and SHA-256 digest.
//!
//! ```text
//! model/
//!   manifest.json
//!   layer00.bin   # 36 weights, 144 bytes
//!   layer01.bin
//!   ...
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fixed::QFormat;
use crate::nn::{ModelConfig, WeightSet};
use crate::quant::{QuantizedModel, ReductionProfile};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Float(Vec<Vec<f32>>),
    Quantized {
        fmt: QFormat,
        profile: ReductionProfile,
        weights: Vec<Vec<i32>>,
        weight_saturations: u64,
    },
}

/// Model description plus weights, aligned with `config.layers`
/// (pooling layers carry empty arrays).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub payload: Payload,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum PayloadKind {
    Float,
    Quantized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlobEntry {
    layer: usize,
    file: String,
    count: usize,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    kind: PayloadKind,
    model: ModelConfig,
    qformat: Option<QFormat>,
    profile: Option<ReductionProfile>,
    weight_saturations: Option<u64>,
    provenance: Provenance,
    blobs: Vec<BlobEntry>,
}

impl ModelBundle {
    /// Float bundle; weights are narrowed to `f32`.
    pub fn from_float(config: &ModelConfig, weights: &WeightSet, provenance: Provenance) -> Result<Self> {
        weights.validate(config)?;
        Ok(Self {
            config: config.clone(),
            payload: Payload::Float(
                weights
                    .layers
                    .iter()
                    .map(|l| l.iter().map(|&w| w as f32).collect())
                    .collect(),
            ),
            provenance,
        })
    }

    pub fn from_quantized(qm: &QuantizedModel, provenance: Provenance) -> Result<Self> {
        qm.validate()?;
        Ok(Self {
            config: qm.config.clone(),
            payload: Payload::Quantized {
                fmt: qm.fmt,
                profile: qm.profile.clone(),
                // mantissas are bounded by 2^30, so they always fit
                weights: qm
                    .weights
                    .iter()
                    .map(|l| l.iter().map(|&m| m as i32).collect())
                    .collect(),
                weight_saturations: qm.weight_saturations,
            },
            provenance,
        })
    }

    pub fn float_weights(&self) -> Result<WeightSet> {
        match &self.payload {
            Payload::Float(layers) => Ok(WeightSet {
                layers: layers
                    .iter()
                    .map(|l| l.iter().map(|&w| w as f64).collect())
                    .collect(),
            }),
            Payload::Quantized { .. } => Err(Error::Parse("bundle holds quantized weights, not float".into())),
        }
    }

    pub fn quantized_model(&self) -> Result<QuantizedModel> {
        match &self.payload {
            Payload::Quantized {
                fmt,
                profile,
                weights,
                weight_saturations,
            } => {
                let qm = QuantizedModel {
                    config: self.config.clone(),
                    weights: weights
                        .iter()
                        .map(|l| l.iter().map(|&m| m as i64).collect())
                        .collect(),
                    profile: profile.clone(),
                    fmt: *fmt,
                    weight_saturations: *weight_saturations,
                };
                qm.validate()?;
                Ok(qm)
            }
            Payload::Float(_) => Err(Error::Parse("bundle holds float weights, not quantized".into())),
        }
    }

    fn layer_bytes(&self, k: usize) -> Vec<u8> {
        match &self.payload {
            Payload::Float(l) => l[k].iter().flat_map(|w| w.to_le_bytes()).collect(),
            Payload::Quantized { weights, .. } => weights[k].iter().flat_map(|w| w.to_le_bytes()).collect(),
        }
    }

    fn layer_count(&self) -> usize {
        match &self.payload {
            Payload::Float(l) => l.len(),
            Payload::Quantized { weights, .. } => weights.len(),
        }
    }

    /// Writes the bundle into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut blobs = Vec::new();
        for k in self.config.weighted_layers() {
            let bytes = self.layer_bytes(k);
            let file = format!("layer{k:02}.bin");
            let path = dir.join(&file);
            fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            blobs.push(BlobEntry {
                layer: k,
                file,
                count: bytes.len() / 4,
                sha256: sha256_hex(&bytes),
            });
        }
        let (kind, qformat, profile, weight_saturations) = match &self.payload {
            Payload::Float(_) => (PayloadKind::Float, None, None, None),
            Payload::Quantized {
                fmt,
                profile,
                weight_saturations,
                ..
            } => (
                PayloadKind::Quantized,
                Some(*fmt),
                Some(profile.clone()),
                Some(*weight_saturations),
            ),
        };
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            kind,
            model: self.config.clone(),
            qformat,
            profile,
            weight_saturations,
            provenance: self.provenance.clone(),
            blobs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        // check the version before the rest of the schema
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Parse("manifest has no format_version".into()))?;
        if found != FORMAT_VERSION as u64 {
            return Err(Error::BundleVersion {
                found: found.try_into().unwrap_or(u32::MAX),
                expected: FORMAT_VERSION,
            });
        }
        let m: Manifest = serde_json::from_value(value)?;
        let config = ModelConfig::new(m.model.input, m.model.layers.clone())?;

        let mut raw: Vec<Vec<u8>> = vec![Vec::new(); config.layers.len()];
        for b in &m.blobs {
            let spec = config
                .layers
                .get(b.layer)
                .ok_or_else(|| Error::shape(format!("blob for nonexistent layer {}", b.layer)))?;
            if b.file.contains(['/', '\\']) || b.file.starts_with('.') {
                return Err(Error::Parse(format!("blob name `{}` is not a plain file name", b.file)));
            }
            let path = dir.join(&b.file);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if sha256_hex(&bytes) != b.sha256 {
                return Err(Error::Checksum { blob: b.file.clone() });
            }
            if bytes.len() != b.count * 4 || b.count != spec.weight_count() {
                return Err(Error::shape(format!(
                    "layer {}: expected {} weights, blob holds {} bytes",
                    b.layer,
                    spec.weight_count(),
                    bytes.len()
                )));
            }
            raw[b.layer] = bytes;
        }
        for k in config.weighted_layers() {
            if raw[k].is_empty() {
                return Err(Error::shape(format!("manifest lists no blob for layer {k}")));
            }
        }
        let payload = match m.kind {
            PayloadKind::Float => Payload::Float(
                raw.iter()
                    .map(|b| b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
                    .collect(),
            ),
            PayloadKind::Quantized => Payload::Quantized {
                fmt: m
                    .qformat
                    .ok_or_else(|| Error::Parse("quantized bundle has no qformat".into()))
                    .and_then(|f| QFormat::new(f.frac_bits()))?,
                profile: m
                    .profile
                    .ok_or_else(|| Error::Parse("quantized bundle has no reduction profile".into()))?,
                weights: raw
                    .iter()
                    .map(|b| b.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect())
                    .collect(),
                weight_saturations: m.weight_saturations.unwrap_or(0),
            },
        };
        let bundle = Self {
            config,
            payload,
            provenance: m.provenance,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.shape_chain()?;
        if self.layer_count() != self.config.layers.len() {
            return Err(Error::shape("weight arrays do not match the layer list"));
        }
        match &self.payload {
            Payload::Float(l) => {
                for (k, (w, spec)) in l.iter().zip(&self.config.layers).enumerate() {
                    if w.len() != spec.weight_count() {
                        return Err(Error::shape(format!("layer {k}: wrong weight count")));
                    }
                }
                Ok(())
            }
            Payload::Quantized { .. } => self.quantized_model().map(|_| ()),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

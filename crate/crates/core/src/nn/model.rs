use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tensor::Shape;
use crate::error::{Error, Result};

/// One layer of a bias-free network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv3x3 {
        c_in: usize,
        c_out: usize,
        relu: bool,
        zero_pad: bool,
    },
    MaxPool2,
    GlobalMaxPool,
    Dense {
        n_in: usize,
        n_out: usize,
    },
}

impl LayerSpec {
    pub fn conv(c_in: usize, c_out: usize) -> Self {
        LayerSpec::Conv3x3 {
            c_in,
            c_out,
            relu: true,
            zero_pad: true,
        }
    }

    /// Number of weights the layer stores.
    pub fn weight_count(&self) -> usize {
        match *self {
            LayerSpec::Conv3x3 { c_in, c_out, .. } => 9 * c_in * c_out,
            LayerSpec::Dense { n_in, n_out } => n_in * n_out,
            LayerSpec::MaxPool2 | LayerSpec::GlobalMaxPool => 0,
        }
    }

    pub fn has_weights(&self) -> bool {
        matches!(self, LayerSpec::Conv3x3 { .. } | LayerSpec::Dense { .. })
    }

    /// Output shape for the given input, or a description of the violation.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match (*self, input) {
            (
                LayerSpec::Conv3x3 {
                    c_in,
                    c_out,
                    zero_pad,
                    ..
                },
                Shape::Map {
                    channels,
                    height,
                    width,
                },
            ) => {
                if channels != c_in {
                    return Err(Error::shape(format!(
                        "conv expects {c_in} input channels, got {channels}"
                    )));
                }
                if zero_pad {
                    Ok(Shape::Map {
                        channels: c_out,
                        height,
                        width,
                    })
                } else if height < 3 || width < 3 {
                    Err(Error::shape(format!(
                        "unpadded conv needs at least 3x3 input, got {height}x{width}"
                    )))
                } else {
                    Ok(Shape::Map {
                        channels: c_out,
                        height: height - 2,
                        width: width - 2,
                    })
                }
            }
            (
                LayerSpec::MaxPool2,
                Shape::Map {
                    channels,
                    height,
                    width,
                },
            ) => {
                if height % 2 != 0 || width % 2 != 0 {
                    return Err(Error::shape(format!(
                        "maxpool needs even dimensions, got {height}x{width}"
                    )));
                }
                Ok(Shape::Map {
                    channels,
                    height: height / 2,
                    width: width / 2,
                })
            }
            (LayerSpec::GlobalMaxPool, Shape::Map { channels, .. }) => Ok(Shape::Vector(channels)),
            (LayerSpec::Dense { n_in, n_out }, shape) => {
                if shape.len() != n_in {
                    return Err(Error::shape(format!(
                        "dense expects {n_in} inputs, got {}",
                        shape.len()
                    )));
                }
                Ok(Shape::Vector(n_out))
            }
            (layer, shape) => Err(Error::shape(format!(
                "{layer:?} cannot consume a value of shape {shape}"
            ))),
        }
    }
}

/// Ordered layer stack together with its input geometry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl ModelConfig {
    pub fn new(input: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        let model = Self { input, layers };
        model.shape_chain()?;
        Ok(model)
    }

    /// Shapes between layers: `chain[0]` is the input, `chain[k + 1]` the
    /// output of layer `k`.
    pub fn shape_chain(&self) -> Result<Vec<Shape>> {
        let mut chain = Vec::with_capacity(self.layers.len() + 1);
        chain.push(self.input);
        let mut shape = self.input;
        for (k, layer) in self.layers.iter().enumerate() {
            shape = layer
                .output_shape(shape)
                .map_err(|e| Error::shape(format!("layer {k}: {e}")))?;
            chain.push(shape);
        }
        Ok(chain)
    }

    pub fn output_len(&self) -> Result<usize> {
        Ok(self.shape_chain()?.last().map(|s| s.len()).unwrap_or(0))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::weight_count).sum()
    }

    /// Indices of layers that carry weights.
    pub fn weighted_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.has_weights())
            .map(|(k, _)| k)
    }
}

/// The default digit detector stack for 28×28 grayscale input.
///
/// Channel widths are `4, 4, 8, 8, 16, 16`; with 10 classes the network
/// holds 4,660 weights.
pub fn build_lwdd(num_classes: usize) -> Result<ModelConfig> {
    if !(num_classes == 10 || num_classes == 11) {
        return Err(Error::shape(format!(
            "digit detector supports 10 or 11 classes, got {num_classes}"
        )));
    }
    ModelConfig::new(
        Shape::Map {
            channels: 1,
            height: 28,
            width: 28,
        },
        vec![
            LayerSpec::conv(1, 4),
            LayerSpec::conv(4, 4),
            LayerSpec::MaxPool2,
            LayerSpec::conv(4, 8),
            LayerSpec::conv(8, 8),
            LayerSpec::MaxPool2,
            LayerSpec::conv(8, 16),
            LayerSpec::conv(16, 16),
            LayerSpec::GlobalMaxPool,
            LayerSpec::Dense {
                n_in: 16,
                n_out: num_classes,
            },
        ],
    )
}

/// Per-layer weight arrays, aligned with `ModelConfig::layers`.
///
/// Conv layers are laid out `[c_out][c_in][3][3]`, dense layers
/// `[n_out][n_in]`; pooling layers hold an empty vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub layers: Vec<Vec<f64>>,
}

impl WeightSet {
    pub fn zeros(model: &ModelConfig) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.weight_count()])
                .collect(),
        }
    }

    /// He-normal initialisation (fan-in scaled) for every weighted layer.
    pub fn he_init<R: Rng + ?Sized>(model: &ModelConfig, rng: &mut R) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|layer| {
                let fan_in = match *layer {
                    LayerSpec::Conv3x3 { c_in, .. } => 9 * c_in,
                    LayerSpec::Dense { n_in, .. } => n_in,
                    _ => return Vec::new(),
                };
                let std = (2.0 / fan_in as f64).sqrt();
                (0..layer.weight_count())
                    .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Self { layers }
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.layers.len() != model.layers.len() {
            return Err(Error::shape(format!(
                "weight set has {} layers, model has {}",
                self.layers.len(),
                model.layers.len()
            )));
        }
        for (k, (w, layer)) in self.layers.iter().zip(&model.layers).enumerate() {
            if w.len() != layer.weight_count() {
                return Err(Error::shape(format!(
                    "layer {k}: expected {} weights, got {}",
                    layer.weight_count(),
                    w.len()
                )));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// Kernel plane `[3][3]` for output channel `o` and input channel `i`.
    pub fn kernel(&self, layer: usize, c_in: usize, o: usize, i: usize) -> &[f64] {
        let start = (o * c_in + i) * 9;
        &self.layers[layer][start..start + 9]
    }
}

/// Small random network in the same family as the detector: conv, optional
/// 2×2 pool, conv, global max pool, dense. Used for gradient and engine checks.
pub fn random_small_model<R: Rng + ?Sized>(rng: &mut R) -> ModelConfig {
    let side = 2 * rng.gen_range(2..=4);
    let (c1, c2) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let classes = rng.gen_range(2..=4);
    let mut layers = vec![LayerSpec::conv(1, c1)];
    if rng.gen_bool(0.5) {
        layers.push(LayerSpec::MaxPool2);
    }
    layers.extend([
        LayerSpec::conv(c1, c2),
        LayerSpec::GlobalMaxPool,
        LayerSpec::Dense {
            n_in: c2,
            n_out: classes,
        },
    ]);
    ModelConfig::new(
        Shape::Map {
            channels: 1,
            height: side,
            width: side,
        },
        layers,
    )
    .expect("even side and matching channels always validate")
}

//! Per-layer range analysis, weight reduction and quantization.
//!
//! Every weighted layer `k` gets a reduction coefficient `M_k`; dividing the
//! layer's weights by `M_k` keeps its outputs inside `[-1, 1]`. Coefficients
//! cascade: `M_k` is measured on the network whose upstream layers are
//! already reduced. Because every layer is bias-free and every nonlinearity
//! is positively homogeneous, reduction scales the logits by
//! `1 / Π M_k` and never changes the predicted class.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::engine;
use crate::error::{Error, Result};
use crate::fixed::{to_fixed, OverflowCounter, QFormat, RoundingStrategy};
use crate::nn::{infer_float, pre_activations, LayerSpec, ModelConfig, Shape, Tensor, WeightSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "p", rename_all = "snake_case")]
pub enum MarginMode {
    /// Mean of the per-image absolute extremum plus three standard deviations.
    ThreeSigma,
    /// Observed maximum scaled by `1 + p`.
    Percent(f64),
}

impl std::str::FromStr for MarginMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "three-sigma" {
            return Ok(MarginMode::ThreeSigma);
        }
        if let Some(p) = s.strip_prefix("percent:") {
            let p: f64 = p
                .parse()
                .map_err(|_| Error::Parse(format!("bad margin percentage `{p}`")))?;
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::Parse(format!("margin must be non-negative, got {p}")));
            }
            return Ok(MarginMode::Percent(p));
        }
        Err(Error::Parse(format!(
            "unknown margin `{s}` (expected three-sigma or percent:P)"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum RangeMethod {
    WorstCase,
    Calibrated { margin: MarginMode, dataset_id: String },
}

/// Range of one weighted layer, expressed on the reduced upstream network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerRange {
    pub layer: usize,
    pub mn: f64,
    pub mx: f64,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionProfile {
    pub method: RangeMethod,
    pub layers: Vec<LayerRange>,
}

impl ReductionProfile {
    pub fn coefficient(&self, layer: usize) -> Option<f64> {
        self.layers.iter().find(|r| r.layer == layer).map(|r| r.m)
    }

    /// `Π M_k` over all layers; reduced logits equal original logits divided by this.
    pub fn total_scale(&self) -> f64 {
        self.layers.iter().map(|r| r.m).product()
    }

    /// Profile with `M = 1` everywhere.
    pub fn identity(model: &ModelConfig) -> Self {
        Self {
            method: RangeMethod::WorstCase,
            layers: model
                .weighted_layers()
                .map(|layer| LayerRange {
                    layer,
                    mn: -1.0,
                    mx: 1.0,
                    m: 1.0,
                })
                .collect(),
        }
    }
}

/// Closed interval per channel (maps) or per element (vectors).
#[derive(Debug, Clone)]
struct Bounds {
    shape: Shape,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    /// Interval of flat element `i` of the value.
    fn element(&self, i: usize) -> (f64, f64) {
        match self.shape {
            Shape::Map { height, width, .. } => {
                let c = i / (height * width);
                (self.lo[c], self.hi[c])
            }
            Shape::Vector(_) => (self.lo[i], self.hi[i]),
        }
    }
}

fn term_bounds(w: f64, lo: f64, hi: f64) -> (f64, f64) {
    let (a, b) = (w * lo, w * hi);
    (a.min(b), a.max(b))
}

/// Sound ranges from interval arithmetic over every input in `[0, 1]`.
///
/// As with calibrated ranges, a coefficient is never below the layer's
/// largest weight magnitude.
pub fn worst_case_ranges(model: &ModelConfig, weights: &WeightSet) -> Result<ReductionProfile> {
    weights.validate(model)?;
    let chain = model.shape_chain()?;
    let in_channels = match model.input {
        Shape::Map { channels, .. } => channels,
        Shape::Vector(n) => n,
    };
    let mut b = Bounds {
        shape: model.input,
        lo: vec![0.0; in_channels],
        hi: vec![1.0; in_channels],
    };
    let mut ranges = Vec::new();
    for (k, layer) in model.layers.iter().enumerate() {
        let w = &weights.layers[k];
        b = match *layer {
            LayerSpec::Conv3x3 {
                c_in,
                c_out,
                relu,
                zero_pad,
            } => {
                let mut lo = vec![0.0; c_out];
                let mut hi = vec![0.0; c_out];
                for o in 0..c_out {
                    for i in 0..c_in {
                        for &wt in &w[(o * c_in + i) * 9..(o * c_in + i) * 9 + 9] {
                            let (mut a, mut z) = term_bounds(wt, b.lo[i], b.hi[i]);
                            if zero_pad {
                                // padded taps contribute exactly zero
                                a = a.min(0.0);
                                z = z.max(0.0);
                            }
                            lo[o] += a;
                            hi[o] += z;
                        }
                    }
                }
                let reduced = record(&mut ranges, k, w, &lo, &hi)?;
                if relu {
                    clip_relu(reduced)
                } else {
                    reduced
                }
                .into_bounds(chain[k + 1])
            }
            LayerSpec::Dense { n_in, n_out } => {
                let mut lo = vec![0.0; n_out];
                let mut hi = vec![0.0; n_out];
                for o in 0..n_out {
                    for i in 0..n_in {
                        let (l, h) = b.element(i);
                        let (a, z) = term_bounds(w[o * n_in + i], l, h);
                        lo[o] += a;
                        hi[o] += z;
                    }
                }
                record(&mut ranges, k, w, &lo, &hi)?.into_bounds(chain[k + 1])
            }
            LayerSpec::MaxPool2 => Bounds {
                shape: chain[k + 1],
                ..b
            },
            LayerSpec::GlobalMaxPool => Bounds {
                shape: chain[k + 1],
                ..b
            },
        };
    }
    Ok(ReductionProfile {
        method: RangeMethod::WorstCase,
        layers: ranges,
    })
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |a, v| a.max(v.abs()))
}

struct Intervals(Vec<f64>, Vec<f64>);

impl Intervals {
    fn into_bounds(self, shape: Shape) -> Bounds {
        Bounds {
            shape,
            lo: self.0,
            hi: self.1,
        }
    }
}

fn clip_relu(iv: Intervals) -> Intervals {
    Intervals(
        iv.0.into_iter().map(|v| v.max(0.0)).collect(),
        iv.1.into_iter().map(|v| v.max(0.0)).collect(),
    )
}

/// Records the layer's range and returns the reduced intervals.
fn record(ranges: &mut Vec<LayerRange>, layer: usize, weights: &[f64], lo: &[f64], hi: &[f64]) -> Result<Intervals> {
    let mn = lo.iter().copied().fold(f64::INFINITY, f64::min);
    let mx = hi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m = mn.abs().max(mx.abs()).max(max_abs(weights));
    if !m.is_finite() || m <= 0.0 {
        return Err(Error::DegenerateLayer { layer });
    }
    ranges.push(LayerRange { layer, mn, mx, m });
    Ok(Intervals(
        lo.iter().map(|v| v / m).collect(),
        hi.iter().map(|v| v / m).collect(),
    ))
}

/// Grayscale pixels shaped as the model's input map.
fn input_tensor(model: &ModelConfig, pixels: &[u8]) -> Result<Tensor> {
    match model.input {
        Shape::Map {
            channels: 1,
            height,
            width,
        } => Tensor::from_pixels(height, width, pixels),
        other => Err(Error::shape(format!("pixel input needs a 1-channel map, model takes {other:?}"))),
    }
}

/// Ranges estimated from float inference over a calibration set.
///
/// Extrema are taken per image over each layer's pre-activation values.
/// A layer's coefficient is never below its largest weight magnitude, so
/// reduced weights always fit the `[-1, 1]` format.
pub fn calibrated_ranges(
    model: &ModelConfig,
    weights: &WeightSet,
    images: &[Vec<u8>],
    margin: MarginMode,
    dataset_id: &str,
) -> Result<ReductionProfile> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let layers: Vec<usize> = model.weighted_layers().collect();
    // per layer: (per-image min, per-image max)
    let mut mins = vec![Vec::with_capacity(images.len()); layers.len()];
    let mut maxs = vec![Vec::with_capacity(images.len()); layers.len()];
    for img in images {
        for (slot, (_, pre)) in pre_activations(model, weights, &input_tensor(model, img)?)?
            .iter()
            .enumerate()
        {
            let v = pre.values();
            mins[slot].push(v.iter().copied().fold(f64::INFINITY, f64::min));
            maxs[slot].push(v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
    }
    let mut upstream = 1.0;
    let mut ranges = Vec::with_capacity(layers.len());
    for (slot, &layer) in layers.iter().enumerate() {
        let extrema: Vec<f64> = mins[slot]
            .iter()
            .zip(&maxs[slot])
            .map(|(a, b)| a.abs().max(b.abs()))
            .collect();
        let raw = match margin {
            MarginMode::Percent(p) => extrema.iter().copied().fold(0.0, f64::max) * (1.0 + p),
            MarginMode::ThreeSigma => {
                let n = extrema.len() as f64;
                let mean = extrema.iter().sum::<f64>() / n;
                let var = extrema.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
                mean + 3.0 * var.sqrt()
            }
        };
        // never shrink a layer so far that its own weights leave [-1, 1]
        let m = (raw / upstream).max(max_abs(&weights.layers[layer]));
        if !m.is_finite() || m <= 0.0 {
            return Err(Error::DegenerateLayer { layer });
        }
        let mn = mins[slot].iter().copied().fold(f64::INFINITY, f64::min) / upstream;
        let mx = maxs[slot].iter().copied().fold(f64::NEG_INFINITY, f64::max) / upstream;
        ranges.push(LayerRange { layer, mn, mx, m });
        upstream *= m;
    }
    Ok(ReductionProfile {
        method: RangeMethod::Calibrated {
            margin,
            dataset_id: dataset_id.to_string(),
        },
        layers: ranges,
    })
}

/// Divides every weighted layer by its reduction coefficient.
pub fn reduce_weights(model: &ModelConfig, weights: &WeightSet, profile: &ReductionProfile) -> Result<WeightSet> {
    weights.validate(model)?;
    let mut out = weights.clone();
    for k in model.weighted_layers() {
        let m = profile.coefficient(k).ok_or_else(|| {
            Error::shape(format!("reduction profile has no entry for layer {k}"))
        })?;
        if !m.is_finite() || m <= 0.0 {
            return Err(Error::DegenerateLayer { layer: k });
        }
        out.layers[k].iter_mut().for_each(|w| *w /= m);
    }
    Ok(out)
}

/// Reduced weights converted to mantissas in one uniform format.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub config: ModelConfig,
    /// Mantissas aligned with `config.layers` (empty for pooling layers).
    pub weights: Vec<Vec<i64>>,
    pub profile: ReductionProfile,
    pub fmt: QFormat,
    /// Weights clipped to `±1.0` during conversion.
    pub weight_saturations: u64,
}

impl QuantizedModel {
    /// Real values of the stored mantissas.
    pub fn dequantized(&self) -> WeightSet {
        WeightSet {
            layers: self
                .weights
                .iter()
                .map(|l| l.iter().map(|&m| self.fmt.to_real(m)).collect())
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.shape_chain()?;
        if self.weights.len() != self.config.layers.len() {
            return Err(Error::shape("quantized weights do not match the layer list"));
        }
        let one = self.fmt.one();
        for (k, (w, layer)) in self.weights.iter().zip(&self.config.layers).enumerate() {
            if w.len() != layer.weight_count() {
                return Err(Error::shape(format!(
                    "layer {k}: expected {} weights, got {}",
                    layer.weight_count(),
                    w.len()
                )));
            }
            if w.iter().any(|m| m.abs() > one) {
                return Err(Error::shape(format!(
                    "layer {k}: mantissa outside ±2^{}",
                    self.fmt.frac_bits()
                )));
            }
        }
        Ok(())
    }
}

pub fn quantize(
    model: &ModelConfig,
    weights: &WeightSet,
    profile: &ReductionProfile,
    fmt: QFormat,
) -> Result<QuantizedModel> {
    let reduced = reduce_weights(model, weights, profile)?;
    let mut ctr = OverflowCounter::new();
    let mantissas = reduced
        .layers
        .iter()
        .map(|l| l.iter().map(|&w| to_fixed(w, fmt, &mut ctr).mantissa).collect())
        .collect();
    Ok(QuantizedModel {
        config: model.clone(),
        weights: mantissas,
        profile: profile.clone(),
        fmt,
        weight_saturations: ctr.count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MismatchRow {
    pub frac_bits: u32,
    pub strategy: RoundingStrategy,
    pub mismatches: usize,
    pub samples: usize,
    pub overflow_events: u64,
}

impl MismatchRow {
    pub fn ratio(&self) -> f64 {
        self.mismatches as f64 / self.samples as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub rows: Vec<MismatchRow>,
}

impl MismatchReport {
    pub fn get(&self, frac_bits: u32, strategy: RoundingStrategy) -> Option<&MismatchRow> {
        self.rows
            .iter()
            .find(|r| r.frac_bits == frac_bits && r.strategy == strategy)
    }

    /// Smallest swept width with zero mismatches.
    pub fn first_zero(&self, strategy: RoundingStrategy) -> Option<u32> {
        self.rows
            .iter()
            .filter(|r| r.strategy == strategy && r.mismatches == 0)
            .map(|r| r.frac_bits)
            .min()
    }

    /// Smallest swept width from which every larger swept width has zero
    /// mismatches.
    pub fn stable_zero(&self, strategy: RoundingStrategy) -> Option<u32> {
        let mut rows: Vec<&MismatchRow> = self.rows.iter().filter(|r| r.strategy == strategy).collect();
        rows.sort_by_key(|r| r.frac_bits);
        let mut threshold = None;
        for r in rows.iter().rev() {
            if r.mismatches != 0 {
                break;
            }
            threshold = Some(r.frac_bits);
        }
        threshold
    }

    /// Table-style CSV: one row per width, one percentage column per strategy.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut widths: Vec<u32> = self.rows.iter().map(|r| r.frac_bits).collect();
        widths.sort_unstable();
        widths.dedup();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bit_width", "per_operation_pct", "at_end_pct"])?;
        for n in widths {
            let pct = |s| {
                self.get(n, s)
                    .map(|r| format!("{:.2}", 100.0 * r.ratio()))
                    .unwrap_or_default()
            };
            w.write_record([
                n.to_string(),
                pct(RoundingStrategy::PerOperation),
                pct(RoundingStrategy::AtEnd),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<sweep>", e))?;
        Ok(())
    }
}

/// Quantizes at each width and counts argmax disagreements with the float
/// reference over `data`.
pub fn sweep_bitwidths(
    model: &ModelConfig,
    weights: &WeightSet,
    profile: &ReductionProfile,
    data: &LabeledDataset,
    widths: &[u32],
    strategies: &[RoundingStrategy],
    mut on_row: impl FnMut(&MismatchRow),
) -> Result<MismatchReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let reference: Vec<usize> = data
        .images
        .iter()
        .map(|img| input_tensor(model, img).and_then(|x| infer_float(model, weights, &x)).map(|o| o.class))
        .collect::<Result<_>>()?;
    let mut report = MismatchReport::default();
    for &n in widths {
        let qm = quantize(model, weights, profile, QFormat::new(n)?)?;
        for &strategy in strategies {
            let mut mismatches = 0;
            let mut overflow = 0;
            for (img, &want) in data.images.iter().zip(&reference) {
                let out = engine::infer_fxp(&qm, img, strategy)?;
                overflow += out.overflow_events;
                if out.class != want {
                    mismatches += 1;
                }
            }
            let row = MismatchRow {
                frac_bits: n,
                strategy,
                mismatches,
                samples: data.len(),
                overflow_events: overflow,
            };
            on_row(&row);
            report.rows.push(row);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_lwdd;
    use crate::train::image_tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_conv(weights: [f64; 9]) -> (ModelConfig, WeightSet) {
        let model = ModelConfig::new(
            Shape::Map {
                channels: 1,
                height: 5,
                width: 5,
            },
            vec![LayerSpec::conv(1, 1)],
        )
        .unwrap();
        (model, WeightSet {
            layers: vec![weights.to_vec()],
        })
    }

    #[test]
    fn averaging_kernel_has_unit_range() {
        let (model, w) = one_conv([1.0 / 9.0; 9]);
        let p = worst_case_ranges(&model, &w).unwrap();
        let r = p.layers[0];
        assert_eq!(r.mn, 0.0);
        assert!((r.mx - 1.0).abs() < 1e-15);
        assert!((r.m - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unit_kernel_range_is_nine() {
        let (model, w) = one_conv([1.0; 9]);
        assert_eq!(worst_case_ranges(&model, &w).unwrap().layers[0].m, 9.0);
        let (model, w) = one_conv([-1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
        let r = worst_case_ranges(&model, &w).unwrap().layers[0];
        assert_eq!((r.mn, r.mx, r.m), (-5.0, 4.0, 5.0));
    }

    #[test]
    fn zero_layer_is_degenerate() {
        let (model, w) = one_conv([0.0; 9]);
        assert!(matches!(
            worst_case_ranges(&model, &w),
            Err(Error::DegenerateLayer { layer: 0 })
        ));
    }

    #[test]
    fn identity_profile_keeps_weights() {
        let model = build_lwdd(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = WeightSet::he_init(&model, &mut rng);
        let out = reduce_weights(&model, &w, &ReductionProfile::identity(&model)).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn reduction_scales_logits_by_total_coefficient() {
        let model = build_lwdd(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = WeightSet::he_init(&model, &mut rng);
        let profile = worst_case_ranges(&model, &w).unwrap();
        let reduced = reduce_weights(&model, &w, &profile).unwrap();
        let scale = profile.total_scale();
        for _ in 0..10 {
            let img = Tensor::from_vec(1, 28, 28, (0..784).map(|_| rng.gen()).collect()).unwrap();
            let a = infer_float(&model, &w, &img).unwrap();
            let b = infer_float(&model, &reduced, &img).unwrap();
            assert_eq!(a.class, b.class);
            for (x, y) in a.logits.iter().zip(&b.logits) {
                assert!((x / scale - y).abs() <= 1e-9 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn worst_case_reduced_weights_within_unit_interval() {
        let model = build_lwdd(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = WeightSet::he_init(&model, &mut rng);
        let profile = worst_case_ranges(&model, &w).unwrap();
        let reduced = reduce_weights(&model, &w, &profile).unwrap();
        assert!(reduced.layers.iter().flatten().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn calibrated_margins_on_constant_images() {
        let model = ModelConfig::new(
            Shape::Map {
                channels: 1,
                height: 28,
                width: 28,
            },
            vec![LayerSpec::conv(1, 1)],
        )
        .unwrap();
        let w = WeightSet {
            layers: vec![vec![0.1; 9]],
        };
        // interior pixels see all nine taps: 0.9 * v
        let data = vec![vec![128; 784], vec![64; 784]];
        let p = calibrated_ranges(&model, &w, &data, MarginMode::Percent(0.1), "const").unwrap();
        assert!((p.layers[0].m - 0.45 * 1.1).abs() < 1e-12);
        assert!((p.layers[0].mx - 0.45).abs() < 1e-12);
        let p = calibrated_ranges(&model, &w, &data, MarginMode::ThreeSigma, "const").unwrap();
        // extrema 0.45 and 0.225: mean 0.3375, population std 0.1125
        assert!((p.layers[0].m - 0.675).abs() < 1e-12);
        assert!(matches!(
            calibrated_ranges(&model, &w, &[], MarginMode::ThreeSigma, "none"),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn calibrated_cascade_divides_by_upstream() {
        let model = build_lwdd(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = WeightSet::he_init(&model, &mut rng);
        let images: Vec<Vec<u8>> = (0..4).map(|_| (0..784).map(|_| rng.gen()).collect()).collect();
        let p = calibrated_ranges(&model, &w, &images, MarginMode::Percent(0.0), "rand").unwrap();
        let reduced = reduce_weights(&model, &w, &p).unwrap();
        // on the reduced network every layer's largest magnitude is exactly 1
        let mut peak = vec![0.0f64; p.layers.len()];
        for img in &images {
            for (slot, (_, pre)) in pre_activations(&model, &reduced, &image_tensor(img))
                .unwrap()
                .iter()
                .enumerate()
            {
                peak[slot] = pre.values().iter().fold(peak[slot], |a, v| a.max(v.abs()));
            }
        }
        for (v, r) in peak.iter().zip(&p.layers) {
            let w_max = w.layers[r.layer].iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if r.m == w_max {
                assert!(*v <= 1.0 + 1e-9);
            } else {
                assert!((v - 1.0).abs() < 1e-9, "{v}");
            }
        }
        assert!(reduced.layers.iter().flatten().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn calibrated_coefficient_covers_weights() {
        let model = ModelConfig::new(
            Shape::Map {
                channels: 1,
                height: 28,
                width: 28,
            },
            vec![LayerSpec::conv(1, 1)],
        )
        .unwrap();
        let mut k = vec![0.0; 9];
        k[4] = 3.0;
        let w = WeightSet { layers: vec![k] };
        // activations peak at 3 * 10/256, far below the weight itself
        let p = calibrated_ranges(&model, &w, &[vec![10; 784]], MarginMode::Percent(0.0), "dim").unwrap();
        assert_eq!(p.layers[0].m, 3.0);
        assert!((p.layers[0].mx - 30.0 / 256.0).abs() < 1e-12);
    }

    #[test]
    fn margin_parsing() {
        assert_eq!("three-sigma".parse::<MarginMode>().unwrap(), MarginMode::ThreeSigma);
        assert_eq!("percent:0.05".parse::<MarginMode>().unwrap(), MarginMode::Percent(0.05));
        assert!("percent:-1".parse::<MarginMode>().is_err());
        assert!("median".parse::<MarginMode>().is_err());
    }

    #[test]
    fn quantize_examples() {
        let (model, _) = one_conv([0.0; 9]);
        let w = WeightSet {
            layers: vec![vec![0.5, -1.0, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0, 1.5]],
        };
        let qm = quantize(&model, &w, &ReductionProfile::identity(&model), QFormat::new(12).unwrap()).unwrap();
        assert_eq!(&qm.weights[0][..3], &[2048, -4096, 1024]);
        assert_eq!(qm.weights[0][8], 4096);
        assert_eq!(qm.weight_saturations, 1);
        assert!(qm.validate().is_ok());
    }

    #[test]
    fn report_thresholds_and_csv() {
        let row = |n, s, m| MismatchRow {
            frac_bits: n,
            strategy: s,
            mismatches: m,
            samples: 100,
            overflow_events: 0,
        };
        use RoundingStrategy::*;
        let report = MismatchReport {
            rows: vec![
                row(10, PerOperation, 30),
                row(10, AtEnd, 2),
                row(11, PerOperation, 0),
                row(11, AtEnd, 0),
                row(12, PerOperation, 1),
                row(12, AtEnd, 0),
            ],
        };
        assert_eq!(report.first_zero(PerOperation), Some(11));
        assert_eq!(report.stable_zero(PerOperation), None);
        assert_eq!(report.stable_zero(AtEnd), Some(11));
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "bit_width,per_operation_pct,at_end_pct\n10,30.00,2.00\n11,0.00,0.00\n12,1.00,0.00\n"
        );
    }
}

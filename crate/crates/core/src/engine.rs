//! Bit-exact integer inference over a [`QuantizedModel`].
//!
//! Every activation is a mantissa in one Q-format. Products are formed
//! exactly and then rounded according to the selected
//! [`RoundingStrategy`]:
//!
//! - `PerOperation`: each product is rounded back to `N` bits. The nine
//!   products of a kernel plane are summed with saturation, then the plane
//!   results of all input channels are summed with saturation.
//! - `AtEnd`: all `c_in * 9` products of an output pixel are summed exactly
//!   and rounded once, then saturated.
//!
//! Dense layers are evaluated as a sequence of zero-padded 9-input blocks,
//! the way the convolution blocks compute them.

use std::io::Write;
use std::ops::AddAssign;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::fixed::{round_shift, round_shift_wide, OverflowCounter, QFormat, RoundingStrategy};
use crate::nn::{argmax, infer_float, LayerSpec, Shape};
use crate::quant::QuantizedModel;
use crate::train::image_tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FxpTensor {
    pub shape: Shape,
    pub mantissas: Vec<i64>,
    pub fmt: QFormat,
}

impl FxpTensor {
    pub fn to_real(&self) -> Vec<f64> {
        self.mantissas.iter().map(|&m| self.fmt.to_real(m)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceOutcome {
    pub class: usize,
    pub fxp_logits: Vec<i64>,
    pub overflow_events: u64,
}

/// Output of every layer plus saturation events per layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceTrace {
    pub outcome: InferenceOutcome,
    pub layers: Vec<FxpTensor>,
    pub layer_overflows: Vec<u64>,
}

/// Converts 8-bit pixels to `p / 256` in format `fmt`.
pub fn quantize_input(pixels: &[u8], shape: Shape, fmt: QFormat) -> Result<FxpTensor> {
    if pixels.len() != shape.len() {
        return Err(Error::shape(format!(
            "input {shape} needs {} pixels, got {}",
            shape.len(),
            pixels.len()
        )));
    }
    let one = fmt.one();
    Ok(FxpTensor {
        shape,
        mantissas: pixels.iter().map(|&p| round_shift(p as i64 * one, 8)).collect(),
        fmt,
    })
}

pub fn infer_fxp(qm: &QuantizedModel, image: &[u8], strategy: RoundingStrategy) -> Result<InferenceOutcome> {
    run(qm, image, strategy, false).map(|t| t.outcome)
}

/// Like [`infer_fxp`] but keeps every intermediate tensor.
pub fn infer_fxp_traced(qm: &QuantizedModel, image: &[u8], strategy: RoundingStrategy) -> Result<InferenceTrace> {
    run(qm, image, strategy, true)
}

fn run(qm: &QuantizedModel, image: &[u8], strategy: RoundingStrategy, keep: bool) -> Result<InferenceTrace> {
    let chain = qm.config.shape_chain()?;
    if qm.weights.len() != qm.config.layers.len() {
        return Err(Error::shape("quantized weights do not match the layer list"));
    }
    let fmt = qm.fmt;
    let mut x = quantize_input(image, qm.config.input, fmt)?;
    let mut layers = Vec::new();
    let mut layer_overflows = Vec::with_capacity(qm.config.layers.len());
    for (k, layer) in qm.config.layers.iter().enumerate() {
        let w = &qm.weights[k];
        if w.len() != layer.weight_count() {
            return Err(Error::shape(format!("layer {k}: wrong weight count")));
        }
        let mut ctr = OverflowCounter::new();
        let out_shape = chain[k + 1];
        let data = match (*layer, x.shape) {
            (
                LayerSpec::Conv3x3 {
                    c_in,
                    c_out,
                    relu,
                    zero_pad,
                },
                Shape::Map { height, width, .. },
            ) => {
                let geom = ConvGeom {
                    c_in,
                    c_out,
                    height,
                    width,
                    pad: zero_pad,
                };
                let mut out = match strategy {
                    RoundingStrategy::PerOperation => conv_per_op(&x.mantissas, w, geom, fmt, &mut ctr),
                    RoundingStrategy::AtEnd => {
                        if fits_i64(c_in * 9, fmt) {
                            conv_at_end::<i64>(&x.mantissas, w, geom, fmt, &mut ctr)
                        } else {
                            conv_at_end::<i128>(&x.mantissas, w, geom, fmt, &mut ctr)
                        }
                    }
                };
                if relu {
                    out.iter_mut().for_each(|m| *m = (*m).max(0));
                }
                out
            }
            (LayerSpec::MaxPool2, Shape::Map { channels, height, width }) => {
                maxpool2(&x.mantissas, channels, height, width)
            }
            (LayerSpec::GlobalMaxPool, Shape::Map { channels, .. }) => x
                .mantissas
                .chunks(x.shape.len() / channels)
                .map(|p| p.iter().copied().max().unwrap_or(0))
                .collect(),
            (LayerSpec::Dense { n_in, n_out }, _) => match strategy {
                RoundingStrategy::PerOperation => dense_per_op(&x.mantissas, w, n_in, n_out, fmt, &mut ctr),
                RoundingStrategy::AtEnd => {
                    if fits_i64(n_in, fmt) {
                        dense_at_end::<i64>(&x.mantissas, w, n_in, n_out, fmt, &mut ctr)
                    } else {
                        dense_at_end::<i128>(&x.mantissas, w, n_in, n_out, fmt, &mut ctr)
                    }
                }
            },
            (l, s) => return Err(Error::shape(format!("layer {k} ({l:?}) cannot take input {s}"))),
        };
        x = FxpTensor {
            shape: out_shape,
            mantissas: data,
            fmt,
        };
        layer_overflows.push(ctr.count());
        if keep {
            layers.push(x.clone());
        }
    }
    let outcome = InferenceOutcome {
        class: argmax(&x.mantissas),
        overflow_events: layer_overflows.iter().sum(),
        fxp_logits: x.mantissas,
    };
    Ok(InferenceTrace {
        outcome,
        layers,
        layer_overflows,
    })
}

/// Whether `terms` products of two `N`-bit mantissas can be summed in an `i64`.
fn fits_i64(terms: usize, fmt: QFormat) -> bool {
    let bits = usize::BITS - terms.max(1).leading_zeros();
    2 * fmt.frac_bits() + bits <= 62
}

trait Accumulator: Copy + Default + AddAssign {
    fn product(a: i64, b: i64) -> Self;
    fn finish(self, fmt: QFormat, ctr: &mut OverflowCounter) -> i64;
}

impl Accumulator for i64 {
    #[inline]
    fn product(a: i64, b: i64) -> Self {
        a * b
    }

    #[inline]
    fn finish(self, fmt: QFormat, ctr: &mut OverflowCounter) -> i64 {
        ctr.saturate(round_shift(self, fmt.frac_bits()), fmt.one())
    }
}

impl Accumulator for i128 {
    #[inline]
    fn product(a: i64, b: i64) -> Self {
        a as i128 * b as i128
    }

    #[inline]
    fn finish(self, fmt: QFormat, ctr: &mut OverflowCounter) -> i64 {
        ctr.saturate_wide(round_shift_wide(self, fmt.frac_bits()), fmt.one())
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c_in: usize,
    c_out: usize,
    height: usize,
    width: usize,
    pad: bool,
}

impl ConvGeom {
    fn out_dims(self) -> (usize, usize) {
        if self.pad {
            (self.height, self.width)
        } else {
            (self.height - 2, self.width - 2)
        }
    }

    /// Calls `f(out_index, in_index)` for every output pixel whose tap
    /// `(ky, kx)` lands inside the input.
    #[inline]
    fn for_each_tap(self, ky: usize, kx: usize, mut f: impl FnMut(usize, usize)) {
        let (oh, ow) = self.out_dims();
        let p = self.pad as usize;
        // input coordinate = output coordinate + k - p
        let y0 = p.saturating_sub(ky);
        let y1 = oh.min((self.height + p).saturating_sub(ky));
        let x0 = p.saturating_sub(kx);
        let x1 = ow.min((self.width + p).saturating_sub(kx));
        for oy in y0..y1 {
            let iy = oy + ky - p;
            for ox in x0..x1 {
                f(oy * ow + ox, iy * self.width + ox + kx - p);
            }
        }
    }
}

fn conv_at_end<A: Accumulator>(
    input: &[i64],
    kernels: &[i64],
    g: ConvGeom,
    fmt: QFormat,
    ctr: &mut OverflowCounter,
) -> Vec<i64> {
    let (oh, ow) = g.out_dims();
    let plane = g.height * g.width;
    let mut out = Vec::with_capacity(g.c_out * oh * ow);
    let mut acc = vec![A::default(); oh * ow];
    for o in 0..g.c_out {
        acc.fill(A::default());
        for i in 0..g.c_in {
            let src = &input[i * plane..(i + 1) * plane];
            let k = &kernels[(o * g.c_in + i) * 9..(o * g.c_in + i) * 9 + 9];
            for (t, &wt) in k.iter().enumerate() {
                if wt != 0 {
                    g.for_each_tap(t / 3, t % 3, |oi, ii| acc[oi] += A::product(wt, src[ii]));
                }
            }
        }
        out.extend(acc.iter().map(|a| a.finish(fmt, ctr)));
    }
    out
}

fn conv_per_op(input: &[i64], kernels: &[i64], g: ConvGeom, fmt: QFormat, ctr: &mut OverflowCounter) -> Vec<i64> {
    let (oh, ow) = g.out_dims();
    let plane = g.height * g.width;
    let (n, one) = (fmt.frac_bits(), fmt.one());
    let mut out = vec![0i64; g.c_out * oh * ow];
    let mut part = vec![0i64; oh * ow];
    for o in 0..g.c_out {
        let dst = &mut out[o * oh * ow..(o + 1) * oh * ow];
        for i in 0..g.c_in {
            let src = &input[i * plane..(i + 1) * plane];
            let k = &kernels[(o * g.c_in + i) * 9..(o * g.c_in + i) * 9 + 9];
            part.fill(0);
            // taps in kernel order; padded taps and zero weights add an exact
            // zero, which can neither saturate nor change the sum
            for (t, &wt) in k.iter().enumerate() {
                if wt != 0 {
                    g.for_each_tap(t / 3, t % 3, |oi, ii| {
                        part[oi] = ctr.saturate(part[oi] + round_shift(wt * src[ii], n), one);
                    });
                }
            }
            for (d, &p) in dst.iter_mut().zip(&part) {
                *d = ctr.saturate(*d + p, one);
            }
        }
    }
    out
}

fn maxpool2(input: &[i64], channels: usize, height: usize, width: usize) -> Vec<i64> {
    let (oh, ow) = (height / 2, width / 2);
    let mut out = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let p = &input[c * height * width..(c + 1) * height * width];
        for y in 0..oh {
            for x in 0..ow {
                let r0 = 2 * y * width + 2 * x;
                let r1 = r0 + width;
                out.push(p[r0].max(p[r0 + 1]).max(p[r1]).max(p[r1 + 1]));
            }
        }
    }
    out
}

fn dense_per_op(
    input: &[i64],
    weights: &[i64],
    n_in: usize,
    n_out: usize,
    fmt: QFormat,
    ctr: &mut OverflowCounter,
) -> Vec<i64> {
    let (n, one) = (fmt.frac_bits(), fmt.one());
    (0..n_out)
        .map(|o| {
            let row = &weights[o * n_in..(o + 1) * n_in];
            let mut total = 0i64;
            for (xs, ws) in input.chunks(9).zip(row.chunks(9)) {
                let mut block = 0i64;
                for (&x, &w) in xs.iter().zip(ws) {
                    block = ctr.saturate(block + round_shift(x * w, n), one);
                }
                total = ctr.saturate(total + block, one);
            }
            total
        })
        .collect()
}

fn dense_at_end<A: Accumulator>(
    input: &[i64],
    weights: &[i64],
    n_in: usize,
    n_out: usize,
    fmt: QFormat,
    ctr: &mut OverflowCounter,
) -> Vec<i64> {
    (0..n_out)
        .map(|o| {
            let mut acc = A::default();
            for (&x, &w) in input.iter().zip(&weights[o * n_in..(o + 1) * n_in]) {
                acc += A::product(x, w);
            }
            acc.finish(fmt, ctr)
        })
        .collect()
}

/// Fraction of images whose fixed-point class differs from the float class
/// of `reference` (typically the unquantized weights).
pub fn mismatch_rate(
    qm: &QuantizedModel,
    reference: &crate::nn::WeightSet,
    data: &LabeledDataset,
    strategy: RoundingStrategy,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut mismatches = 0usize;
    for img in &data.images {
        let want = infer_float(&qm.config, reference, &image_tensor(img))?.class;
        if infer_fxp(qm, img, strategy)?.class != want {
            mismatches += 1;
        }
    }
    Ok(mismatches as f64 / data.len() as f64)
}

/// Saturation events summed over a dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OverflowAudit {
    pub per_layer: Vec<u64>,
    pub images_with_overflow: usize,
    pub images: usize,
}

impl OverflowAudit {
    pub fn total(&self) -> u64 {
        self.per_layer.iter().sum()
    }
}

pub fn overflow_audit(qm: &QuantizedModel, data: &LabeledDataset, strategy: RoundingStrategy) -> Result<OverflowAudit> {
    let mut audit = OverflowAudit {
        per_layer: vec![0; qm.config.layers.len()],
        images_with_overflow: 0,
        images: data.len(),
    };
    for img in &data.images {
        let t = run(qm, img, strategy, false)?;
        for (sum, n) in audit.per_layer.iter_mut().zip(&t.layer_overflows) {
            *sum += n;
        }
        if t.outcome.overflow_events > 0 {
            audit.images_with_overflow += 1;
        }
    }
    Ok(audit)
}

/// Writes every layer's mantissas, one integer per line, each layer
/// preceded by a `# layer <k> <shape>` line.
pub fn write_mantissa_dump<W: Write>(trace: &InferenceTrace, mut out: W) -> std::io::Result<()> {
    for (k, t) in trace.layers.iter().enumerate() {
        writeln!(out, "# layer {k} {}", t.shape)?;
        for m in &t.mantissas {
            writeln!(out, "{m}")?;
        }
    }
    Ok(())
}

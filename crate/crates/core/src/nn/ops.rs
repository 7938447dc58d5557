use super::model::{LayerSpec, ModelConfig, WeightSet};
use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

/// 3×3 convolution without bias.
///
/// `kernels` is laid out `[c_out][c_in][3][3]`. With `zero_pad` the output
/// keeps the input's `H×W` and out-of-bounds neighbours read as zero;
/// otherwise only fully covered positions are produced.
pub fn conv3x3(
    input: &Tensor,
    kernels: &[f64],
    c_out: usize,
    zero_pad: bool,
    relu: bool,
) -> Result<Tensor> {
    let c_in = input.channels();
    if kernels.len() != 9 * c_in * c_out {
        return Err(Error::shape(format!(
            "conv with {c_in} input and {c_out} output channels needs {} weights, got {}",
            9 * c_in * c_out,
            kernels.len()
        )));
    }
    let (h, w) = (input.height(), input.width());
    let (oh, ow, off) = if zero_pad {
        (h, w, 1isize)
    } else {
        if h < 3 || w < 3 {
            return Err(Error::shape(format!("unpadded conv on {h}x{w} input")));
        }
        (h - 2, w - 2, 0isize)
    };
    let mut out = Tensor::zeros(c_out, oh, ow);
    for o in 0..c_out {
        let dst = out.plane_mut(o);
        for i in 0..c_in {
            let src = input.plane(i);
            let kernel = &kernels[(o * c_in + i) * 9..(o * c_in + i) * 9 + 9];
            accumulate_plane(dst, src, kernel, h, w, oh, ow, off);
        }
        if relu {
            dst.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    Ok(out)
}

/// `dst[y][x] += Σ k[ky][kx] · src[y+ky-off][x+kx-off]` with zero outside `src`.
#[allow(clippy::too_many_arguments)]
fn accumulate_plane(
    dst: &mut [f64],
    src: &[f64],
    kernel: &[f64],
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    off: isize,
) {
    for ky in 0..3 {
        for kx in 0..3 {
            let wt = kernel[ky * 3 + kx];
            if wt == 0.0 {
                continue;
            }
            let dy = ky as isize - off;
            let dx = kx as isize - off;
            let x0 = (-dx).max(0) as usize;
            let x1 = (w as isize - dx).min(ow as isize).max(0) as usize;
            if x0 >= x1 {
                continue;
            }
            for y in 0..oh {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                let drow = &mut dst[y * ow..(y + 1) * ow];
                let sx0 = (x0 as isize + dx) as usize;
                for (d, s) in drow[x0..x1].iter_mut().zip(&srow[sx0..sx0 + (x1 - x0)]) {
                    *d += wt * s;
                }
            }
        }
    }
}

/// Zero-padded 3×3 convolution that preserves `H×W`.
pub fn conv3x3_same(input: &Tensor, kernels: &[f64], c_out: usize, relu: bool) -> Result<Tensor> {
    conv3x3(input, kernels, c_out, true, relu)
}

pub fn maxpool2(input: &Tensor) -> Result<Tensor> {
    let (h, w) = (input.height(), input.width());
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("maxpool needs even dimensions, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(input.channels(), oh, ow);
    for c in 0..input.channels() {
        let src = input.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..oh {
            for x in 0..ow {
                let a = src[2 * y * w + 2 * x];
                let b = src[2 * y * w + 2 * x + 1];
                let d = src[(2 * y + 1) * w + 2 * x];
                let e = src[(2 * y + 1) * w + 2 * x + 1];
                dst[y * ow + x] = a.max(b).max(d.max(e));
            }
        }
    }
    Ok(out)
}

/// Per-channel maximum over the whole plane.
pub fn global_max_pool(input: &Tensor) -> Vec<f64> {
    (0..input.channels())
        .map(|c| {
            input
                .plane(c)
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Bias-free matrix-vector product; `weights` is `[n_out][n_in]`.
pub fn dense(input: &[f64], weights: &[f64], n_out: usize) -> Result<Vec<f64>> {
    let n_in = input.len();
    if weights.len() != n_in * n_out {
        return Err(Error::shape(format!(
            "dense {n_in}->{n_out} needs {} weights, got {}",
            n_in * n_out,
            weights.len()
        )));
    }
    Ok(weights
        .chunks_exact(n_in.max(1))
        .take(n_out)
        .map(|row| row.iter().zip(input).map(|(w, x)| w * x).sum())
        .collect())
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Value flowing between layers of the float reference.
#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    Map(Tensor),
    Vector(Vec<f64>),
}

impl Activation {
    pub fn values(&self) -> &[f64] {
        match self {
            Activation::Map(t) => t.data(),
            Activation::Vector(v) => v,
        }
    }

    pub fn shape(&self) -> Shape {
        match self {
            Activation::Map(t) => t.shape(),
            Activation::Vector(v) => Shape::Vector(v.len()),
        }
    }

    fn flatten(&self) -> Vec<f64> {
        self.values().to_vec()
    }
}

/// Applies one layer. Returns the pre-activation value for weighted layers
/// alongside the layer output.
pub fn apply_layer(
    layer: &LayerSpec,
    weights: &[f64],
    input: &Activation,
) -> Result<(Option<Activation>, Activation)> {
    match (*layer, input) {
        (
            LayerSpec::Conv3x3 {
                c_out,
                relu,
                zero_pad,
                ..
            },
            Activation::Map(t),
        ) => {
            let pre = conv3x3(t, weights, c_out, zero_pad, false)?;
            let out = if relu {
                let mut o = pre.clone();
                o.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                o
            } else {
                pre.clone()
            };
            Ok((Some(Activation::Map(pre)), Activation::Map(out)))
        }
        (LayerSpec::MaxPool2, Activation::Map(t)) => Ok((None, Activation::Map(maxpool2(t)?))),
        (LayerSpec::GlobalMaxPool, Activation::Map(t)) => {
            Ok((None, Activation::Vector(global_max_pool(t))))
        }
        (LayerSpec::Dense { n_out, .. }, x) => {
            let out = dense(&x.flatten(), weights, n_out)?;
            Ok((Some(Activation::Vector(out.clone())), Activation::Vector(out)))
        }
        (layer, x) => Err(Error::shape(format!(
            "{layer:?} cannot consume a value of shape {}",
            x.shape()
        ))),
    }
}

/// Float reference result.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatOutcome {
    pub logits: Vec<f64>,
    pub class: usize,
}

/// Sequential forward pass; the classification is the argmax of the logits
/// (softmax is monotone and never evaluated here).
pub fn infer_float(model: &ModelConfig, weights: &WeightSet, image: &Tensor) -> Result<FloatOutcome> {
    let mut act = check_input(model, weights, image)?;
    for (layer, w) in model.layers.iter().zip(&weights.layers) {
        act = apply_layer(layer, w, &act)?.1;
    }
    let logits = act.values().to_vec();
    let class = argmax(&logits);
    Ok(FloatOutcome { logits, class })
}

/// Pre-activation values of every weighted layer, keyed by layer index.
pub fn pre_activations(
    model: &ModelConfig,
    weights: &WeightSet,
    image: &Tensor,
) -> Result<Vec<(usize, Activation)>> {
    let mut act = check_input(model, weights, image)?;
    let mut out = Vec::new();
    for (k, (layer, w)) in model.layers.iter().zip(&weights.layers).enumerate() {
        let (pre, next) = apply_layer(layer, w, &act)?;
        if let Some(pre) = pre {
            out.push((k, pre));
        }
        act = next;
    }
    Ok(out)
}

fn check_input(model: &ModelConfig, weights: &WeightSet, image: &Tensor) -> Result<Activation> {
    weights.validate(model)?;
    if image.shape() != model.input {
        return Err(Error::shape(format!(
            "model expects input {}, got {}",
            model.input,
            image.shape()
        )));
    }
    Ok(Activation::Map(image.clone()))
}

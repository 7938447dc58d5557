//! Reverse-mode gradients of the softmax cross-entropy loss.

use crate::error::Result;
use crate::nn::{apply_layer, Activation, LayerSpec, ModelConfig, Tensor, WeightSet};

/// Every intermediate value of one forward pass.
pub(crate) struct Trace {
    /// `acts[0]` is the input, `acts[k + 1]` the output of layer `k`.
    acts: Vec<Activation>,
    pres: Vec<Option<Activation>>,
}

impl Trace {
    pub(crate) fn logits(&self) -> &[f64] {
        self.acts.last().expect("trace has the input").values()
    }
}

pub(crate) fn forward(model: &ModelConfig, weights: &WeightSet, input: &Tensor) -> Result<Trace> {
    let mut acts = Vec::with_capacity(model.layers.len() + 1);
    let mut pres = Vec::with_capacity(model.layers.len());
    acts.push(Activation::Map(input.clone()));
    for (layer, w) in model.layers.iter().zip(&weights.layers) {
        let (pre, out) = apply_layer(layer, w, acts.last().expect("non-empty"))?;
        pres.push(pre);
        acts.push(out);
    }
    Ok(Trace { acts, pres })
}

/// Numerically stable softmax cross-entropy; returns the loss and its
/// gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    let loss = z.ln() - (logits[label] - max);
    let grad = exp
        .iter()
        .enumerate()
        .map(|(i, e)| e / z - if i == label { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}

/// Back-propagates `grad_logits` through the trace, adding weight
/// gradients into `grads`.
pub(crate) fn backward(
    model: &ModelConfig,
    weights: &WeightSet,
    trace: &Trace,
    grad_logits: Vec<f64>,
    grads: &mut WeightSet,
) {
    let mut g = grad_logits;
    for k in (0..model.layers.len()).rev() {
        let input = &trace.acts[k];
        let need_input_grad = k > 0;
        g = match model.layers[k] {
            LayerSpec::Conv3x3 {
                c_in,
                c_out,
                relu,
                zero_pad,
            } => {
                let Activation::Map(x) = input else {
                    unreachable!("conv input is a map")
                };
                if relu {
                    let pre = trace.pres[k].as_ref().expect("conv records pre-activation");
                    for (gv, p) in g.iter_mut().zip(pre.values()) {
                        if *p <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                }
                conv_backward(
                    x,
                    &weights.layers[k],
                    &g,
                    c_in,
                    c_out,
                    zero_pad,
                    &mut grads.layers[k],
                    need_input_grad,
                )
            }
            LayerSpec::MaxPool2 => {
                let Activation::Map(x) = input else {
                    unreachable!("pool input is a map")
                };
                maxpool_backward(x, &g)
            }
            LayerSpec::GlobalMaxPool => {
                let Activation::Map(x) = input else {
                    unreachable!("pool input is a map")
                };
                global_max_backward(x, &g)
            }
            LayerSpec::Dense { n_in, n_out } => {
                let x = input.values();
                let w = &weights.layers[k];
                let gw = &mut grads.layers[k];
                let mut gx = vec![0.0; n_in];
                for o in 0..n_out {
                    let go = g[o];
                    if go == 0.0 {
                        continue;
                    }
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let grow = &mut gw[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        grow[i] += go * x[i];
                        gx[i] += go * row[i];
                    }
                }
                gx
            }
        };
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &Tensor,
    w: &[f64],
    g_out: &[f64],
    c_in: usize,
    c_out: usize,
    zero_pad: bool,
    gw: &mut [f64],
    need_input_grad: bool,
) -> Vec<f64> {
    let (h, wd) = (x.height(), x.width());
    let (oh, ow, off) = if zero_pad {
        (h, wd, 1isize)
    } else {
        (h - 2, wd - 2, 0isize)
    };
    let mut gx = if need_input_grad {
        vec![0.0; c_in * h * wd]
    } else {
        Vec::new()
    };
    for o in 0..c_out {
        let go = &g_out[o * oh * ow..(o + 1) * oh * ow];
        for i in 0..c_in {
            let src = x.plane(i);
            let base = (o * c_in + i) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let dy = ky as isize - off;
                    let dx = kx as isize - off;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (wd as isize - dx).min(ow as isize).max(0) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    let sx0 = (x0 as isize + dx) as usize;
                    let len = x1 - x0;
                    let wt = w[base + ky * 3 + kx];
                    let mut acc = 0.0;
                    for y in 0..oh {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        let grow = &go[y * ow + x0..y * ow + x0 + len];
                        let srow = &src[sy * wd + sx0..sy * wd + sx0 + len];
                        acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                        if need_input_grad && wt != 0.0 {
                            let dst = &mut gx[i * h * wd + sy * wd + sx0..i * h * wd + sy * wd + sx0 + len];
                            for (d, gv) in dst.iter_mut().zip(grow) {
                                *d += wt * gv;
                            }
                        }
                    }
                    gw[base + ky * 3 + kx] += acc;
                }
            }
        }
    }
    gx
}

fn maxpool_backward(x: &Tensor, g_out: &[f64]) -> Vec<f64> {
    let (h, w) = (x.height(), x.width());
    let (oh, ow) = (h / 2, w / 2);
    let mut gx = vec![0.0; x.channels() * h * w];
    for c in 0..x.channels() {
        let src = x.plane(c);
        for y in 0..oh {
            for xx in 0..ow {
                let cands = [
                    2 * y * w + 2 * xx,
                    2 * y * w + 2 * xx + 1,
                    (2 * y + 1) * w + 2 * xx,
                    (2 * y + 1) * w + 2 * xx + 1,
                ];
                let mut best = cands[0];
                for &idx in &cands[1..] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                gx[c * h * w + best] += g_out[c * oh * ow + y * ow + xx];
            }
        }
    }
    gx
}

fn global_max_backward(x: &Tensor, g_out: &[f64]) -> Vec<f64> {
    let n = x.height() * x.width();
    let mut gx = vec![0.0; x.channels() * n];
    for c in 0..x.channels() {
        let plane = x.plane(c);
        let best = crate::nn::argmax(plane);
        gx[c * n + best] = g_out[c];
    }
    gx
}

/// Loss on one labelled input; adds its gradient into `grads`.
pub fn loss_and_gradient(
    model: &ModelConfig,
    weights: &WeightSet,
    image: &Tensor,
    label: usize,
    grads: &mut WeightSet,
) -> Result<f64> {
    let trace = forward(model, weights, image)?;
    let (loss, grad) = softmax_cross_entropy(trace.logits(), label);
    backward(model, weights, &trace, grad, grads);
    Ok(loss)
}

/// Loss only.
pub fn loss(model: &ModelConfig, weights: &WeightSet, image: &Tensor, label: usize) -> Result<f64> {
    let trace = forward(model, weights, image)?;
    Ok(softmax_cross_entropy(trace.logits(), label).0)
}

//! Naive reference implementations shared by the integration tests.
//!
//! Everything here is written per output element with arbitrary-precision
//! integers so it shares no code path with the library's engine.

#![allow(dead_code)]

pub mod fixtures;

use lwdd_core::nn::{LayerSpec, ModelConfig, Shape};
use num_bigint::BigInt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rounding {
    PerOperation,
    AtEnd,
}

/// `round(v / 2^n)`, ties away from zero.
pub fn round_big(v: &BigInt, n: u32) -> BigInt {
    let half = BigInt::from(1) << (n - 1);
    let mag: BigInt = if v < &BigInt::from(0) { -v.clone() } else { v.clone() };
    let r = (mag + half) >> n;
    if v < &BigInt::from(0) {
        -r
    } else {
        r
    }
}

pub struct Reference {
    pub n: u32,
    pub events: u64,
}

impl Reference {
    pub fn new(n: u32) -> Self {
        Self { n, events: 0 }
    }

    fn one(&self) -> BigInt {
        BigInt::from(1) << self.n
    }

    fn sat(&mut self, v: BigInt) -> BigInt {
        let one = self.one();
        if v > one {
            self.events += 1;
            one
        } else if v < -one.clone() {
            self.events += 1;
            -one
        } else {
            v
        }
    }

    fn mul(&self, a: &BigInt, b: &BigInt) -> BigInt {
        round_big(&(a * b), self.n)
    }
}

fn to_i64(v: &BigInt) -> i64 {
    i64::try_from(v).expect("mantissa fits i64")
}

/// Output mantissas of every layer and the saturation events of each layer.
pub fn reference_forward(
    config: &ModelConfig,
    weights: &[Vec<i64>],
    pixels: &[u8],
    n: u32,
    mode: Rounding,
) -> (Vec<Vec<i64>>, Vec<u64>) {
    let mut r = Reference::new(n);
    // p / 256 = p * 2^n / 2^8
    let mut x: Vec<BigInt> = pixels
        .iter()
        .map(|&p| round_big(&(BigInt::from(p) << n), 8))
        .collect();
    let mut shape = config.input;
    let mut outs = Vec::new();
    let mut events = Vec::new();
    for (k, layer) in config.layers.iter().enumerate() {
        let before = r.events;
        let w: Vec<BigInt> = weights[k].iter().map(|&v| BigInt::from(v)).collect();
        let (y, next) = match (*layer, shape) {
            (
                LayerSpec::Conv3x3 {
                    c_in,
                    c_out,
                    relu,
                    zero_pad,
                },
                Shape::Map { height, width, .. },
            ) => {
                let p = zero_pad as i64;
                let (oh, ow) = if zero_pad { (height, width) } else { (height - 2, width - 2) };
                let mut y = Vec::new();
                for o in 0..c_out {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut total = BigInt::from(0);
                            let mut exact = BigInt::from(0);
                            for i in 0..c_in {
                                let mut block = BigInt::from(0);
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let iy = oy as i64 + ky - p;
                                        let ix = ox as i64 + kx - p;
                                        let px = if iy < 0 || ix < 0 || iy >= height as i64 || ix >= width as i64 {
                                            BigInt::from(0)
                                        } else {
                                            x[i * height * width + iy as usize * width + ix as usize].clone()
                                        };
                                        let wt = &w[(o * c_in + i) * 9 + (ky * 3 + kx) as usize];
                                        match mode {
                                            Rounding::PerOperation => {
                                                let prod = r.mul(&px, wt);
                                                block = r.sat(block + prod);
                                            }
                                            Rounding::AtEnd => exact += &px * wt,
                                        }
                                    }
                                }
                                if mode == Rounding::PerOperation {
                                    total = r.sat(total + block);
                                }
                            }
                            let mut v = match mode {
                                Rounding::PerOperation => total,
                                Rounding::AtEnd => {
                                    let rounded = round_big(&exact, n);
                                    r.sat(rounded)
                                }
                            };
                            if relu && v < BigInt::from(0) {
                                v = BigInt::from(0);
                            }
                            y.push(v);
                        }
                    }
                }
                (
                    y,
                    Shape::Map {
                        channels: c_out,
                        height: oh,
                        width: ow,
                    },
                )
            }
            (LayerSpec::MaxPool2, Shape::Map { channels, height, width }) => {
                let (oh, ow) = (height / 2, width / 2);
                let mut y = Vec::new();
                for c in 0..channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let at = |dy: usize, dx: usize| &x[c * height * width + (2 * oy + dy) * width + 2 * ox + dx];
                            let m = [at(0, 0), at(0, 1), at(1, 0), at(1, 1)].into_iter().max().unwrap().clone();
                            y.push(m);
                        }
                    }
                }
                (
                    y,
                    Shape::Map {
                        channels,
                        height: oh,
                        width: ow,
                    },
                )
            }
            (LayerSpec::GlobalMaxPool, Shape::Map { channels, height, width }) => {
                let y = (0..channels)
                    .map(|c| x[c * height * width..(c + 1) * height * width].iter().max().unwrap().clone())
                    .collect();
                (y, Shape::Vector(channels))
            }
            (LayerSpec::Dense { n_in, n_out }, _) => {
                let mut y = Vec::new();
                for o in 0..n_out {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let v = match mode {
                        Rounding::PerOperation => {
                            let mut total = BigInt::from(0);
                            for start in (0..n_in).step_by(9) {
                                let mut block = BigInt::from(0);
                                for j in start..(start + 9).min(n_in) {
                                    let prod = r.mul(&x[j], &row[j]);
                                    block = r.sat(block + prod);
                                }
                                total = r.sat(total + block);
                            }
                            total
                        }
                        Rounding::AtEnd => {
                            let exact: BigInt = (0..n_in).map(|j| &x[j] * &row[j]).sum();
                            let rounded = round_big(&exact, n);
                            r.sat(rounded)
                        }
                    };
                    y.push(v);
                }
                (y, Shape::Vector(n_out))
            }
            (l, s) => panic!("layer {l:?} cannot follow {s}"),
        };
        outs.push(y.iter().map(to_i64).collect());
        events.push(r.events - before);
        x = y;
        shape = next;
    }
    (outs, events)
}

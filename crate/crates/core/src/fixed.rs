//! Q-format numbers in `[-1, +1]` and the saturating primitives the
//! convolution hardware is built from.
//!
//! A value `x` is stored as the integer mantissa `round(x * 2^N)`, where `N`
//! is the number of fractional bits. Mantissas are kept within `±2^N`, so
//! both `+1.0` and `-1.0` are exactly representable. Rounding is always
//! round-to-nearest with ties away from zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported number of fractional bits.
///
/// Keeps every product of two mantissas inside an `i64` with headroom for
/// the engine's wide accumulators.
pub const MAX_FRAC_BITS: u32 = 30;

/// Fixed-point format with `frac_bits` fractional bits and value range `[-1, +1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QFormat {
    frac_bits: u32,
}

impl QFormat {
    pub fn new(frac_bits: u32) -> Result<Self> {
        if frac_bits == 0 || frac_bits > MAX_FRAC_BITS {
            return Err(Error::InvalidFormat(frac_bits));
        }
        Ok(Self { frac_bits })
    }

    pub fn frac_bits(self) -> u32 {
        self.frac_bits
    }

    /// Mantissa of `+1.0`, which is also the saturation bound.
    pub fn one(self) -> i64 {
        1i64 << self.frac_bits
    }

    /// Width in bits of a two's-complement field that holds any mantissa
    /// in `[-2^N, +2^N]` (sign + integer bit + `N` fraction bits).
    pub fn field_width(self) -> u32 {
        self.frac_bits + 2
    }

    pub fn to_real(self, mantissa: i64) -> f64 {
        mantissa as f64 / self.one() as f64
    }
}

/// A single fixed-point number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FxpValue {
    pub mantissa: i64,
    pub fmt: QFormat,
}

impl FxpValue {
    pub fn new(mantissa: i64, fmt: QFormat) -> Self {
        Self { mantissa, fmt }
    }

    pub fn to_real(self) -> f64 {
        self.fmt.to_real(self.mantissa)
    }
}

/// Where the rounding happens inside a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoundingStrategy {
    /// Round every product back to `N` bits, then add with saturation.
    PerOperation,
    /// Accumulate exact products and round once at the end.
    AtEnd,
}

impl RoundingStrategy {
    pub const ALL: [RoundingStrategy; 2] = [RoundingStrategy::PerOperation, RoundingStrategy::AtEnd];

    pub fn as_str(self) -> &'static str {
        match self {
            RoundingStrategy::PerOperation => "per-operation",
            RoundingStrategy::AtEnd => "at-end",
        }
    }
}

impl std::fmt::Display for RoundingStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RoundingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-operation" | "per-op" | "beginning" => Ok(RoundingStrategy::PerOperation),
            "at-end" | "end" => Ok(RoundingStrategy::AtEnd),
            other => Err(Error::Parse(format!("unknown rounding strategy `{other}`"))),
        }
    }
}

/// Number of saturation events seen by one execution stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OverflowCounter {
    count: u64,
}

impl OverflowCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn record(&mut self) {
        self.count += 1;
    }

    /// Folds another stream's counter into this one.
    pub fn merge(&mut self, other: &OverflowCounter) {
        self.count += other.count;
    }

    /// Clamps `mantissa` to `±one`, recording an event if it was out of range.
    #[inline]
    pub fn saturate(&mut self, mantissa: i64, one: i64) -> i64 {
        if mantissa > one {
            self.count += 1;
            one
        } else if mantissa < -one {
            self.count += 1;
            -one
        } else {
            mantissa
        }
    }

    #[inline]
    pub fn saturate_wide(&mut self, mantissa: i128, one: i64) -> i64 {
        let one_w = one as i128;
        if mantissa > one_w {
            self.count += 1;
            one
        } else if mantissa < -one_w {
            self.count += 1;
            -one
        } else {
            mantissa as i64
        }
    }
}

/// `round(value / 2^shift)`, ties away from zero.
#[inline]
pub fn round_shift(value: i64, shift: u32) -> i64 {
    if shift == 0 {
        return value;
    }
    let half = 1i64 << (shift - 1);
    if value >= 0 {
        (value + half) >> shift
    } else {
        -((-value + half) >> shift)
    }
}

/// Wide-accumulator variant of [`round_shift`].
#[inline]
pub fn round_shift_wide(value: i128, shift: u32) -> i128 {
    if shift == 0 {
        return value;
    }
    let half = 1i128 << (shift - 1);
    if value >= 0 {
        (value + half) >> shift
    } else {
        -((-value + half) >> shift)
    }
}

/// `round(x)`, ties away from zero. `f64::round` already has this tie rule.
fn round_real(x: f64) -> f64 {
    x.round()
}

/// Converts a real number to fixed point, saturating to `±1.0`.
pub fn to_fixed(x: f64, fmt: QFormat, ctr: &mut OverflowCounter) -> FxpValue {
    let one = fmt.one();
    let scaled = round_real(x * one as f64);
    let mantissa = if scaled.is_nan() {
        0
    } else if scaled > one as f64 {
        ctr.record();
        one
    } else if scaled < -(one as f64) {
        ctr.record();
        -one
    } else {
        scaled as i64
    };
    FxpValue::new(mantissa, fmt)
}

/// Saturating addition.
///
/// # Panics
///
/// If the operands have different formats.
pub fn fxp_add(a: FxpValue, b: FxpValue, ctr: &mut OverflowCounter) -> FxpValue {
    assert_eq!(a.fmt, b.fmt, "fxp_add: mismatched formats");
    let one = a.fmt.one();
    FxpValue::new(ctr.saturate(a.mantissa + b.mantissa, one), a.fmt)
}

/// Multiplication followed by a rounding shift of `N` positions.
///
/// # Panics
///
/// If the operands have different formats.
pub fn fxp_mul(a: FxpValue, b: FxpValue) -> FxpValue {
    assert_eq!(a.fmt, b.fmt, "fxp_mul: mismatched formats");
    let n = a.fmt.frac_bits();
    FxpValue::new(round_shift(a.mantissa * b.mantissa, n), a.fmt)
}

/// The 3×3 scalar product computed by one convolution block.
///
/// # Panics
///
/// If the 18 operands do not share one format.
pub fn dot9(
    pixels: &[FxpValue; 9],
    weights: &[FxpValue; 9],
    strategy: RoundingStrategy,
    ctr: &mut OverflowCounter,
) -> FxpValue {
    let fmt = pixels[0].fmt;
    assert!(
        pixels.iter().chain(weights.iter()).all(|v| v.fmt == fmt),
        "dot9: operands must share one format"
    );
    match strategy {
        RoundingStrategy::PerOperation => {
            let mut acc = fxp_mul(pixels[0], weights[0]);
            for (p, w) in pixels.iter().zip(weights.iter()).skip(1) {
                acc = fxp_add(acc, fxp_mul(*p, *w), ctr);
            }
            acc
        }
        RoundingStrategy::AtEnd => {
            let exact: i128 = pixels
                .iter()
                .zip(weights.iter())
                .map(|(p, w)| p.mantissa as i128 * w.mantissa as i128)
                .sum();
            let rounded = round_shift_wide(exact, fmt.frac_bits());
            FxpValue::new(ctr.saturate_wide(rounded, fmt.one()), fmt)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q12() -> QFormat {
        QFormat::new(12).unwrap()
    }

    fn v(m: i64) -> FxpValue {
        FxpValue::new(m, q12())
    }

    #[test]
    fn to_fixed_examples() {
        let mut ctr = OverflowCounter::new();
        assert_eq!(to_fixed(0.5, q12(), &mut ctr).mantissa, 2048);
        assert_eq!(to_fixed(1.0, q12(), &mut ctr).mantissa, 4096);
        assert_eq!(to_fixed(0.3, q12(), &mut ctr).mantissa, 1229);
        assert_eq!(to_fixed(-1.0, q12(), &mut ctr).mantissa, -4096);
        assert_eq!(ctr.count(), 0);
    }

    #[test]
    fn to_fixed_saturates_and_counts() {
        let mut ctr = OverflowCounter::new();
        assert_eq!(to_fixed(1.5, q12(), &mut ctr).mantissa, 4096);
        assert_eq!(to_fixed(-1.01, q12(), &mut ctr).mantissa, -4096);
        assert_eq!(ctr.count(), 2);
    }

    #[test]
    fn to_fixed_ties_away_from_zero() {
        let mut ctr = OverflowCounter::new();
        let fmt = QFormat::new(1).unwrap();
        assert_eq!(to_fixed(0.25, fmt, &mut ctr).mantissa, 1);
        assert_eq!(to_fixed(-0.25, fmt, &mut ctr).mantissa, -1);
    }

    #[test]
    fn add_examples() {
        let mut ctr = OverflowCounter::new();
        assert_eq!(fxp_add(v(2048), v(1024), &mut ctr).mantissa, 3072);
        assert_eq!(ctr.count(), 0);
        assert_eq!(fxp_add(v(4000), v(500), &mut ctr).mantissa, 4096);
        assert_eq!(ctr.count(), 1);
        assert_eq!(fxp_add(v(-4000), v(-500), &mut ctr).mantissa, -4096);
        assert_eq!(ctr.count(), 2);
    }

    #[test]
    #[should_panic(expected = "mismatched formats")]
    fn add_rejects_mixed_formats() {
        let mut ctr = OverflowCounter::new();
        let other = FxpValue::new(1, QFormat::new(8).unwrap());
        fxp_add(v(1), other, &mut ctr);
    }

    #[test]
    fn mul_examples() {
        assert_eq!(fxp_mul(v(2048), v(2048)).mantissa, 1024);
        for m in [-4096, -77, 0, 1, 1229, 4096] {
            assert_eq!(fxp_mul(v(4096), v(m)).mantissa, m);
        }
        assert_eq!(fxp_mul(v(2047), v(1)).mantissa, 0);
        assert_eq!(fxp_mul(v(2048), v(1)).mantissa, 1);
        assert_eq!(fxp_mul(v(-2048), v(1)).mantissa, -1);
    }

    #[test]
    fn dot9_examples() {
        let mut ctr = OverflowCounter::new();
        let p = [v(4096); 9];
        let w = [v(455); 9];
        assert_eq!(dot9(&p, &w, RoundingStrategy::AtEnd, &mut ctr).mantissa, 4095);

        let p = [v(2047); 9];
        let w = [v(1); 9];
        assert_eq!(dot9(&p, &w, RoundingStrategy::PerOperation, &mut ctr).mantissa, 0);
        assert_eq!(dot9(&p, &w, RoundingStrategy::AtEnd, &mut ctr).mantissa, 4);

        let p = [v(3000), v(-17), v(4096), v(1), v(0), v(-4096), v(5), v(6), v(7)];
        for s in RoundingStrategy::ALL {
            assert_eq!(dot9(&p, &[v(0); 9], s, &mut ctr).mantissa, 0);
        }
        assert_eq!(ctr.count(), 0);
    }

    #[test]
    fn dot9_saturates() {
        let mut ctr = OverflowCounter::new();
        let p = [v(4096); 9];
        let w = [v(4096); 9];
        assert_eq!(dot9(&p, &w, RoundingStrategy::AtEnd, &mut ctr).mantissa, 4096);
        assert_eq!(ctr.count(), 1);
        let mut ctr = OverflowCounter::new();
        assert_eq!(dot9(&p, &w, RoundingStrategy::PerOperation, &mut ctr).mantissa, 4096);
        assert_eq!(ctr.count(), 8);
    }

    #[test]
    fn counter_merge_adds() {
        let mut a = OverflowCounter::new();
        a.record();
        let mut b = OverflowCounter::new();
        b.record();
        b.record();
        a.merge(&b);
        assert_eq!(a.count(), 3);
    }

    #[test]
    fn format_bounds() {
        assert!(QFormat::new(0).is_err());
        assert!(QFormat::new(MAX_FRAC_BITS + 1).is_err());
        assert_eq!(q12().field_width(), 14);
    }

    #[test]
    fn strategy_parse() {
        assert_eq!("at-end".parse::<RoundingStrategy>().unwrap(), RoundingStrategy::AtEnd);
        assert_eq!(
            "per-operation".parse::<RoundingStrategy>().unwrap(),
            RoundingStrategy::PerOperation
        );
        assert!("sideways".parse::<RoundingStrategy>().is_err());
    }
}

//! Branch-free `exp`, `sigmoid`, and `tanh` for the activation hot loops.
//!
//! libm's versions are scalar calls; these compile to straight-line
//! arithmetic that the optimizer can vectorize. `exp` is accurate to a few
//! ulp over the clamped range used by the network.

/// Inputs to `exp` and `sigmoid` are clamped to `±EXP_CLAMP`.
pub const EXP_CLAMP: f64 = 60.0;

const LOG2E: f64 = std::f64::consts::LOG2_E;
#[allow(clippy::excessive_precision)]
const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
#[allow(clippy::excessive_precision)]
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
// Adding 1.5·2^52 rounds to the nearest integer and leaves it in the low
// mantissa bits.
const ROUND: f64 = 6_755_399_441_055_744.0;

/// `e^x` for `|x| ≤ 700`.
#[inline(always)]
fn exp_unclamped(x: f64) -> f64 {
    let shifted = x * LOG2E + ROUND;
    let n = shifted - ROUND;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    // Taylor series to degree 13; |r| ≤ ln2/2 keeps the remainder below 1e-17.
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let k = shifted.to_bits().wrapping_sub(ROUND.to_bits());
    p * f64::from_bits(k.wrapping_add(1023) << 52)
}

/// `e^x` with the input clamped to `±EXP_CLAMP`.
#[inline]
pub fn exp(x: f64) -> f64 {
    exp_unclamped(x.clamp(-EXP_CLAMP, EXP_CLAMP))
}

/// `1 / (1 + e^-x)` with the input clamped to `±EXP_CLAMP`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    // tanh(20) rounds to 1.
    let x = x.clamp(-20.0, 20.0);
    let e = exp_unclamped(2.0 * x);
    let wide = (e - 1.0) / (e + 1.0);
    // Near zero the quotient cancels; the odd series is exact to 1e-19 there.
    let x2 = x * x;
    let series = x * (1.0 + x2 * (-1.0 / 3.0 + x2 * (2.0 / 15.0 + x2 * (-17.0 / 315.0))));
    if x.abs() < 0.01 {
        series
    } else {
        wide
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> impl Iterator<Item = f64> {
        (-120_000..=120_000).map(|i| i as f64 * 5e-4)
    }

    #[test]
    fn exp_matches_libm() {
        for x in grid() {
            let (a, b) = (exp(x), x.clamp(-EXP_CLAMP, EXP_CLAMP).exp());
            assert!(((a - b) / b).abs() < 1e-15, "{x}: {a} vs {b}");
        }
        assert_eq!(exp(0.0), 1.0);
        assert_eq!(exp(1e6), EXP_CLAMP.exp());
    }

    #[test]
    fn tanh_and_sigmoid_match_libm() {
        for x in grid().chain([1e-12, -3e-7, 0.00999, 0.01001]) {
            assert!((tanh(x) - x.tanh()).abs() < 1e-15, "{x}");
            assert!((tanh(x) - x.tanh()).abs() <= 1e-14 * x.abs(), "{x}");
            let s = 1.0 / (1.0 + (-x.clamp(-EXP_CLAMP, EXP_CLAMP)).exp());
            assert!((sigmoid(x) - s).abs() < 1e-15, "{x}");
        }
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}

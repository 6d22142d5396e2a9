//! Portable transcendental functions.
//!
//! Reports and checkpoints promise byte-identical content for a fixed seed,
//! across runs *and* across platforms. `f64::exp`/`ln`/`sin` go through the
//! platform libm, which is allowed to differ by an ulp between glibc, musl
//! and macOS. The functions here use only IEEE-754-exact operations
//! (`+ - * /`, `sqrt`, `round`, bit twiddling) with fixed-length series, so
//! every platform computes the same bits.
//!
//! Accuracy is within a couple of ulps of correctly rounded, which is far
//! tighter than any tolerance in this crate.

use std::f64::consts::{LN_10, LOG2_E, SQRT_2, TAU};

// ln(2) split into an exact high part and a correction, musl-style.
const LN2_HI: f64 = 6.931_471_803_691_238e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;

// Residual of 2*pi beyond the nearest f64, for argument reduction.
const TAU_LO: f64 = 2.449_293_598_294_706_4e-16;

/// Natural logarithm.
pub fn ln(x: f64) -> f64 {
    if x.is_nan() || x < 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    if x == f64::INFINITY {
        return f64::INFINITY;
    }
    let mut x = x;
    let mut k: i64 = 0;
    if x < f64::MIN_POSITIVE {
        // Scale subnormals into the normal range; 2^54 is exact.
        x *= f64::from_bits(0x4350_0000_0000_0000);
        k -= 54;
    }
    let bits = x.to_bits();
    k += ((bits >> 52) & 0x7ff) as i64 - 1023;
    // Mantissa in [1, 2).
    let mut m = f64::from_bits((bits & 0x000f_ffff_ffff_ffff) | 0x3ff0_0000_0000_0000);
    if m > SQRT_2 {
        m *= 0.5;
        k += 1;
    }
    // ln(m) = 2 atanh(t), t in (-0.172, 0.172].
    let t = (m - 1.0) / (m + 1.0);
    let t2 = t * t;
    let mut series = 1.0 / 25.0;
    let mut n = 23i64;
    while n >= 1 {
        series = series * t2 + 1.0 / n as f64;
        n -= 2;
    }
    let ln_m = 2.0 * t * series;
    k as f64 * LN2_HI + (k as f64 * LN2_LO + ln_m)
}

/// Base-10 logarithm.
pub fn log10(x: f64) -> f64 {
    ln(x) / LN_10
}

/// Exponential.
pub fn exp(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x > 709.782712893384 {
        return f64::INFINITY;
    }
    if x < -745.133219101941 {
        return 0.0;
    }
    let k = (x * LOG2_E).round();
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor on |r| <= ln(2)/2; term 18 is below 1e-24 relative.
    let mut p = INV_FACT[17];
    for n in (0..17).rev() {
        p = p * r + INV_FACT[n];
    }
    scale_by_pow2(p, k as i64)
}

const INV_FACT: [f64; 18] = [
    1.0,
    1.0,
    1.0 / 2.0,
    1.0 / 6.0,
    1.0 / 24.0,
    1.0 / 120.0,
    1.0 / 720.0,
    1.0 / 5040.0,
    1.0 / 40320.0,
    1.0 / 362880.0,
    1.0 / 3628800.0,
    1.0 / 39916800.0,
    1.0 / 479001600.0,
    1.0 / 6227020800.0,
    1.0 / 87178291200.0,
    1.0 / 1307674368000.0,
    1.0 / 20922789888000.0,
    1.0 / 355687428096000.0,
];

/// x * 2^k via exponent arithmetic; two steps so subnormal results stay exact
/// up to the single IEEE rounding they require.
fn scale_by_pow2(x: f64, k: i64) -> f64 {
    let k1 = k / 2;
    let k2 = k - k1;
    x * pow2(k1) * pow2(k2)
}

fn pow2(k: i64) -> f64 {
    debug_assert!((-1022..=1023).contains(&k));
    f64::from_bits(((1023 + k) as u64) << 52)
}

/// Logistic sigmoid, stable on both tails.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Hyperbolic tangent.
pub fn tanh(x: f64) -> f64 {
    let t = exp(-2.0 * x.abs());
    let v = (1.0 - t) / (1.0 + t);
    if x < 0.0 {
        -v
    } else {
        v
    }
}

/// base^e for base > 0.
pub fn powf(base: f64, e: f64) -> f64 {
    exp(e * ln(base))
}

/// Sine, for arguments of moderate magnitude (positional encodings).
pub fn sin(x: f64) -> f64 {
    let r = reduce_tau(x);
    let r2 = r * r;
    let mut p = SIN_COEF[15];
    for n in (0..15).rev() {
        p = p * r2 + SIN_COEF[n];
    }
    r * p
}

/// Cosine, same domain notes as [`sin`].
pub fn cos(x: f64) -> f64 {
    let r = reduce_tau(x);
    let r2 = r * r;
    let mut p = COS_COEF[15];
    for n in (0..15).rev() {
        p = p * r2 + COS_COEF[n];
    }
    p
}

fn reduce_tau(x: f64) -> f64 {
    let n = (x / TAU).round();
    (x - n * TAU) - n * TAU_LO
}

/// Max-subtracted softmax in f64 on top of the portable [`exp`].
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    debug_assert!(!xs.is_empty());
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| exp(x - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

const SIN_COEF: [f64; 16] = sin_coefficients();
const COS_COEF: [f64; 16] = cos_coefficients();

const fn sin_coefficients() -> [f64; 16] {
    // (-1)^n / (2n+1)!
    let mut c = [0.0f64; 16];
    let mut fact = 1.0f64;
    let mut n = 0usize;
    let mut sign = 1.0f64;
    while n < 16 {
        // fact = (2n+1)! built incrementally
        if n > 0 {
            fact *= (2 * n) as f64;
            fact *= (2 * n + 1) as f64;
        }
        c[n] = sign / fact;
        sign = -sign;
        n += 1;
    }
    c
}

const fn cos_coefficients() -> [f64; 16] {
    // (-1)^n / (2n)!
    let mut c = [0.0f64; 16];
    let mut fact = 1.0f64;
    let mut n = 0usize;
    let mut sign = 1.0f64;
    while n < 16 {
        if n > 0 {
            fact *= (2 * n - 1) as f64;
            fact *= (2 * n) as f64;
        }
        c[n] = sign / fact;
        sign = -sign;
        n += 1;
    }
    c
}

//! Small numeric helpers shared across the crate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Gaussian tail probability `Q(x) = P(Z > x)` for a standard normal `Z`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// `ln(e^a + e^b)` evaluated without overflow (the exact max* operator).
#[inline]
pub fn max_star(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + e^{-x})`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln cosh(x) + ln 2`, i.e. `|x| + ln(1 + e^{-2|x|})`, together with `tanh(x)`.
///
/// The constant offset cancels in every difference the detector takes.
#[inline]
pub fn ln_cosh_shifted(x: f64) -> (f64, f64) {
    let ax = x.abs();
    let e = (-2.0 * ax).exp();
    let t = (1.0 - e) / (1.0 + e);
    (ax + e.ln_1p(), t.copysign(x))
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Binomial coefficient as a float (exact for the small arguments used here).
pub fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// splitmix64 finalizer, used to derive independent stream identifiers.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A reproducible RNG for one unit of work, addressed by `(seed, path...)`.
///
/// Each distinct path yields an independent ChaCha stream, so block `k` of a
/// Monte Carlo run draws the same numbers no matter which worker executes it.
pub fn stream_rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = path
        .iter()
        .fold(0x5EED_u64, |acc, &p| mix64(acc ^ mix64(p)));
    rng.set_stream(stream);
    rng
}

/// Hard decision on an LLR: positive favors bit 0 / symbol +1.
#[inline]
pub fn llr_to_bit(llr: f64) -> u8 {
    u8::from(llr < 0.0)
}

#[inline]
pub fn bit_to_symbol(bit: u8) -> f64 {
    if bit == 0 {
        1.0
    } else {
        -1.0
    }
}

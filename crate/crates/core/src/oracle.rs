//! Brute-force reference computations used to validate the fast paths.
//!
//! Everything here favours obviousness over speed: exhaustive sums over all
//! sequences, dense message matrices, direct numerical integration.

use std::f64::consts::PI;

use rand::Rng;

use crate::coding::{cc_encode, CcSpec};
use crate::error::{check_len, Error, Result};
use crate::ftn::{GramMatrix, IsiProfile, PulseSpec};
use crate::math::{max_star, softplus};
use crate::spda::{channel_llr, clip_llr, edge_message};

/// Largest block the exhaustive sequence oracles accept.
pub const MAX_BRUTE_FORCE_N: usize = 20;

/// APP LLRs of info and code bits by summing over every codeword.
pub fn brute_force_cc_app(channel: &[f64], prior: &[f64], spec: &CcSpec) -> (Vec<f64>, Vec<f64>) {
    let k = prior.len();
    assert!(k <= 16, "exhaustive codeword sum limited to K <= 16");
    let n = spec.code_len(k);
    let mut info_acc = vec![[f64::NEG_INFINITY; 2]; k];
    let mut code_acc = vec![[f64::NEG_INFINITY; 2]; n];
    for word in 0u32..(1 << k) {
        let bits: Vec<u8> = (0..k).map(|i| ((word >> i) & 1) as u8).collect();
        let code = cc_encode(&bits, spec);
        let half = |b: u8, l: f64| if b == 0 { l / 2.0 } else { -l / 2.0 };
        let metric: f64 = code
            .iter()
            .zip(channel)
            .map(|(&c, &l)| half(c, l))
            .sum::<f64>()
            + bits
                .iter()
                .zip(prior)
                .map(|(&b, &l)| half(b, l))
                .sum::<f64>();
        for (i, &b) in bits.iter().enumerate() {
            let slot = &mut info_acc[i][b as usize];
            *slot = max_star(*slot, metric);
        }
        for (i, &c) in code.iter().enumerate() {
            let slot = &mut code_acc[i][c as usize];
            *slot = max_star(*slot, metric);
        }
    }
    let llr = |acc: Vec<[f64; 2]>| acc.into_iter().map(|[a, b]| a - b).collect();
    (llr(info_acc), llr(code_acc))
}

fn check_brute_force(n: usize) -> Result<()> {
    if n > MAX_BRUTE_FORCE_N {
        return Err(Error::InvalidParameter(format!(
            "exhaustive search limited to N <= {MAX_BRUTE_FORCE_N}, got {n}"
        )));
    }
    Ok(())
}

fn symbols(word: u32, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if (word >> i) & 1 == 0 { 1.0 } else { -1.0 })
        .collect()
}

/// Ungerboeck log-likelihood `(x^T y - x^T G x / 2) / sigma^2`.
fn ungerboeck_metric(x: &[f64], y: &[f64], gram: &GramMatrix, sigma2: f64) -> f64 {
    let gx = gram.mul_vec(x);
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let xgx: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum();
    (xy - 0.5 * xgx) / sigma2
}

/// Exact symbol APP LLRs by marginalizing over all `2^N` sequences.
pub fn brute_force_map(
    y: &[f64],
    gram: &GramMatrix,
    sigma2: f64,
    prior: &[f64],
) -> Result<Vec<f64>> {
    let n = y.len();
    check_brute_force(n)?;
    check_len("received block", gram.order(), n)?;
    check_len("prior LLRs", n, prior.len())?;
    let mut acc = vec![[f64::NEG_INFINITY; 2]; n];
    for word in 0u32..(1 << n) {
        let x = symbols(word, n);
        let pr: f64 = x.iter().zip(prior).map(|(a, l)| a * l / 2.0).sum();
        let metric = ungerboeck_metric(&x, y, gram, sigma2) + pr;
        for i in 0..n {
            let slot = &mut acc[i][((word >> i) & 1) as usize];
            *slot = max_star(*slot, metric);
        }
    }
    Ok(acc.into_iter().map(|[a, b]| a - b).collect())
}

/// Maximum-likelihood symbol sequence by exhaustive search.
///
/// Candidates are visited in Gray-code order so each step updates the metric
/// in `O(N)`.
pub fn brute_force_ml(y: &[f64], gram: &GramMatrix, sigma2: f64) -> Result<Vec<f64>> {
    let n = y.len();
    check_brute_force(n)?;
    check_len("received block", gram.order(), n)?;
    if !(sigma2 > 0.0) {
        return Err(Error::Degenerate("ML metric needs sigma^2 > 0".into()));
    }
    let mut x = vec![1.0; n];
    let mut gx = gram.mul_vec(&x);
    // 2 * metric * sigma^2 = 2 x^T y - x^T G x
    let mut metric: f64 = x.iter().zip(y).map(|(a, b)| 2.0 * a * b).sum::<f64>()
        - x.iter().zip(&gx).map(|(a, b)| a * b).sum::<f64>();
    let mut best = (metric, x.clone());
    for step in 1u32..(1 << n) {
        let k = step.trailing_zeros() as usize;
        let old = x[k];
        // Flipping x_k by delta = -2 x_k.
        let delta = -2.0 * old;
        metric += 2.0 * delta * y[k] - 2.0 * delta * gx[k] - delta * delta * gram.get(k, k);
        x[k] = -old;
        for (j, g) in gx.iter_mut().enumerate() {
            *g += gram.get(j, k) * delta;
        }
        if metric > best.0 {
            best = (metric, x.clone());
        }
    }
    Ok(best.1)
}

/// Conventional SPDA with dense `N x N` message matrices, written directly from
/// the per-node update rules. Returns `Q^1..=Q^{m_max}`.
pub fn reference_spda(
    y: &[f64],
    prior: &[f64],
    profile: &IsiProfile,
    le: usize,
    sigma2: f64,
    iterations: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = y.len();
    check_len("prior LLRs", n, prior.len())?;
    let t = channel_llr(y, sigma2)?;
    let theta: Vec<f64> = (0..=le).map(|d| profile.tap(d as isize) / sigma2).collect();
    let neighbours = |i: usize| {
        let mut out = Vec::new();
        for d in 1..=le {
            if i >= d {
                out.push((i - d, d));
            }
            if i + d < n {
                out.push((i + d, d));
            }
        }
        out
    };
    let mut app: Vec<f64> = (0..n).map(|i| clip_llr(prior[i] + t[i])).collect();
    // q[i][j]: message into i from the factor shared with j.
    let mut q = vec![vec![0.0; n]; n];
    let mut out = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let mut p = vec![vec![0.0; n]; n];
        for i in 0..n {
            for (j, _) in neighbours(i) {
                p[j][i] = clip_llr(app[j] - q[j][i]);
            }
        }
        for i in 0..n {
            for (j, d) in neighbours(i) {
                q[i][j] = clip_llr(edge_message(p[j][i], theta[d]));
            }
        }
        for i in 0..n {
            let mut u = 0.0;
            for (j, _) in neighbours(i) {
                u += q[i][j];
            }
            app[i] = clip_llr(prior[i] + t[i] + u);
        }
        out.push(app.clone());
    }
    Ok(out)
}

/// Unit-energy root-raised-cosine pulse, symbol period 1.
pub fn rrc_pulse(t: f64, alpha: f64) -> f64 {
    if t == 0.0 {
        return 1.0 - alpha + 4.0 * alpha / PI;
    }
    if alpha > 0.0 && ((4.0 * alpha * t).abs() - 1.0).abs() < 1e-12 {
        let x = PI / (4.0 * alpha);
        return alpha / 2f64.sqrt() * ((1.0 + 2.0 / PI) * x.sin() + (1.0 - 2.0 / PI) * x.cos());
    }
    let num = (PI * t * (1.0 - alpha)).sin() + 4.0 * alpha * t * (PI * t * (1.0 + alpha)).cos();
    num / (PI * t * (1.0 - (4.0 * alpha * t).powi(2)))
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut x = (PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// ISI taps by numerically integrating `int h(t) h(t - i tau) dt`.
pub fn quadrature_taps(pulse: &PulseSpec) -> Vec<f64> {
    let rule = gauss_legendre(16);
    let (lo, hi, width) = (-200.0, 200.0, 0.25);
    let cells = ((hi - lo) / width) as usize;
    (0..=pulse.span)
        .map(|i| {
            let shift = i as f64 * pulse.tau;
            let mut acc = 0.0;
            for c in 0..cells {
                let mid = lo + (c as f64 + 0.5) * width;
                for &(x, w) in &rule {
                    let t = mid + 0.5 * width * x;
                    acc += 0.5
                        * width
                        * w
                        * rrc_pulse(t, pulse.rolloff)
                        * rrc_pulse(t - shift, pulse.rolloff);
                }
            }
            acc
        })
        .collect()
}

/// Monte Carlo mutual information between a bit and a consistent Gaussian LLR
/// of standard deviation `sigma`.
pub fn mc_mutual_information<R: Rng + ?Sized>(sigma: f64, samples: usize, rng: &mut R) -> f64 {
    use rand_distr::{Distribution, Normal};
    if sigma == 0.0 {
        return 0.0;
    }
    let normal = Normal::new(sigma * sigma / 2.0, sigma).expect("finite sigma");
    let mut acc = 0.0;
    for _ in 0..samples {
        // Symbol +1 by symmetry.
        let l: f64 = normal.sample(rng);
        acc += softplus(-l);
    }
    1.0 - acc / samples as f64 / std::f64::consts::LN_2
}

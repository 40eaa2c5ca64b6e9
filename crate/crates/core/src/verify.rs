//! Self-checks run by `ftnlab verify`: each compares a fast path against an
//! exhaustive or numerical oracle and reports the worst deviation seen.

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::analysis::{sigma_r_oracle, sigma_rl, ErrorSequence};
use crate::coding::{cc_bcjr_decode, CcSpec, MapKernel};
use crate::error::Result;
use crate::ftn::{build_gram, isi_taps, IsiProfile, PulseSpec};
use crate::math::stream_rng;
use crate::oracle::{brute_force_cc_app, brute_force_map};
use crate::spda::{FgConfig, SpdaDetector};
use crate::trainer::{gradient_check, j_inverse, j_value};
use crate::turbo::truncated_bcjr_app;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed deviation (or violation count) against `tolerance`.
    pub metric: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, metric: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name,
            passed: metric <= tolerance,
            metric,
            tolerance,
            detail,
        }
    }
}

/// Reverse-mode DL-SPDA gradients against central differences.
pub fn check_gradients(seed: u64) -> Result<CheckResult> {
    let g = gradient_check(20, 2, 50, 1e-4, seed)?;
    Ok(CheckResult::new(
        "gradient check",
        g.max_rel_error,
        1e-4,
        format!("{} parameters, N = 20, m_max = 2", g.checked),
    ))
}

/// Residual-ISI lower bound never exceeds the sampled variance (+3 stderr).
pub fn check_residual_bound(sequences: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = stream_rng(seed, &[0x7e0]);
    let n = 48;
    let mut violations = 0usize;
    let mut checked = 0usize;
    for &tau in &[0.5, 0.6] {
        let g = build_gram(&isi_taps(&PulseSpec::new(tau, 0.3, 11)?), n)?;
        for le in [2usize, 3] {
            let f = g.truncate(le)?.into_inner();
            for _ in 0..sequences / 4 {
                let w = rng.gen_range(1..=8);
                let sup: Vec<(usize, i8)> = sample_indices(&mut rng, n, w)
                    .into_iter()
                    .map(|p| (p, if rng.gen::<bool>() { 1 } else { -1 }))
                    .collect();
                let e = ErrorSequence::from_support(n, &sup)?;
                let lo = sigma_rl(&e, &g, &f, 2.0)?;
                let est = sigma_r_oracle(&e, &g, &f, 2.0, &mut rng, 1000)?;
                if lo > est.mean + 3.0 * est.stderr {
                    violations += 1;
                }
                checked += 1;
            }
        }
    }
    Ok(CheckResult::new(
        "residual-ISI lower bound",
        violations as f64,
        0.0,
        format!("{violations} violations in {checked} sequences"),
    ))
}

/// CC log-MAP vs exhaustive codeword sums, and the trellis FTN detector vs
/// exhaustive MAP when the detector sees every tap.
pub fn check_bcjr(trials: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = stream_rng(seed, &[0xbc]);
    let spec = CcSpec::CC_7_5;
    let mut worst_cc: f64 = 0.0;
    for _ in 0..trials {
        let ch: Vec<f64> = (0..spec.code_len(8))
            .map(|_| rng.gen_range(-4.0..4.0))
            .collect();
        let pr: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let fast = cc_bcjr_decode(&ch, &pr, &spec, MapKernel::LogMap)?;
        let (info, code) = brute_force_cc_app(&ch, &pr, &spec);
        for (a, b) in fast
            .info_app
            .iter()
            .zip(&info)
            .chain(fast.code_app.iter().zip(&code))
        {
            worst_cc = worst_cc.max((a - b).abs());
        }
    }
    let full = isi_taps(&PulseSpec::new(0.6, 0.3, 11)?);
    let mut worst_isi: f64 = 0.0;
    for t in 0..trials {
        let profile = full.truncated(1 + t % 3)?;
        let gram = build_gram(&profile, 10)?;
        let y: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let pr: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sigma2 = rng.gen_range(0.3..1.5);
        let fast = truncated_bcjr_app(&y, &pr, profile.one_sided(), sigma2, 0)?;
        let exact = brute_force_map(&y, &gram, sigma2, &pr)?;
        for (a, b) in fast.iter().zip(&exact) {
            worst_isi = worst_isi.max((a - b).abs());
        }
    }
    // Tolerance of the looser comparison; the CC part must also meet 1e-9.
    let metric = if worst_cc <= 1e-9 {
        worst_isi
    } else {
        f64::INFINITY
    };
    Ok(CheckResult::new(
        "BCJR vs brute force",
        metric,
        1e-6,
        format!("CC max |dLLR| {worst_cc:.2e}, trellis max |dLLR| {worst_isi:.2e}"),
    ))
}

/// SPDA on two-symbol graphs (a tree) against exhaustive APPs.
pub fn check_spda_tree(trials: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = stream_rng(seed, &[0x5bda]);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let profile = IsiProfile::from_one_sided(vec![1.0, rng.gen_range(-0.6..0.6)])?;
        let sigma2 = rng.gen_range(0.2..2.0);
        let y: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let pr: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = FgConfig {
            n: 2,
            le: 1,
            iterations: 3,
            use_nn: false,
        };
        let app = SpdaDetector::new(&profile, cfg, None)?
            .trajectory(&y, &pr, sigma2)?
            .pop()
            .unwrap_or_default();
        let exact = brute_force_map(&y, &build_gram(&profile, 2)?, sigma2, &pr)?;
        for (a, b) in app.iter().zip(&exact) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(CheckResult::new(
        "SPDA two-symbol exactness",
        worst,
        1e-6,
        format!("{trials} instances"),
    ))
}

/// `J^-1(J(sigma)) = sigma` across the training range.
pub fn check_j_round_trip() -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for i in 1..=60 {
        let sigma = i as f64 * 0.1;
        worst = worst.max((j_inverse(j_value(sigma))? - sigma).abs());
    }
    Ok(CheckResult::new(
        "J-function round trip",
        worst,
        1e-3,
        "sigma in 0.1..=6.0".into(),
    ))
}

/// Runs every check; `quick` shrinks the sample counts.
pub fn run_all(quick: bool, seed: u64) -> Result<Vec<CheckResult>> {
    let scale = if quick { 1 } else { 5 };
    Ok(vec![
        check_gradients(seed)?,
        check_residual_bound(200 * scale, seed)?,
        check_bcjr(20 * scale, seed)?,
        check_spda_tree(100 * scale, seed)?,
        check_j_round_trip()?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        for c in run_all(true, 1).unwrap() {
            assert!(c.passed, "{c:?}");
        }
    }
}

//! Turbo equalization: a soft-in soft-out FTN detector exchanging extrinsic
//! LLRs with the convolutional decoder through the interleaver, plus the
//! truncated-BCJR detector on the Ungerboeck trellis.

use crate::coding::{cc_bcjr_decode, CcSpec, DecoderOutput, Interleaver, MapKernel};
use crate::error::{check_len, Error, Result};
use crate::ftn::IsiProfile;
use crate::math::max_star;
use crate::spda::{channel_llr, SpdaDetector};

/// Largest truncation the trellis detector accepts (`2^20` states).
pub const MAX_TRELLIS_MEMORY: usize = 20;

/// Any detector that maps observations and prior LLRs to extrinsic LLRs.
///
/// `y` covers the whole transmitted frame, including `guard()` known `+1`
/// symbols at each end; `prior` and the result cover only the data symbols.
pub trait SoftDetector: Send + Sync {
    fn extrinsic(&self, y: &[f64], sigma2: f64, prior: &[f64]) -> Result<Vec<f64>>;

    /// Known `+1` symbols transmitted before and after the data.
    fn guard(&self) -> usize {
        0
    }
}

/// Memoryless detector returning the channel LLRs `2 y / sigma^2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ChannelOnly;

impl SoftDetector for ChannelOnly {
    fn extrinsic(&self, y: &[f64], sigma2: f64, prior: &[f64]) -> Result<Vec<f64>> {
        check_len("prior LLRs", y.len(), prior.len())?;
        channel_llr(y, sigma2)
    }
}

impl SoftDetector for SpdaDetector {
    fn extrinsic(&self, y: &[f64], sigma2: f64, prior: &[f64]) -> Result<Vec<f64>> {
        self.detect(y, prior, sigma2)
    }
}

/// Exact log-MAP over the `2^{L_E}`-state trellis of the band-`L_E` model.
#[derive(Debug, Clone)]
pub struct TruncatedBcjr {
    taps: Vec<f64>,
    guard: usize,
}

impl TruncatedBcjr {
    /// `guard` is 0 or `L_E`: the number of `+1` termination symbols per side.
    pub fn new(profile: &IsiProfile, le: usize, guard: usize) -> Result<Self> {
        if le > MAX_TRELLIS_MEMORY {
            return Err(Error::BudgetExceeded(format!(
                "truncated BCJR with L_E = {le} needs 2^{le} states (limit 2^{MAX_TRELLIS_MEMORY})"
            )));
        }
        let taps = profile.truncated(le)?.one_sided().to_vec();
        Ok(Self { taps, guard })
    }

    pub fn le(&self) -> usize {
        self.taps.len() - 1
    }
}

impl SoftDetector for TruncatedBcjr {
    fn extrinsic(&self, y: &[f64], sigma2: f64, prior: &[f64]) -> Result<Vec<f64>> {
        let app = truncated_bcjr_app(y, prior, &self.taps, sigma2, self.guard)?;
        Ok(app.iter().zip(prior).map(|(a, p)| a - p).collect())
    }

    fn guard(&self) -> usize {
        self.guard
    }
}

/// Extrinsic LLRs `APP - prior` of the truncated-BCJR detector.
pub fn truncated_bcjr_detect(
    y: &[f64],
    prior: &[f64],
    profile: &IsiProfile,
    le: usize,
    sigma2: f64,
    guard: usize,
) -> Result<Vec<f64>> {
    TruncatedBcjr::new(profile, le, guard)?.extrinsic(y, sigma2, prior)
}

/// Data-symbol APP LLRs of the trellis detector.
///
/// Branch metric for symbol `x_n` leaving state `s`:
/// `[x_n (y_n - sum_l g_l x_{n-l}) - g_0 / 2] / sigma^2 + x_n prior_n / 2`.
/// Symbols before the frame start have zero coupling; guard symbols are forced
/// to `+1`.
pub fn truncated_bcjr_app(
    y: &[f64],
    prior: &[f64],
    taps: &[f64],
    sigma2: f64,
    guard: usize,
) -> Result<Vec<f64>> {
    let le = taps.len() - 1;
    let data = prior.len();
    check_len("received frame", data + 2 * guard, y.len())?;
    if !(sigma2 > 0.0) {
        return Err(Error::Degenerate(format!(
            "trellis detection needs sigma^2 > 0, got {sigma2}"
        )));
    }
    let len = y.len();
    let states = 1usize << le;
    let mask = states - 1;
    let neg = f64::NEG_INFINITY;
    let sym = |s: usize, k: usize| if (s >> k) & 1 == 0 { 1.0 } else { -1.0 };

    // ISI seen at step n from state s, with only `min(n, L_E)` real predecessors.
    let isi_table: Vec<Vec<f64>> = (0..=le)
        .map(|avail| {
            (0..states)
                .map(|s| (1..=avail).map(|l| taps[l] * sym(s, l - 1)).sum())
                .collect()
        })
        .collect();
    let forced = |n: usize| n < guard || n >= guard + data;
    let inv = 1.0 / sigma2;
    let half_g0 = 0.5 * taps[0];
    let branch = |n: usize, s: usize, bit: usize| -> f64 {
        if forced(n) && bit == 1 {
            return neg;
        }
        let x = if bit == 0 { 1.0 } else { -1.0 };
        let isi = isi_table[n.min(le)][s];
        let pr = if forced(n) {
            0.0
        } else {
            0.5 * x * prior[n - guard]
        };
        inv * (x * (y[n] - isi) - half_g0) + pr
    };
    let next = |s: usize, bit: usize| ((s << 1) | bit) & mask;

    let mut alpha = vec![neg; (len + 1) * states];
    alpha[0] = 0.0;
    for n in 0..len {
        let (cur, rest) = alpha.split_at_mut((n + 1) * states);
        let cur = &cur[n * states..];
        let nxt = &mut rest[..states];
        for s in 0..states {
            if cur[s] == neg {
                continue;
            }
            for bit in 0..2 {
                let g = branch(n, s, bit);
                if g == neg {
                    continue;
                }
                let t = next(s, bit);
                nxt[t] = max_star(nxt[t], cur[s] + g);
            }
        }
        let m = nxt.iter().cloned().fold(neg, f64::max);
        nxt.iter_mut().for_each(|v| *v -= m);
    }

    let mut beta_next = vec![0.0; states];
    let mut app = vec![0.0; data];
    for n in (0..len).rev() {
        let a = &alpha[n * states..(n + 1) * states];
        let mut beta = vec![neg; states];
        let mut acc = [neg; 2];
        for s in 0..states {
            for bit in 0..2 {
                let g = branch(n, s, bit);
                if g == neg {
                    continue;
                }
                let t = next(s, bit);
                if beta_next[t] == neg {
                    continue;
                }
                let gb = g + beta_next[t];
                beta[s] = max_star(beta[s], gb);
                if a[s] != neg {
                    acc[bit] = max_star(acc[bit], a[s] + gb);
                }
            }
        }
        if !forced(n) {
            app[n - guard] = acc[0] - acc[1];
        }
        let m = beta.iter().cloned().fold(neg, f64::max);
        beta.iter_mut().for_each(|v| *v -= m);
        beta_next = beta;
    }
    Ok(app)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TurboConfig {
    pub rho_max: usize,
    pub kernel: MapKernel,
}

impl Default for TurboConfig {
    fn default() -> Self {
        Self {
            rho_max: 1,
            kernel: MapKernel::LogMap,
        }
    }
}

/// Result of a turbo run: decoded bits plus the final decoder soft output.
#[derive(Debug, Clone, PartialEq)]
pub struct TurboOutput {
    pub bits: Vec<u8>,
    pub decoder: DecoderOutput,
    /// Hard decisions after each turbo iteration.
    pub per_iteration: Vec<Vec<u8>>,
}

/// Iterates detector -> deinterleave -> decoder -> interleave for `rho_max` rounds.
///
/// The detector receives only the decoder's extrinsic; the decoder receives
/// only the detector's extrinsic.
pub fn turbo_equalize(
    y: &[f64],
    sigma2: f64,
    detector: &dyn SoftDetector,
    interleaver: &Interleaver,
    spec: &CcSpec,
    cfg: TurboConfig,
) -> Result<TurboOutput> {
    if cfg.rho_max == 0 {
        return Err(Error::InvalidParameter("rho_max must be >= 1".into()));
    }
    let n = interleaver.len();
    let k = n / 2 - spec.memory;
    let mut prior = vec![0.0; n];
    let info_prior = vec![0.0; k];
    let mut per_iteration = Vec::with_capacity(cfg.rho_max);
    let mut last = None;
    for rho in 0..cfg.rho_max {
        let ext = detector.extrinsic(y, sigma2, &prior)?;
        let dec_in = interleaver.deinterleave(&ext)?;
        let out = cc_bcjr_decode(&dec_in, &info_prior, spec, cfg.kernel)?;
        per_iteration.push(out.hard_info());
        if rho + 1 < cfg.rho_max {
            prior = interleaver.interleave(&out.code_extrinsic)?;
        }
        last = Some(out);
    }
    let decoder = last.expect("at least one iteration");
    Ok(TurboOutput {
        bits: decoder.hard_info(),
        decoder,
        per_iteration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::cc_encode;
    use crate::ftn::{build_gram, isi_taps, modulate, FtnChannel, PulseSpec};
    use crate::math::stream_rng;
    use crate::oracle::brute_force_map;
    use rand::Rng;

    #[test]
    fn memoryless_trellis_is_channel_llr() {
        let profile = isi_taps(&PulseSpec::new(0.6, 0.3, 11).unwrap());
        let y = [0.3, -0.4, 1.0, 0.0];
        let ext = truncated_bcjr_detect(&y, &[0.7, 0.0, -1.0, 2.0], &profile, 0, 0.5, 0).unwrap();
        let llr = channel_llr(&y, 0.5).unwrap();
        for (a, b) in ext.iter().zip(&llr) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn nyquist_zero_prior_gives_channel_llr() {
        let profile = isi_taps(&PulseSpec::new(1.0, 0.3, 11).unwrap());
        let y = [0.3, -0.4, 1.0, 0.0, 2.5];
        let ext = truncated_bcjr_detect(&y, &[0.0; 5], &profile, 3, 0.8, 0).unwrap();
        for (a, b) in ext.iter().zip(channel_llr(&y, 0.8).unwrap()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn trellis_matches_exhaustive_map() {
        let mut rng = stream_rng(17, &[]);
        let full = isi_taps(&PulseSpec::new(0.6, 0.3, 11).unwrap());
        for le in [1usize, 2, 3] {
            let profile = full.truncated(le).unwrap();
            let gram = build_gram(&profile, 10).unwrap();
            for _ in 0..10 {
                let y: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let prior: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let app = truncated_bcjr_app(&y, &prior, profile.one_sided(), 0.7, 0).unwrap();
                let exact = brute_force_map(&y, &gram, 0.7, &prior).unwrap();
                for (a, b) in app.iter().zip(&exact) {
                    assert!((a - b).abs() < 1e-6, "le {le}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn guard_symbols_are_known() {
        let profile = isi_taps(&PulseSpec::new(0.6, 0.3, 11).unwrap());
        let le = 3;
        let data = [1.0, -1.0, -1.0, 1.0, -1.0, 1.0];
        let mut frame = vec![1.0; le];
        frame.extend_from_slice(&data);
        frame.extend(vec![1.0; le]);
        let g = build_gram(&profile.truncated(le).unwrap(), frame.len()).unwrap();
        let y = g.mul_vec(&frame);
        let ext = truncated_bcjr_detect(&y, &[0.0; 6], &profile, le, 0.05, le).unwrap();
        for (e, x) in ext.iter().zip(&data) {
            assert_eq!(e.signum(), *x);
        }
        assert!(truncated_bcjr_detect(&y, &[0.0; 5], &profile, le, 0.05, le).is_err());
        assert!(matches!(
            TruncatedBcjr::new(&profile, 21, 0),
            Err(Error::BudgetExceeded(_))
        ));
    }

    #[test]
    fn stub_detector_is_plain_coded_awgn() {
        let spec = CcSpec::CC_7_5;
        let il = Interleaver::new(2 * (30 + 2), 5);
        let mut rng = stream_rng(2, &[]);
        let bits: Vec<u8> = (0..30).map(|_| rng.gen_range(0..2)).collect();
        let x = modulate(&il.interleave(&cc_encode(&bits, &spec)).unwrap());
        let y: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-0.9..0.9)).collect();
        let out =
            turbo_equalize(&y, 0.5, &ChannelOnly, &il, &spec, TurboConfig::default()).unwrap();
        let direct = cc_bcjr_decode(
            &il.deinterleave(&channel_llr(&y, 0.5).unwrap()).unwrap(),
            &[0.0; 30],
            &spec,
            MapKernel::LogMap,
        )
        .unwrap();
        assert_eq!(out.decoder, direct);
    }

    #[test]
    fn noiseless_turbo_recovers_bits() {
        let spec = CcSpec::CC_7_5;
        let k = 40;
        let n = spec.code_len(k);
        let il = Interleaver::new(n, 9);
        let profile = isi_taps(&PulseSpec::new(0.6, 0.3, 11).unwrap());
        let ch = FtnChannel::new(build_gram(&profile, n).unwrap());
        let det = TruncatedBcjr::new(&profile, 3, 0).unwrap();
        let mut rng = stream_rng(3, &[]);
        for _ in 0..50 {
            let bits: Vec<u8> = (0..k).map(|_| rng.gen_range(0..2)).collect();
            let x = modulate(&il.interleave(&cc_encode(&bits, &spec)).unwrap());
            let y = ch.transmit(&x, 0.0, &mut rng).unwrap();
            let cfg = TurboConfig {
                rho_max: 2,
                ..Default::default()
            };
            let out = turbo_equalize(&y, 1e-3, &det, &il, &spec, cfg).unwrap();
            assert_eq!(out.bits, bits);
        }
    }

    #[test]
    fn extrinsic_excludes_prior() {
        // Adding a marked offset to one prior entry must leave that entry's
        // extrinsic unchanged when the channel is memoryless.
        let profile = isi_taps(&PulseSpec::new(1.0, 0.3, 11).unwrap());
        let det = TruncatedBcjr::new(&profile, 2, 0).unwrap();
        let y = [0.3, -0.1, 0.8, 0.2];
        let a = det.extrinsic(&y, 0.6, &[0.0; 4]).unwrap();
        let b = det.extrinsic(&y, 0.6, &[0.0, 7.5, 0.0, 0.0]).unwrap();
        for (x, z) in a.iter().zip(&b) {
            assert!((x - z).abs() < 1e-9);
        }
    }
}

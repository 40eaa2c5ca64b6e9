//! Monte Carlo BER sweeps.
//!
//! Block `b` at SNR index `s` always draws from `stream_rng(seed, [s, b])`, and
//! blocks are evaluated in fixed chunks whose results are merged in block
//! order, so counts do not depend on the number of worker threads.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::coding::{cc_encode, CcSpec, Interleaver};
use crate::error::{Error, Result};
use crate::ftn::{
    build_gram, isi_taps, modulate, noise_variance, FtnChannel, IsiProfile, PulseSpec,
};
use crate::harness::config::{DetectorKind, ExperimentConfig};
use crate::math::{llr_to_bit, stream_rng};
use crate::nn::CnnModel;
use crate::spda::{FgConfig, SpdaDetector};
use crate::turbo::{turbo_equalize, ChannelOnly, SoftDetector, TruncatedBcjr, TurboConfig};

/// Blocks simulated between early-stopping checks.
pub const CHUNK: u64 = 16;

/// Noise variance handed to soft detectors when the channel is noiseless.
pub const NOISELESS_SIGMA2: f64 = 1e-3;

pub const CSV_HEADER: &str = "snr_db,bits,bit_errors,blocks,block_errors,ber";

#[derive(Debug, Clone, PartialEq)]
pub struct BerRecord {
    pub snr_db: f64,
    pub bits: u64,
    pub bit_errors: u64,
    pub blocks: u64,
    pub block_errors: u64,
    pub ber: f64,
    pub runtime_s: f64,
    /// Fewer than `min_block_errors` block errors were observed.
    pub censored: bool,
}

impl BerRecord {
    pub fn csv_row(&self) -> String {
        let snr = if self.snr_db.is_infinite() {
            "inf".to_string()
        } else {
            format!("{}", self.snr_db)
        };
        format!(
            "{snr},{},{},{},{},{:e}",
            self.bits, self.bit_errors, self.blocks, self.block_errors, self.ber
        )
    }
}

/// A ready-to-simulate transmitter, channel and receiver.
pub struct Link {
    cfg: ExperimentConfig,
    profile: IsiProfile,
    channel: FtnChannel,
    detector: Box<dyn SoftDetector>,
    interleaver: Option<Interleaver>,
    spec: CcSpec,
}

impl Link {
    pub fn new(cfg: &ExperimentConfig, model: Option<Arc<CnnModel>>) -> Result<Self> {
        cfg.validate()?;
        let profile = isi_taps(&PulseSpec::new(cfg.tau, cfg.alpha, cfg.span)?);
        let channel = FtnChannel::new(build_gram(&profile, cfg.frame_len())?);
        let n = cfg.data_len();
        let detector: Box<dyn SoftDetector> = match cfg.detector {
            DetectorKind::Threshold => Box::new(ChannelOnly),
            DetectorKind::Bcjr => Box::new(TruncatedBcjr::new(&profile, cfg.le, cfg.guard())?),
            DetectorKind::Spda | DetectorKind::DlSpda => {
                let use_nn = cfg.detector == DetectorKind::DlSpda;
                let fg = FgConfig {
                    n,
                    le: cfg.le,
                    iterations: cfg.iterations,
                    use_nn,
                };
                Box::new(SpdaDetector::new(
                    &profile,
                    fg,
                    if use_nn { model } else { None },
                )?)
            }
        };
        let interleaver = cfg.coded.then(|| Interleaver::new(n, cfg.interleaver_seed));
        Ok(Self {
            cfg: cfg.clone(),
            profile,
            channel,
            detector,
            interleaver,
            spec: CcSpec::CC_7_5,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn profile(&self) -> &IsiProfile {
        &self.profile
    }

    /// Simulates one block; returns `(bit errors, information bits)`.
    pub fn simulate_block<R: Rng + ?Sized>(&self, snr_db: f64, rng: &mut R) -> Result<(u64, u64)> {
        let cfg = &self.cfg;
        let sigma2 = noise_variance(snr_db, cfg.rate());
        let det_sigma2 = if sigma2 > 0.0 {
            sigma2
        } else {
            NOISELESS_SIGMA2
        };
        let bits: Vec<u8> = (0..cfg.info_bits()).map(|_| rng.gen_range(0..2)).collect();
        let data = match &self.interleaver {
            Some(il) => il.interleave(&cc_encode(&bits, &self.spec))?,
            None => bits.clone(),
        };
        let guard = cfg.guard();
        let mut frame = vec![1.0; guard];
        frame.extend(modulate(&data));
        frame.extend(std::iter::repeat_n(1.0, guard));
        let y = self.channel.transmit(&frame, sigma2, rng)?;

        let decided: Vec<u8> = match &self.interleaver {
            Some(il) => {
                let tc = TurboConfig {
                    rho_max: cfg.rho_max,
                    ..Default::default()
                };
                let out =
                    turbo_equalize(&y, det_sigma2, self.detector.as_ref(), il, &self.spec, tc)?;
                if out.decoder.info_app.iter().any(|v| v.is_nan()) {
                    return Err(Error::Numerical("decoder produced NaN LLRs".into()));
                }
                out.bits
            }
            None if cfg.detector == DetectorKind::Threshold => {
                y.iter().map(|&v| llr_to_bit(v)).collect()
            }
            None => {
                let ext = self
                    .detector
                    .extrinsic(&y, det_sigma2, &vec![0.0; data.len()])?;
                if ext.iter().any(|v| v.is_nan()) {
                    return Err(Error::Numerical("detector produced NaN LLRs".into()));
                }
                ext.iter().map(|&v| llr_to_bit(v)).collect()
            }
        };
        let errors = bits.iter().zip(&decided).filter(|(a, b)| a != b).count() as u64;
        Ok((errors, bits.len() as u64))
    }

    /// Runs one SNR point until the stopping rule fires.
    pub fn run_point(&self, snr_index: usize, snr_db: f64) -> Result<BerRecord> {
        let cfg = &self.cfg;
        let start = Instant::now();
        let (mut bits, mut bit_errors, mut blocks, mut block_errors) = (0u64, 0u64, 0u64, 0u64);
        while blocks < cfg.max_blocks
            && !(block_errors >= cfg.min_block_errors && bits >= cfg.min_bits)
        {
            let count = CHUNK.min(cfg.max_blocks - blocks);
            let results: Vec<(u64, u64)> = (blocks..blocks + count)
                .into_par_iter()
                .map(|b| {
                    let mut rng = stream_rng(cfg.seed, &[snr_index as u64, b]);
                    self.simulate_block(snr_db, &mut rng)
                })
                .collect::<Result<_>>()?;
            for (e, n) in results {
                bits += n;
                bit_errors += e;
                blocks += 1;
                block_errors += u64::from(e > 0);
            }
        }
        Ok(BerRecord {
            snr_db,
            bits,
            bit_errors,
            blocks,
            block_errors,
            ber: if bits == 0 {
                0.0
            } else {
                bit_errors as f64 / bits as f64
            },
            runtime_s: start.elapsed().as_secs_f64(),
            censored: block_errors < cfg.min_block_errors,
        })
    }
}

/// Runs every SNR point of `cfg`, streaming CSV to `out` as points finish.
///
/// The CSV starts with the resolved configuration as `#` comments; censored
/// points are preceded by a `# censored` line.
pub fn run_ber_sweep(
    cfg: &ExperimentConfig,
    model: Option<Arc<CnnModel>>,
    out: &mut dyn Write,
) -> Result<Vec<BerRecord>> {
    let link = Link::new(cfg, model)?;
    let io = |e: std::io::Error| Error::Io {
        path: "<csv output>".into(),
        source: e,
    };
    for line in cfg.to_text().lines() {
        writeln!(out, "# {line}").map_err(io)?;
    }
    writeln!(out, "{CSV_HEADER}").map_err(io)?;
    let mut records = Vec::with_capacity(cfg.snr_db.len());
    for (i, &snr) in cfg.snr_db.iter().enumerate() {
        let rec = link.run_point(i, snr)?;
        log::info!(
            "snr {} dB: {} errors in {} bits ({} block errors), {:.1}s",
            snr,
            rec.bit_errors,
            rec.bits,
            rec.block_errors,
            rec.runtime_s
        );
        if rec.censored {
            writeln!(
                out,
                "# censored: snr_db={} block_errors={} < min_block_errors={}",
                rec.csv_row().split(',').next().unwrap_or(""),
                rec.block_errors,
                cfg.min_block_errors
            )
            .map_err(io)?;
        }
        writeln!(out, "{}", rec.csv_row()).map_err(io)?;
        out.flush().map_err(io)?;
        records.push(rec);
    }
    Ok(records)
}

/// Two-sided 95% Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Guard;
    use crate::math::q_function;

    fn uncoded(detector: DetectorKind) -> ExperimentConfig {
        ExperimentConfig {
            tau: 1.0,
            coded: false,
            block_len: 500,
            detector,
            snr_db: vec![2.0],
            max_blocks: 40,
            min_block_errors: 10_000,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_point_is_censored_and_clean() {
        for det in [
            DetectorKind::Threshold,
            DetectorKind::Bcjr,
            DetectorKind::Spda,
        ] {
            let mut cfg = uncoded(det);
            cfg.tau = 0.8;
            cfg.le = 11;
            if det == DetectorKind::Spda {
                cfg.tau = 1.0;
                cfg.le = 2;
            }
            cfg.snr_db = vec![f64::INFINITY];
            cfg.max_blocks = 20;
            cfg.block_len = 60;
            let mut out = Vec::new();
            let recs = run_ber_sweep(&cfg, None, &mut out).unwrap();
            assert_eq!(recs[0].bit_errors, 0, "{det:?}");
            assert!(recs[0].censored);
            let text = String::from_utf8(out).unwrap();
            assert!(text.contains("# censored: snr_db=inf"));
        }
    }

    #[test]
    fn awgn_threshold_matches_q_function() {
        let mut cfg = uncoded(DetectorKind::Threshold);
        cfg.snr_db = vec![0.0, 4.0];
        cfg.max_blocks = 200;
        let link = Link::new(&cfg, None).unwrap();
        for (i, &snr) in cfg.snr_db.iter().enumerate() {
            let r = link.run_point(i, snr).unwrap();
            let p = q_function((2.0 * crate::math::db_to_linear(snr)).sqrt());
            let sd = (p * (1.0 - p) / r.bits as f64).sqrt();
            assert!((r.ber - p).abs() < 3.0 * sd, "{snr}: {} vs {p}", r.ber);
        }
    }

    #[test]
    fn csv_is_deterministic_and_thread_independent() {
        let cfg = ExperimentConfig {
            tau: 0.7,
            le: 2,
            k: 30,
            rho_max: 2,
            iterations: 3,
            snr_db: vec![2.0, 4.0],
            max_blocks: 40,
            min_block_errors: 5,
            ..Default::default()
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let mut out = Vec::new();
                run_ber_sweep(&cfg, None, &mut out).unwrap();
                out
            })
        };
        let a = run(1);
        assert_eq!(a, run(1));
        assert_eq!(a, run(3));
        let text = String::from_utf8(a).unwrap();
        assert!(text.lines().any(|l| l == CSV_HEADER));
        assert!(text.contains("# detector = spda"));
    }

    #[test]
    fn counts_are_consistent() {
        let mut cfg = uncoded(DetectorKind::Threshold);
        cfg.tau = 0.8;
        cfg.min_block_errors = 30;
        cfg.max_blocks = 1000;
        let r = Link::new(&cfg, None).unwrap().run_point(0, 2.0).unwrap();
        assert!(!r.censored);
        assert!(r.block_errors >= 30 && r.blocks.is_multiple_of(CHUNK));
        assert_eq!(r.bits, r.blocks * 500);
        assert_eq!(r.ber, r.bit_errors as f64 / r.bits as f64);
    }

    #[test]
    fn dlspda_without_model_is_rejected() {
        let cfg = ExperimentConfig {
            detector: DetectorKind::DlSpda,
            ..Default::default()
        };
        assert!(matches!(Link::new(&cfg, None), Err(Error::MissingModel)));
    }

    #[test]
    fn bcjr_guard_frames() {
        let cfg = ExperimentConfig {
            detector: DetectorKind::Bcjr,
            le: 4,
            k: 20,
            guard: Guard::Auto,
            snr_db: vec![f64::INFINITY],
            max_blocks: 16,
            ..Default::default()
        };
        let link = Link::new(&cfg, None).unwrap();
        assert_eq!(cfg.frame_len(), 2 * 22 + 8);
        let r = link.run_point(0, f64::INFINITY).unwrap();
        assert_eq!(r.bit_errors, 0);
    }

    #[test]
    fn wilson_interval_basics() {
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && hi > 0.5 && (0.5 - lo - (hi - 0.5)).abs() < 1e-12);
        assert_eq!(wilson_interval(0, 0), (0.0, 1.0));
        assert_eq!(wilson_interval(0, 10).0, 0.0);
    }
}

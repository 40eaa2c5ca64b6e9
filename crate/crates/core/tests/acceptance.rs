//! Acceptance suite. Every criterion prints exactly one `PASS` or `FAIL`
//! line (written past the test harness capture so it lands in the log) and
//! then asserts on the same verdict. Tolerances are fixed constants below.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use ftn_core::analysis::{
    bound_curve, sigma_r_oracle, sigma_rl, uncoded_union_bound, BoundConfig, ErrorSequence,
};
use ftn_core::coding::{cc_bcjr_decode, CcSpec, MapKernel};
use ftn_core::ftn::{build_gram, isi_taps, noise_variance, FtnChannel, IsiProfile, PulseSpec};
use ftn_core::harness::{wilson_interval, DetectorKind, ExperimentConfig, Link};
use ftn_core::math::{db_to_linear, q_function, stream_rng};
use ftn_core::nn::{CnnHyper, CnnModel};
use ftn_core::oracle::{brute_force_cc_app, brute_force_map, brute_force_ml};
use ftn_core::spda::{FgConfig, SpdaDetector};
use ftn_core::trainer::{
    empirical_mutual_information, gradient_check, j_inverse, j_value, BatchFactory, TrainConfig,
    Trainer,
};
use ftn_core::turbo::truncated_bcjr_app;

const SEED: u64 = 20_240_601;

fn report(id: u32, name: &str, pass: bool, detail: &str, started: Instant) {
    let line = format!(
        "criterion {id:>2} {}: {name} | {detail} | {:.1}s\n",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

fn three_sigma(p: f64, n: u64) -> f64 {
    3.0 * (p * (1.0 - p) / n as f64).sqrt()
}

#[test]
fn c01_nyquist_rate_matches_bpsk() {
    const MIN_BITS: u64 = 100_000;
    let t = Instant::now();
    let cfg = ExperimentConfig {
        tau: 1.0,
        coded: false,
        block_len: 1000,
        detector: DetectorKind::Threshold,
        snr_db: vec![0.0, 2.0, 4.0, 6.0],
        max_blocks: MIN_BITS / 1000,
        min_block_errors: u64::MAX,
        seed: SEED,
        ..Default::default()
    };
    let link = Link::new(&cfg, None).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for (i, &db) in cfg.snr_db.iter().enumerate() {
        let r = link.run_point(i, db).unwrap();
        let p = q_function((2.0 * db_to_linear(db)).sqrt());
        let dev = (r.ber - p).abs() / (three_sigma(p, r.bits) / 3.0);
        pass &= r.bits >= MIN_BITS && dev <= 3.0;
        detail.push(format!("{db} dB {:.3}sigma", dev));
    }
    report(1, "AWGN reduction at tau = 1", pass, &detail.join(", "), t);
}

#[test]
fn c02_exactness_oracles() {
    const TOL_CC: f64 = 1e-9;
    const TOL_ISI: f64 = 1e-6;
    let t = Instant::now();
    let mut rng = stream_rng(SEED, &[2]);

    let spec = CcSpec::CC_7_5;
    let mut cc: f64 = 0.0;
    for _ in 0..200 {
        let ch: Vec<f64> = (0..spec.code_len(8))
            .map(|_| rng.gen_range(-6.0..6.0))
            .collect();
        let pr: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let fast = cc_bcjr_decode(&ch, &pr, &spec, MapKernel::LogMap).unwrap();
        let (info, code) = brute_force_cc_app(&ch, &pr, &spec);
        for (a, b) in fast
            .info_app
            .iter()
            .zip(&info)
            .chain(fast.code_app.iter().zip(&code))
        {
            cc = cc.max((a - b).abs());
        }
    }

    let mut trellis: f64 = 0.0;
    for i in 0..60 {
        let tau = [0.5, 0.6, 0.7][i % 3];
        let profile = isi_taps(&PulseSpec::new(tau, 0.3, 11).unwrap())
            .truncated(1 + i % 4)
            .unwrap();
        let gram = build_gram(&profile, 10).unwrap();
        let x: Vec<f64> = (0..10)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let sigma2 = rng.gen_range(0.2..1.5);
        let y = FtnChannel::new(gram.clone())
            .transmit(&x, sigma2, &mut rng)
            .unwrap();
        let pr: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = truncated_bcjr_app(&y, &pr, profile.one_sided(), sigma2, 0).unwrap();
        let exact = brute_force_map(&y, &gram, sigma2, &pr).unwrap();
        for (a, b) in fast.iter().zip(&exact) {
            trellis = trellis.max((a - b).abs());
        }
    }

    let mut tree: f64 = 0.0;
    for _ in 0..500 {
        let profile = IsiProfile::from_one_sided(vec![1.0, rng.gen_range(-0.7..0.7)]).unwrap();
        let sigma2 = rng.gen_range(0.1..2.0);
        let y: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.5..2.5)).collect();
        let pr: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let cfg = FgConfig {
            n: 2,
            le: 1,
            iterations: 4,
            use_nn: false,
        };
        let traj = SpdaDetector::new(&profile, cfg, None)
            .unwrap()
            .trajectory(&y, &pr, sigma2)
            .unwrap();
        let exact = brute_force_map(&y, &build_gram(&profile, 2).unwrap(), sigma2, &pr).unwrap();
        for (a, b) in traj.last().unwrap().iter().zip(&exact) {
            tree = tree.max((a - b).abs());
        }
    }

    let pass = cc <= TOL_CC && trellis <= TOL_ISI && tree <= TOL_ISI;
    let detail = format!(
        "CC {cc:.2e} (<= {TOL_CC:e}), trellis {trellis:.2e}, SPDA N=2 {tree:.2e} (<= {TOL_ISI:e})"
    );
    report(2, "exactness oracles", pass, &detail, t);
}

#[test]
fn c03_residual_isi_lower_bound_and_grouping() {
    const SEQUENCES: usize = 1000;
    const SPREAD_TOL: f64 = 1e-12;
    let t = Instant::now();
    let mut rng = stream_rng(SEED, &[3]);
    let n = 64;
    let mut violations = 0;
    let mut checked = 0;
    let mut spread: f64 = 0.0;
    for &tau in &[0.5, 0.6] {
        let profile = isi_taps(&PulseSpec::new(tau, 0.3, 11).unwrap());
        let g = build_gram(&profile, n).unwrap();
        for le in [2usize, 3] {
            let f = g.truncate(le).unwrap().into_inner();
            for _ in 0..SEQUENCES / 4 {
                let w = rng.gen_range(1..=10);
                let sup: Vec<(usize, i8)> = sample_indices(&mut rng, n, w)
                    .into_iter()
                    .map(|p| (p, if rng.gen::<bool>() { 1 } else { -1 }))
                    .collect();
                let e = ErrorSequence::from_support(n, &sup).unwrap();
                let lo = sigma_rl(&e, &g, &f, 2.0).unwrap();
                let est = sigma_r_oracle(&e, &g, &f, 2.0, &mut rng, 2000).unwrap();
                violations += usize::from(lo > est.mean + 3.0 * est.stderr);
                checked += 1;
            }
            let mut cfg = BoundConfig::new(tau, le).unwrap();
            cfg.w_max = 7;
            cfg.mc_samples = 500;
            cfg.ebn0_db = Vec::new();
            for sp in bound_curve(&cfg).unwrap().spectra {
                for grp in sp.groups {
                    spread = spread.max(grp.sigma_rl_spread);
                }
            }
        }
    }
    let pass = checked == SEQUENCES && violations == 0 && spread < SPREAD_TOL;
    let detail = format!(
        "{violations}/{checked} violations, max group spread {spread:.1e} (< {SPREAD_TOL:e})"
    );
    report(3, "residual-ISI lower bound", pass, &detail, t);
}

#[test]
fn c04_union_bound_holds_for_ml_detection() {
    const N: usize = 10;
    const MIN_ERRORS: u64 = 400;
    const MAX_BLOCKS: u64 = 1_500_000;
    const FACTOR: f64 = 2.0;
    let t = Instant::now();
    let profile = isi_taps(&PulseSpec::new(0.7, 0.3, 11).unwrap());
    let gram = build_gram(&profile, N).unwrap();
    let channel = FtnChannel::new(gram.clone());
    let grid = [1.0, 3.0, 5.0, 7.0];
    let bound = uncoded_union_bound(&gram, N, N, &grid, 1_000_000).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for (i, (&db, &pb)) in grid.iter().zip(&bound).enumerate() {
        let sigma2 = noise_variance(db, 1.0);
        let (mut errors, mut blocks) = (0u64, 0u64);
        while errors < MIN_ERRORS && blocks < MAX_BLOCKS {
            let mut rng = stream_rng(SEED, &[4, i as u64, blocks]);
            let x: Vec<f64> = (0..N)
                .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let y = channel.transmit(&x, sigma2, &mut rng).unwrap();
            let xh = brute_force_ml(&y, &gram, sigma2).unwrap();
            errors += x.iter().zip(&xh).filter(|(a, b)| a != b).count() as u64;
            blocks += 1;
        }
        let bits = blocks * N as u64;
        let ber = errors as f64 / bits as f64;
        let p = pb.min(1.0);
        pass &= ber <= p + three_sigma(p, bits);
        if db == 7.0 {
            pass &= ber * FACTOR >= pb;
        }
        detail.push(format!("{db} dB sim {ber:.3e} bound {pb:.3e}"));
    }
    report(
        4,
        "union bound validity (N = 10, tau = 0.7)",
        pass,
        &detail.join(", "),
        t,
    );
}

#[test]
fn c05_bound_consistency_and_rates() {
    let t = Instant::now();
    let mut cfg = BoundConfig::new(0.6, 11).unwrap();
    cfg.w_max = 7;
    cfg.mc_samples = 1000;
    cfg.ebn0_db = vec![2.0, 4.0, 6.0, 8.0, 10.0];
    let curve = bound_curve(&cfg).unwrap();
    let worst = curve
        .full_taps
        .iter()
        .zip(&curve.finite_taps)
        .map(|(a, b)| ((a - b) / a).abs())
        .fold(0.0, f64::max);
    let plain = BoundConfig::new(0.6, 3).unwrap().rate();
    let mut guarded = BoundConfig::new(0.6, 7).unwrap();
    guarded.guard = 7;
    let guarded = guarded.rate();
    let pass = worst <= f64::EPSILON
        && format!("{plain:.3}") == "0.492"
        && format!("{guarded:.3}") == "0.466";
    let detail = format!("max rel gap {worst:.1e}, R = {plain:.3} and {guarded:.3}");
    report(5, "finite-tap bound reduces at L_E = L", pass, &detail, t);
}

#[test]
fn c06_gradients_match_finite_differences() {
    const TOL: f64 = 1e-4;
    let t = Instant::now();
    let g = gradient_check(20, 2, 50, 1e-4, SEED).unwrap();
    let pass = g.checked == 50 && g.max_rel_error < TOL;
    let detail = format!(
        "{} params, max rel error {:.2e} (< {TOL:e})",
        g.checked, g.max_rel_error
    );
    report(6, "reverse-mode gradients", pass, &detail, t);
}

#[test]
fn c07_training_extrinsics_are_consistent() {
    const MEAN_STDERRS: f64 = 5.0;
    const MI_TOL: f64 = 0.02;
    const J_TOL: f64 = 1e-3;
    let t = Instant::now();
    let cfg = TrainConfig::standard(0.6, 2).unwrap();
    let factory = BatchFactory::new(&cfg).unwrap();
    let per_level = cfg.v_factor;
    let levels = cfg.omega.len();
    let mut xs: Vec<Vec<f64>> = vec![Vec::new(); levels];
    let mut ls: Vec<Vec<f64>> = vec![Vec::new(); levels];
    let mut rng = stream_rng(SEED, &[7]);
    for _ in 0..20 {
        let batch = factory.build(&mut rng).unwrap();
        for (i, s) in batch.samples.iter().enumerate() {
            let level = (i / per_level) % levels;
            xs[level].extend_from_slice(&s.labels);
            ls[level].extend_from_slice(&s.o);
        }
    }
    let mut pass = true;
    let mut detail = Vec::new();
    for (k, &omega) in cfg.omega.iter().enumerate() {
        let sigma = factory.xi()[k];
        let m = xs[k].len() as f64;
        let mean = xs[k].iter().zip(&ls[k]).map(|(x, l)| x * l).sum::<f64>() / m;
        let z = (mean - sigma * sigma / 2.0).abs() / (sigma / m.sqrt());
        let mi = empirical_mutual_information(&xs[k], &ls[k]);
        pass &= z <= MEAN_STDERRS && (mi - omega).abs() <= MI_TOL;
        detail.push(format!("omega {omega}: z {z:.2}, MI {mi:.4}"));
    }
    let mut j: f64 = 0.0;
    for i in 1..=100 {
        let s = i as f64 * 0.07;
        j = j.max((j_inverse(j_value(s)).unwrap() - s).abs());
    }
    pass &= j < J_TOL;
    detail.push(format!("J round trip {j:.1e}"));
    report(
        7,
        "compatible-training statistics",
        pass,
        &detail.join(", "),
        t,
    );
}

#[test]
fn c08_zeroed_network_reduces_to_spda() {
    const BLOCKS: usize = 1000;
    let t = Instant::now();
    let (n, le, m) = (250, 2, 6);
    let profile = isi_taps(&PulseSpec::new(0.6, 0.3, 11).unwrap());
    let model = Arc::new(CnnModel::zeroed(CnnHyper::standard(), n, le, m).unwrap());
    let plain = SpdaDetector::new(
        &profile,
        FgConfig {
            n,
            le,
            iterations: m,
            use_nn: false,
        },
        None,
    )
    .unwrap();
    let dl = SpdaDetector::new(
        &profile,
        FgConfig {
            n,
            le,
            iterations: m,
            use_nn: true,
        },
        Some(model),
    )
    .unwrap();
    let channel = FtnChannel::new(build_gram(&profile, n).unwrap());
    let mut rng = stream_rng(SEED, &[8]);
    let mut mismatched = 0;
    for _ in 0..BLOCKS {
        let x: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let sigma2 = noise_variance(rng.gen_range(0.0..10.0), 0.5);
        let y = channel.transmit(&x, sigma2, &mut rng).unwrap();
        let pr: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let a = plain.trajectory(&y, &pr, sigma2).unwrap();
        let b = dl.trajectory(&y, &pr, sigma2).unwrap();
        let same = a.len() == b.len()
            && a.iter()
                .flatten()
                .zip(b.iter().flatten())
                .all(|(u, v)| u.to_bits() == v.to_bits());
        mismatched += usize::from(!same);
    }
    let pass = mismatched == 0;
    report(
        8,
        "zeroed DL-SPDA equals SPDA",
        pass,
        &format!("{mismatched}/{BLOCKS} blocks differ"),
        t,
    );
}

#[test]
fn c09_trained_network_does_not_lose_to_spda() {
    const MIN_SAMPLES: u64 = 1_000_000;
    const SNR_DB: f64 = 6.0;
    const MIN_BLOCK_ERRORS: u64 = 100;
    let t = Instant::now();
    let mut tcfg = TrainConfig::standard(0.6, 2).unwrap();
    tcfg.seed = SEED;
    let per_batch = tcfg.samples_per_batch() as u64;
    tcfg.batches = MIN_SAMPLES.div_ceil(per_batch);
    tcfg.window = tcfg.batches / 10;
    let mut trainer = Trainer::new(tcfg.clone()).unwrap();
    trainer.run().unwrap();
    let model = Arc::new(trainer.into_model());

    let base = ExperimentConfig {
        tau: 0.6,
        le: 2,
        rho_max: 3,
        iterations: tcfg.iterations,
        snr_db: vec![SNR_DB],
        min_block_errors: MIN_BLOCK_ERRORS,
        max_blocks: 200_000,
        seed: SEED,
        interleaver_seed: tcfg.interleaver_seed,
        ..Default::default()
    };
    let run = |kind: DetectorKind, model: Option<Arc<CnnModel>>| {
        let cfg = ExperimentConfig {
            detector: kind,
            ..base.clone()
        };
        Link::new(&cfg, model)
            .unwrap()
            .run_point(0, SNR_DB)
            .unwrap()
    };
    let spda = run(DetectorKind::Spda, None);
    let dl = run(DetectorKind::DlSpda, Some(model));
    let (dl_lo, _) = wilson_interval(dl.bit_errors, dl.bits);
    let (_, sp_hi) = wilson_interval(spda.bit_errors, spda.bits);
    let enough = dl.block_errors >= MIN_BLOCK_ERRORS && spda.block_errors >= MIN_BLOCK_ERRORS;
    let verdict = if dl.ber <= spda.ber {
        "DL-SPDA better or equal"
    } else if dl_lo <= sp_hi {
        "tie"
    } else {
        "DL-SPDA worse"
    };
    let pass = enough && verdict != "DL-SPDA worse";
    let detail = format!(
        "{} samples, {SNR_DB} dB: DL-SPDA {:.3e} ({} block errors), SPDA {:.3e} ({} block errors), {verdict}",
        tcfg.batches * per_batch,
        dl.ber,
        dl.block_errors,
        spda.ber,
        spda.block_errors
    );
    report(9, "training efficacy", pass, &detail, t);
}

#[test]
fn c10_truncation_error_floor() {
    const MIN_ERRORS: u64 = 100;
    const MAX_BLOCKS: u64 = 100_000;
    let t = Instant::now();
    let ber = |le: usize, db: f64| {
        let cfg = ExperimentConfig {
            tau: 0.5,
            span: 7,
            le,
            coded: false,
            block_len: 250,
            detector: DetectorKind::Bcjr,
            seed: SEED,
            ..Default::default()
        };
        let link = Link::new(&cfg, None).unwrap();
        let (mut errors, mut bits, mut blocks) = (0u64, 0u64, 0u64);
        while errors < MIN_ERRORS && blocks < MAX_BLOCKS {
            let mut rng = stream_rng(SEED, &[10, le as u64, db.to_bits(), blocks]);
            let (e, n) = link.simulate_block(db, &mut rng).unwrap();
            errors += e;
            bits += n;
            blocks += 1;
        }
        (errors as f64 / bits as f64, errors)
    };
    let (t8, e_t8) = ber(1, 8.0);
    let (t12, e_t12) = ber(1, 12.0);
    let (f8, e_f8) = ber(7, 8.0);
    let (f12, e_f12) = ber(7, 12.0);
    let enough = [e_t8, e_t12, e_f8, e_f12].iter().all(|&e| e >= MIN_ERRORS);
    let (rt, rf) = (t12 / t8, f12 / f8);
    let pass = enough && rt > 0.5 && rf < 0.1;
    let detail = format!(
        "L_E = 1 ratio {rt:.3} (> 0.5), L_E = 7 ratio {rf:.2e} (< 0.1), min errors {}",
        [e_t8, e_t12, e_f8, e_f12].iter().min().unwrap()
    );
    report(
        10,
        "truncation error floor (tau = 0.5, L = 7)",
        pass,
        &detail,
        t,
    );
}

//! Off-line training of the unfolded DL-SPDA.
//!
//! Batches combine channel LLRs with synthetic decoder extrinsics drawn from
//! consistent Gaussians at target mutual-information levels; the multi-loss is
//! a discounted sum of per-iteration sigmoid cross-entropies; gradients come
//! from a hand-derived reverse pass over the recorded forward; updates use
//! RMSProp.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::coding::{cc_encode, CcSpec, Interleaver};
use crate::error::{Error, Result};
use crate::ftn::{
    build_gram, isi_taps, noise_variance, FtnChannel, IsiProfile, PulseSpec, DEFAULT_SPAN,
};
use crate::math::{sigmoid, softplus, stream_rng};
use crate::nn::{cnn_backward, init_params, CnnHyper, CnnModel, LayerGrad};
use crate::spda::{channel_llr, clip_pass, FgConfig, Recording, SpdaDetector};

/// `J(sigma)`: mutual information between a bit and a consistent Gaussian LLR
/// `L ~ N(sigma^2 / 2, sigma^2)`, by Simpson integration over `z in [-12, 12]`.
pub fn j_value(sigma: f64) -> f64 {
    if !(sigma > 0.0) {
        return 0.0;
    }
    let intervals = 4000;
    let (a, b) = (-12.0, 12.0);
    let h = (b - a) / intervals as f64;
    let f = |z: f64| {
        let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        phi * softplus(-(sigma * sigma / 2.0 + sigma * z))
    };
    let mut acc = f(a) + f(b);
    for k in 1..intervals {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    let integral = acc * h / 3.0;
    (1.0 - integral / std::f64::consts::LN_2).clamp(0.0, 1.0)
}

/// Inverse of [`j_value`] by bracketed bisection to `|dI| < 1e-6`.
pub fn j_inverse(mi: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&mi) {
        return Err(Error::InvalidParameter(format!(
            "J^-1 needs 0 <= I < 1, got {mi}"
        )));
    }
    if mi == 0.0 {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while j_value(hi) < mi {
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::Numerical(format!("J^-1({mi}) failed to bracket")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = j_value(mid);
        if (v - mi).abs() < 1e-7 {
            return Ok(mid);
        }
        if v < mi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Consistent Gaussian extrinsic LLRs `N(x_i sigma^2 / 2, sigma^2)` for symbols `x`.
pub fn sample_extrinsic<R: Rng + ?Sized>(x: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; x.len()];
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    x.iter()
        .map(|&s| s * sigma * sigma / 2.0 + normal.sample(rng))
        .collect()
}

/// `1 - mean(log2(1 + e^{-x L}))`.
pub fn empirical_mutual_information(x: &[f64], llr: &[f64]) -> f64 {
    let acc: f64 = x.iter().zip(llr).map(|(s, l)| softplus(-s * l)).sum();
    1.0 - acc / x.len() as f64 / std::f64::consts::LN_2
}

/// Sigmoid cross-entropy per bit between symbol labels and LLRs.
pub fn cross_entropy(labels: &[f64], llr: &[f64]) -> f64 {
    labels
        .iter()
        .zip(llr)
        .map(|(x, l)| softplus(-x * l))
        .sum::<f64>()
        / labels.len() as f64
}

/// `sum_m gamma^{M - m} F_ce(D, D^m)`, `m = 1..=M`.
pub fn multi_loss(per_iteration: &[Vec<f64>], labels: &[f64], gamma: f64) -> f64 {
    let m_max = per_iteration.len();
    per_iteration
        .iter()
        .enumerate()
        .map(|(m, llr)| gamma.powi((m_max - 1 - m) as i32) * cross_entropy(labels, llr))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub pulse: PulseSpec,
    pub le: usize,
    /// Information bits per block; the code length is `2 (K + 2)`.
    pub k: usize,
    pub hyper: CnnHyper,
    /// Inclusive E_b/N_0 range in dB, sampled on a grid with `snr_step`.
    pub snr_db: (f64, f64),
    pub snr_step: f64,
    pub learning_rate: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    /// Extrinsic realizations per channel realization and MI level.
    pub v_factor: usize,
    pub omega: Vec<f64>,
    /// MI targets are capped here because `J^-1(1)` is unbounded.
    pub mi_cap: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub batches: u64,
    pub seed: u64,
    pub interleaver_seed: u64,
    /// Batches per convergence-monitor window.
    pub window: u64,
}

impl TrainConfig {
    /// Default hyper-parameters for a given acceleration and truncation.
    pub fn standard(tau: f64, le: usize) -> Result<Self> {
        Ok(Self {
            pulse: PulseSpec::new(tau, 0.3, DEFAULT_SPAN)?,
            le,
            k: 123,
            hyper: CnnHyper::standard(),
            snr_db: (6.0, 8.0),
            snr_step: 1.0,
            learning_rate: 0.001,
            rms_decay: 0.9,
            rms_eps: 1e-8,
            v_factor: 12,
            omega: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            mi_cap: 0.9999,
            gamma: 0.9,
            iterations: 6,
            batches: 1000,
            seed: 1,
            interleaver_seed: 7,
            window: 5000,
        })
    }

    pub fn n(&self) -> usize {
        CcSpec::CC_7_5.code_len(self.k)
    }

    pub fn rate(&self) -> f64 {
        self.k as f64 / self.n() as f64
    }

    pub fn snr_points(&self) -> Vec<f64> {
        let (lo, hi) = self.snr_db;
        let steps = ((hi - lo) / self.snr_step + 1e-9).floor() as usize;
        (0..=steps).map(|s| lo + s as f64 * self.snr_step).collect()
    }

    pub fn samples_per_batch(&self) -> usize {
        self.snr_points().len() * self.omega.len() * self.v_factor
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("discount gamma must lie in (0, 1)");
        }
        if self.omega.is_empty() || self.omega.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return bad("omega must be a non-empty subset of [0, 1]");
        }
        if !(self.mi_cap > 0.0 && self.mi_cap < 1.0) {
            return bad("mi_cap must lie in (0, 1)");
        }
        if self.v_factor == 0 || self.k == 0 || self.iterations == 0 || self.window == 0 {
            return bad("v_factor, K, m_max and window must be >= 1");
        }
        if !(self.snr_step > 0.0) || self.snr_db.1 < self.snr_db.0 {
            return bad("invalid SNR range");
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning rate must be >= 0");
        }
        self.hyper.validate()?;
        if self.le > self.pulse.span {
            return Err(Error::InvalidTruncation {
                requested: self.le,
                span: self.pulse.span,
            });
        }
        Ok(())
    }
}

/// One training input: detector LLRs plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Channel LLRs `Psi`.
    pub t: Vec<f64>,
    /// Synthetic decoder extrinsic `Upsilon`.
    pub o: Vec<f64>,
    /// Interleaved code symbols, `+-1`.
    pub labels: Vec<f64>,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub samples: Vec<Sample>,
}

/// Everything needed to synthesize batches, built once per training run.
#[derive(Debug, Clone)]
pub struct BatchFactory {
    k: usize,
    rate: f64,
    snr_points: Vec<f64>,
    xi: Vec<f64>,
    v_factor: usize,
    interleaver: Interleaver,
    channel: FtnChannel,
}

impl BatchFactory {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n();
        let profile = isi_taps(&cfg.pulse);
        let xi = cfg
            .omega
            .iter()
            .map(|&w| j_inverse(w.min(cfg.mi_cap)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            k: cfg.k,
            rate: cfg.rate(),
            snr_points: cfg.snr_points(),
            xi,
            v_factor: cfg.v_factor,
            interleaver: Interleaver::new(n, cfg.interleaver_seed),
            channel: FtnChannel::new(build_gram(&profile, n)?),
        })
    }

    /// The extrinsic standard deviations `J^-1(omega)`.
    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    /// One channel realization per SNR point, each expanded into
    /// `|Omega| * V` samples.
    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TrainingBatch> {
        let mut samples = Vec::with_capacity(self.snr_points.len() * self.xi.len() * self.v_factor);
        for &snr in &self.snr_points {
            let bits: Vec<u8> = (0..self.k).map(|_| rng.gen_range(0..2)).collect();
            let code = self
                .interleaver
                .interleave(&cc_encode(&bits, &CcSpec::CC_7_5))?;
            let x = crate::ftn::modulate(&code);
            let sigma2 = noise_variance(snr, self.rate);
            let y = self.channel.transmit(&x, sigma2, rng)?;
            let t = channel_llr(&y, sigma2)?;
            for &sigma_e in &self.xi {
                for _ in 0..self.v_factor {
                    samples.push(Sample {
                        t: t.clone(),
                        o: sample_extrinsic(&x, sigma_e, rng),
                        labels: x.clone(),
                        sigma2,
                    });
                }
            }
        }
        Ok(TrainingBatch { samples })
    }
}

/// Free-function form of [`BatchFactory::build`].
pub fn build_batch<R: Rng + ?Sized>(cfg: &TrainConfig, rng: &mut R) -> Result<TrainingBatch> {
    BatchFactory::new(cfg)?.build(rng)
}

/// A recorded unfolded forward pass of one sample.
#[derive(Debug, Clone)]
pub struct Tape {
    pub rec: Recording,
    pub labels: Vec<f64>,
    pub sigma2: f64,
}

impl Tape {
    pub fn record(det: &SpdaDetector, sample: &Sample) -> Result<Self> {
        let mut rec = Recording::default();
        det.run(
            sample.t.clone(),
            sample.o.clone(),
            sample.sigma2,
            Some(&mut rec),
        )?;
        Ok(Self {
            rec,
            labels: sample.labels.clone(),
            sigma2: sample.sigma2,
        })
    }

    /// Per-iteration APP LLRs `D^1..=D^M`.
    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.rec.app[1..]
    }

    pub fn loss(&self, gamma: f64) -> f64 {
        multi_loss(self.outputs(), &self.labels, gamma)
    }
}

/// Reverse pass: adds `scale * dLoss/dparams` into `grad` (flat model layout).
pub fn backward(tape: &Tape, det: &SpdaDetector, gamma: f64, scale: f64, grad: &mut [f64]) {
    let model = det.model().expect("backward requires a DL-SPDA detector");
    let graph = det.graph();
    let n = graph.n();
    let m_max = tape.rec.app_raw.len();
    let theta = det.coupling(tape.sigma2).theta;
    let layout = model.layout().clone();

    let mut g_app = vec![0.0; n];
    let mut g_q_next = vec![0.0; graph.slot_count()];
    let mut g_z = vec![0.0; n];
    let mut du = vec![0.0; n];
    for m in (0..m_max).rev() {
        let w = scale * gamma.powi((m_max - 1 - m) as i32) / n as f64;
        let app = &tape.rec.app[m + 1];
        for i in 0..n {
            let x = tape.labels[i];
            g_app[i] += -w * x * sigmoid(-x * app[i]);
            g_z[i] = g_app[i] * clip_pass(tape.rec.app_raw[m][i]);
        }
        let ranges = layout.iter(m);
        {
            let mut lg = LayerGrad::from_flat(grad, &ranges);
            cnn_backward(
                &tape.rec.u[m],
                &model.layer(m),
                &model.hyper,
                &tape.rec.cnn[m],
                &g_z,
                &mut lg,
                &mut du,
            );
        }
        let vs = layout.varsigma(m);
        let mut g_prev_app = vec![0.0; n];
        let p_raw = &tape.rec.p_raw[m];
        let q_raw = &tape.rec.q_raw[m];
        let dq_dp = &tape.rec.dq_dp[m];
        let dq_da = &tape.rec.dq_da[m];
        let mut g_q_prev = vec![0.0; graph.slot_count()];
        for (k, e) in graph.edges() {
            let gq = (g_q_next[k] + g_z[e.i] + du[e.i]) * clip_pass(q_raw[k]);
            if gq == 0.0 {
                continue;
            }
            // a = theta_d * varsigma_d
            grad[vs.start + e.d] += gq * dq_da[k] * theta[e.d];
            let gp = gq * dq_dp[k] * clip_pass(p_raw[k]);
            g_prev_app[e.j] += gp;
            g_q_prev[e.rev] -= gp;
        }
        g_app = g_prev_app;
        g_q_next = g_q_prev;
    }
}

/// Loss and gradient of one batch (mean over samples), reduced in sample order.
pub fn batch_gradient(
    det: &SpdaDetector,
    batch: &TrainingBatch,
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    let model = det.model().ok_or(Error::MissingModel)?;
    let total = model.layout().total();
    let count = batch.samples.len();
    if count == 0 {
        return Ok((0.0, vec![0.0; total]));
    }
    let scale = 1.0 / count as f64;
    let partials: Vec<Result<(f64, Vec<f64>)>> = batch
        .samples
        .par_chunks(16)
        .map(|chunk| {
            let mut grad = vec![0.0; total];
            let mut loss = 0.0;
            for s in chunk {
                let tape = Tape::record(det, s)?;
                loss += tape.loss(gamma) * scale;
                backward(&tape, det, gamma, scale, &mut grad);
            }
            Ok((loss, grad))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; total];
    for p in partials {
        let (l, g) = p?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

/// RMSProp: `v = rho v + (1 - rho) g^2`, `theta -= lr g / (sqrt(v) + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub eps: f64,
    mean_square: Vec<f64>,
}

impl RmsProp {
    pub fn new(len: usize, learning_rate: f64, decay: f64, eps: f64) -> Self {
        Self {
            learning_rate,
            decay,
            eps,
            mean_square: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        for ((p, g), v) in params.iter_mut().zip(grad).zip(&mut self.mean_square) {
            *v = self.decay * *v + (1.0 - self.decay) * g * g;
            *p -= self.learning_rate * g / (v.sqrt() + self.eps);
        }
    }
}

/// Windowed loss averages and their relative changes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceMonitor {
    window: u64,
    reference: Option<f64>,
    acc: f64,
    count: u64,
    /// `(batch index at window end, xi_avg, xi_cg)`.
    pub points: Vec<(u64, f64, f64)>,
    batches: u64,
}

impl ConvergenceMonitor {
    pub fn new(window: u64) -> Self {
        Self {
            window: window.max(1),
            ..Default::default()
        }
    }

    /// Adds one batch loss. Losses are normalized by the first batch's loss,
    /// so the window-0 average is 1 by construction.
    pub fn push(&mut self, loss: f64) -> Option<(u64, f64, f64)> {
        let reference = *self.reference.get_or_insert(loss);
        self.acc += loss / reference;
        self.count += 1;
        self.batches += 1;
        if self.count < self.window {
            return None;
        }
        let avg = self.acc / self.count as f64;
        let prev = self.points.last().map_or(1.0, |p| p.1);
        let point = (self.batches, avg, ((avg - prev) / prev).abs());
        self.points.push(point);
        self.acc = 0.0;
        self.count = 0;
        Some(point)
    }

    /// First window index `a` such that every later window has `xi_cg < 0.1`.
    pub fn stable_from(&self) -> Option<usize> {
        let mut from = None;
        for (a, p) in self.points.iter().enumerate().rev() {
            if p.2 < 0.1 {
                from = Some(a);
            } else {
                break;
            }
        }
        from
    }

    /// `xi_cg` recurrence applied to an arbitrary series of window averages.
    pub fn relative_changes(averages: &[f64]) -> Vec<f64> {
        let mut prev = 1.0;
        averages
            .iter()
            .map(|&a| {
                let c = ((a - prev) / prev).abs();
                prev = a;
                c
            })
            .collect()
    }
}

/// Stateful trainer: one call to [`Trainer::step`] per batch.
pub struct Trainer {
    cfg: TrainConfig,
    factory: BatchFactory,
    profile: IsiProfile,
    model: CnnModel,
    optimizer: RmsProp,
    pub monitor: ConvergenceMonitor,
    pub losses: Vec<f64>,
    batch: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        let factory = BatchFactory::new(&cfg)?;
        let mut rng = stream_rng(cfg.seed, &[u64::MAX]);
        let model = init_params(cfg.hyper, cfg.n(), cfg.le, cfg.iterations, &mut rng)?;
        Self::with_model(cfg, factory, model)
    }

    pub fn from_model(cfg: TrainConfig, model: CnnModel) -> Result<Self> {
        let factory = BatchFactory::new(&cfg)?;
        Self::with_model(cfg, factory, model)
    }

    fn with_model(cfg: TrainConfig, factory: BatchFactory, mut model: CnnModel) -> Result<Self> {
        model.meta.seed = cfg.seed;
        model.meta.snr_db = cfg.snr_db;
        model.meta.tau = cfg.pulse.tau;
        model.meta.optimizer = format!(
            "rmsprop lr={} decay={} eps={}",
            cfg.learning_rate, cfg.rms_decay, cfg.rms_eps
        );
        let optimizer = RmsProp::new(
            model.layout().total(),
            cfg.learning_rate,
            cfg.rms_decay,
            cfg.rms_eps,
        );
        Ok(Self {
            profile: isi_taps(&cfg.pulse),
            monitor: ConvergenceMonitor::new(cfg.window),
            factory,
            model,
            optimizer,
            losses: Vec::new(),
            batch: 0,
            cfg,
        })
    }

    pub fn model(&self) -> &CnnModel {
        &self.model
    }

    pub fn into_model(self) -> CnnModel {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn detector(&self) -> Result<SpdaDetector> {
        let fg = FgConfig {
            n: self.cfg.n(),
            le: self.cfg.le,
            iterations: self.cfg.iterations,
            use_nn: true,
        };
        SpdaDetector::new(&self.profile, fg, Some(Arc::new(self.model.clone())))
    }

    /// Builds the next batch, takes one optimizer step and returns the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let mut rng = stream_rng(self.cfg.seed, &[self.batch]);
        let batch = self.factory.build(&mut rng)?;
        let det = self.detector()?;
        let (loss, grad) = batch_gradient(&det, &batch, self.cfg.gamma)?;
        drop(det);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "training diverged at batch {}: loss {loss}",
                self.batch
            )));
        }
        self.optimizer.step(self.model.params_mut(), &grad);
        self.batch += 1;
        self.model.meta.batches = self.batch;
        self.model.meta.samples += batch.samples.len() as u64;
        self.losses.push(loss);
        if let Some((b, avg, cg)) = self.monitor.push(loss) {
            log::info!("batch {b}: xi_avg {avg:.5} xi_cg {cg:.5}");
        }
        Ok(loss)
    }

    /// Runs until the configured batch budget is spent.
    pub fn run(&mut self) -> Result<()> {
        while self.batch < self.cfg.batches {
            self.step()?;
        }
        Ok(())
    }
}

/// Trains a fresh model for `cfg.batches` batches.
pub fn train(cfg: TrainConfig) -> Result<(CnnModel, ConvergenceMonitor, Vec<f64>)> {
    let mut t = Trainer::new(cfg)?;
    t.run()?;
    let monitor = t.monitor.clone();
    let losses = std::mem::take(&mut t.losses);
    Ok((t.into_model(), monitor, losses))
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(parameter index, analytic, finite difference)` for every checked entry.
    pub entries: Vec<(usize, f64, f64)>,
}

/// Relative error with an absolute floor so exact zeros compare cleanly.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central finite differences (step `h`) against the reverse pass on a random
/// DL-SPDA instance of length `n` with `m_max` iterations.
pub fn gradient_check(
    n: usize,
    m_max: usize,
    params: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheck> {
    let mut rng = stream_rng(seed, &[0x6AD]);
    let profile = isi_taps(&PulseSpec::new(0.6, 0.3, DEFAULT_SPAN)?);
    let le = 2;
    let hyper = CnnHyper {
        sigma1: 0.3,
        sigma2: 0.3,
        ..CnnHyper::standard()
    };
    let mut model = init_params(hyper, n, le, m_max, &mut rng)?;
    {
        let layout = model.layout().clone();
        let p = model.params_mut();
        for m in 0..m_max {
            let r = layout.iter(m);
            for b in &mut p[r.b1.start..r.b2.end] {
                *b = rng.gen_range(-0.3..0.3);
            }
            for b in &mut p[r.bd] {
                *b = rng.gen_range(-0.5..0.5);
            }
            for s in &mut p[layout.varsigma(m)] {
                *s = rng.gen_range(0.7..1.3);
            }
        }
    }
    let channel = FtnChannel::new(build_gram(&profile, n)?);
    let x: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let sigma2 = 0.6;
    let y = channel.transmit(&x, sigma2, &mut rng)?;
    let sample = Sample {
        t: channel_llr(&y, sigma2)?,
        o: sample_extrinsic(&x, 1.0, &mut rng),
        labels: x,
        sigma2,
    };
    let gamma = 0.9;
    let fg = FgConfig {
        n,
        le,
        iterations: m_max,
        use_nn: true,
    };
    let loss_at = |params: &[f64]| -> Result<f64> {
        let m = CnnModel::from_parts(
            hyper,
            model.layout().clone(),
            params.to_vec(),
            Default::default(),
        )?;
        let det = SpdaDetector::new(&profile, fg, Some(Arc::new(m)))?;
        Ok(Tape::record(&det, &sample)?.loss(gamma))
    };
    let det = SpdaDetector::new(&profile, fg, Some(Arc::new(model.clone())))?;
    let tape = Tape::record(&det, &sample)?;
    let mut grad = vec![0.0; model.layout().total()];
    backward(&tape, &det, gamma, 1.0, &mut grad);

    let total = grad.len();
    let picks = rand::seq::index::sample(&mut rng, total, params.min(total));
    let base = model.params().to_vec();
    let mut entries = Vec::with_capacity(picks.len());
    let mut max_rel_error: f64 = 0.0;
    for k in picks.iter() {
        let mut p = base.clone();
        p[k] = base[k] + h;
        let up = loss_at(&p)?;
        p[k] = base[k] - h;
        let dn = loss_at(&p)?;
        let fd = (up - dn) / (2.0 * h);
        max_rel_error = max_rel_error.max(relative_error(grad[k], fd));
        entries.push((k, grad[k], fd));
    }
    model.params_mut().copy_from_slice(&base);
    Ok(GradCheck {
        checked: entries.len(),
        max_rel_error,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::mc_mutual_information;

    #[test]
    fn j_function_endpoints_and_monotonicity() {
        assert_eq!(j_value(0.0), 0.0);
        assert!(j_value(100.0) >= 0.9999);
        let mut prev = 0.0;
        for k in 1..60 {
            let v = j_value(k as f64 * 0.2);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn j_matches_monte_carlo() {
        let mut rng = stream_rng(3, &[]);
        for &s in &[0.5, 1.5, 3.0] {
            let mc = mc_mutual_information(s, 1_000_000, &mut rng);
            assert!(
                (mc - j_value(s)).abs() < 0.003,
                "sigma {s}: {mc} vs {}",
                j_value(s)
            );
        }
    }

    #[test]
    fn j_inverse_round_trip() {
        assert_eq!(j_inverse(0.0).unwrap(), 0.0);
        for &i in &[0.2, 0.4, 0.6, 0.8, 0.9999] {
            let s = j_inverse(i).unwrap();
            assert!((j_value(s) - i).abs() < 1e-6);
        }
        assert!(j_inverse(0.8).unwrap() > j_inverse(0.4).unwrap());
        assert!(j_inverse(1.0).is_err());
    }

    #[test]
    fn loss_examples() {
        let labels = vec![1.0, -1.0, 1.0];
        let d = vec![vec![0.3, -0.2, 1.0]];
        assert_eq!(multi_loss(&d, &labels, 0.9), cross_entropy(&labels, &d[0]));
        let perfect = vec![vec![50.0, -50.0, 50.0]; 6];
        assert!(multi_loss(&perfect, &labels, 0.9) / 3.0 < 1e-10);
        let mut six = vec![vec![0.0; 3]; 6];
        six[0] = vec![1.0, 1.0, 1.0];
        let base = multi_loss(&vec![vec![0.0; 3]; 6], &labels, 0.9);
        let delta = multi_loss(&six, &labels, 0.9) - base;
        let expect =
            0.9f64.powi(5) * (cross_entropy(&labels, &six[0]) - cross_entropy(&labels, &[0.0; 3]));
        assert!((delta - expect).abs() < 1e-12);
    }

    #[test]
    fn batch_shape_and_determinism() {
        let mut cfg = TrainConfig::standard(0.6, 2).unwrap();
        cfg.k = 20;
        let f = BatchFactory::new(&cfg).unwrap();
        let a = f.build(&mut stream_rng(1, &[0])).unwrap();
        let b = f.build(&mut stream_rng(1, &[0])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 3 * 60);
        // Samples from one channel realization share Psi.
        assert!(a.samples[..60].iter().all(|s| s.t == a.samples[0].t));
        assert_ne!(a.samples[0].t, a.samples[60].t);

        cfg.omega = vec![0.0];
        cfg.v_factor = 1;
        let plain = BatchFactory::new(&cfg)
            .unwrap()
            .build(&mut stream_rng(2, &[]))
            .unwrap();
        assert_eq!(plain.samples.len(), 3);
        assert!(plain.samples.iter().all(|s| s.o.iter().all(|&o| o == 0.0)));
    }

    #[test]
    fn extrinsic_samples_are_consistent() {
        let mut rng = stream_rng(8, &[]);
        let x: Vec<f64> = (0..200_000)
            .map(|i| if i % 3 == 0 { -1.0 } else { 1.0 })
            .collect();
        let s = j_inverse(0.6).unwrap();
        let l = sample_extrinsic(&x, s, &mut rng);
        assert!((empirical_mutual_information(&x, &l) - 0.6).abs() < 0.02);
        assert_eq!(sample_extrinsic(&x[..4], 0.0, &mut rng), vec![0.0; 4]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let r = gradient_check(20, 2, 50, 1e-4, 11).unwrap();
        assert_eq!(r.checked, 50);
        assert!(r.max_rel_error < 1e-4, "{:?}", r);
    }

    #[test]
    fn gradient_scales_linearly() {
        let mut cfg = TrainConfig::standard(0.6, 2).unwrap();
        cfg.k = 18;
        cfg.iterations = 2;
        let t = Trainer::new(cfg.clone()).unwrap();
        let det = t.detector().unwrap();
        let batch = t.factory.build(&mut stream_rng(4, &[])).unwrap();
        let tape = Tape::record(&det, &batch.samples[5]).unwrap();
        let mut g1 = vec![0.0; t.model.layout().total()];
        let mut g2 = g1.clone();
        backward(&tape, &det, 0.9, 1.0, &mut g1);
        backward(&tape, &det, 0.9, 2.0, &mut g2);
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut cfg = TrainConfig::standard(0.6, 2).unwrap();
        cfg.k = 18;
        cfg.iterations = 2;
        cfg.learning_rate = 0.0;
        cfg.batches = 2;
        let mut t = Trainer::new(cfg).unwrap();
        let before = t.model().params().to_vec();
        t.run().unwrap();
        assert_eq!(t.model().params(), &before[..]);
        assert_eq!(t.model().meta.batches, 2);
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let mut cfg = TrainConfig::standard(0.6, 1).unwrap();
        cfg.k = 18;
        cfg.iterations = 2;
        let t = Trainer::new(cfg).unwrap();
        let det = t.detector().unwrap();
        let mut batch = t.factory.build(&mut stream_rng(9, &[])).unwrap();
        let (a, _) = batch_gradient(&det, &batch, 0.9).unwrap();
        batch.samples.reverse();
        let (b, _) = batch_gradient(&det, &batch, 0.9).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn xi_metrics_follow_definition() {
        let mut mon = ConvergenceMonitor::new(2);
        for l in [2.0, 2.0, 1.0, 1.0, 0.95, 0.95] {
            mon.push(l);
        }
        let avgs: Vec<f64> = mon.points.iter().map(|p| p.1).collect();
        assert_eq!(avgs, vec![1.0, 0.5, 0.475]);
        let cg: Vec<f64> = mon.points.iter().map(|p| p.2).collect();
        assert_eq!(cg[0], 0.0);
        assert!((cg[1] - 0.5).abs() < 1e-15 && (cg[2] - 0.05).abs() < 1e-12);
        assert_eq!(ConvergenceMonitor::relative_changes(&avgs), cg);
        assert_eq!(mon.stable_from(), Some(2));
    }
}

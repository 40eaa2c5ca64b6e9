//! Sum-product detection on the Ungerboeck factor graph, in the LLR domain,
//! with the optional CNN function node and trainable edge scales.
//!
//! Every symbol `x_i` is linked to its `2 L_E` neighbours through pairwise
//! factors `I_{i,j} = exp(-g_{|i-j|} x_i x_j / sigma^2)`. Messages use a
//! flooding schedule and are clipped to `+-LLR_CLIP`.

use std::sync::Arc;

use crate::error::{check_len, Error, Result};
use crate::ftn::IsiProfile;
use crate::math::ln_cosh_shifted;
use crate::nn::{cnn_forward_cached, CnnCache, CnnModel};

pub const LLR_CLIP: f64 = 50.0;

#[inline]
pub fn clip_llr(x: f64) -> f64 {
    x.clamp(-LLR_CLIP, LLR_CLIP)
}

/// Straight-through mask of the clip: 1 inside the range, 0 outside.
#[inline]
pub fn clip_pass(raw: f64) -> f64 {
    if raw.abs() <= LLR_CLIP {
        1.0
    } else {
        0.0
    }
}

/// `T_i = 2 y_i / sigma^2` for BPSK.
pub fn channel_llr(y: &[f64], sigma2: f64) -> Result<Vec<f64>> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::Degenerate(format!(
            "channel LLRs need a positive noise variance, got {sigma2}"
        )));
    }
    Ok(y.iter().map(|&v| 2.0 * v / sigma2).collect())
}

/// Message from a pairwise factor with coupling `a = theta * varsigma` given
/// the incoming neighbour LLR `p`:
/// `ln[(e^{-a} e^p + e^a) / (e^a e^p + e^{-a})] = lncosh(p/2 - a) - lncosh(p/2 + a)`.
#[inline]
pub fn edge_message(p: f64, a: f64) -> f64 {
    let h = 0.5 * p;
    ln_cosh_shifted(h - a).0 - ln_cosh_shifted(h + a).0
}

/// [`edge_message`] together with its partial derivatives `(q, dq/dp, dq/da)`.
#[inline]
pub fn edge_message_grad(p: f64, a: f64) -> (f64, f64, f64) {
    let h = 0.5 * p;
    let (lm, tm) = ln_cosh_shifted(h - a);
    let (lp, tp) = ln_cosh_shifted(h + a);
    (lm - lp, 0.5 * (tm - tp), -tm - tp)
}

/// Inner-detector settings shared by every block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FgConfig {
    pub n: usize,
    pub le: usize,
    pub iterations: usize,
    pub use_nn: bool,
}

impl FgConfig {
    pub fn validate(&self, span: usize) -> Result<()> {
        if self.le > span {
            return Err(Error::InvalidTruncation {
                requested: self.le,
                span,
            });
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("m_max must be >= 1".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("block length must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-offset couplings `theta_d = g_d / sigma^2`, `d = 1..=L_E`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCoupling {
    pub theta: Vec<f64>,
}

impl EdgeCoupling {
    pub fn new(profile: &IsiProfile, le: usize, sigma2: f64) -> Self {
        Self {
            theta: (1..=le).map(|d| profile.tap(d as isize) / sigma2).collect(),
        }
    }
}

/// One directed edge: the message `q` into `i` from neighbour `j = i -+ (d + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    /// Index of the opposite edge (into `j` from `i`).
    pub rev: usize,
    /// Zero-based offset index, `|i - j| - 1`.
    pub d: usize,
}

/// Edge storage uses slot `i * 2 L_E + d * 2 + side` (side 0: `j = i - d - 1`,
/// side 1: `j = i + d + 1`); slots that fall outside the block are absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorGraph {
    n: usize,
    le: usize,
    slots: Vec<Option<Edge>>,
}

impl FactorGraph {
    pub fn new(n: usize, le: usize) -> Self {
        let mut slots = Vec::with_capacity(n * 2 * le);
        for i in 0..n {
            for d in 0..le {
                let off = d + 1;
                for side in 0..2 {
                    let j = if side == 0 {
                        i.checked_sub(off)
                    } else {
                        Some(i + off).filter(|&j| j < n)
                    };
                    slots.push(j.map(|j| Edge {
                        i,
                        j,
                        rev: j * 2 * le + d * 2 + (1 - side),
                        d,
                    }));
                }
            }
        }
        Self { n, le, slots }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn le(&self) -> usize {
        self.le
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    /// `(slot, edge)` for every edge present, in slot order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, &Edge)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(k, e)| e.as_ref().map(|e| (k, e)))
    }
}

/// All messages of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    /// Channel LLRs.
    pub t: Vec<f64>,
    /// Prior LLRs from the decoder.
    pub o: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// APP LLRs.
    pub app: Vec<f64>,
}

impl MessageState {
    /// Fresh state: `p = q = u = v = 0`, `Q = clip(O + T)`.
    pub fn new(graph: &FactorGraph, t: Vec<f64>, o: Vec<f64>) -> Result<Self> {
        check_len("channel LLRs", graph.n(), t.len())?;
        check_len("prior LLRs", graph.n(), o.len())?;
        let app = t.iter().zip(&o).map(|(a, b)| clip_llr(b + a)).collect();
        Ok(Self {
            p: vec![0.0; graph.slot_count()],
            q: vec![0.0; graph.slot_count()],
            u: vec![0.0; graph.n()],
            v: vec![0.0; graph.n()],
            t,
            o,
            app,
        })
    }

    /// `O_i + T_i` (the fixed part of every APP update).
    pub fn base(&self) -> Vec<f64> {
        self.o.iter().zip(&self.t).map(|(o, t)| o + t).collect()
    }

    /// `Q - O`.
    pub fn extrinsic(&self) -> Vec<f64> {
        self.app.iter().zip(&self.o).map(|(q, o)| q - o).collect()
    }
}

/// One flooding sweep: `p = clip(Q_j - q_{j,i})`, `q = clip(f(p, theta_d varsigma_d))`,
/// `u_i = sum_j q_{i,j}`. `varsigma = None` means all scales are one.
pub fn sweep_messages(
    state: &mut MessageState,
    graph: &FactorGraph,
    coupling: &EdgeCoupling,
    varsigma: Option<&[f64]>,
) {
    let a = scaled(coupling, varsigma);
    for (k, e) in graph.edges() {
        state.p[k] = clip_llr(state.app[e.j] - state.q[e.rev]);
    }
    state.u.fill(0.0);
    for (k, e) in graph.edges() {
        let q = clip_llr(edge_message(state.p[k], a[e.d]));
        state.q[k] = q;
        state.u[e.i] += q;
    }
}

/// [`sweep_messages`] that also stores raw values and local derivatives.
/// Produces bitwise the same messages.
fn sweep_recorded(state: &mut MessageState, graph: &FactorGraph, a: &[f64], rec: &mut Recording) {
    let slots = graph.slot_count();
    let mut p_raw = vec![0.0; slots];
    let mut q_raw = vec![0.0; slots];
    let mut dq_dp = vec![0.0; slots];
    let mut dq_da = vec![0.0; slots];
    for (k, e) in graph.edges() {
        p_raw[k] = state.app[e.j] - state.q[e.rev];
        state.p[k] = clip_llr(p_raw[k]);
    }
    state.u.fill(0.0);
    for (k, e) in graph.edges() {
        let (q, dp, da) = edge_message_grad(state.p[k], a[e.d]);
        q_raw[k] = q;
        dq_dp[k] = dp;
        dq_da[k] = da;
        let q = clip_llr(q);
        state.q[k] = q;
        state.u[e.i] += q;
    }
    rec.p_raw.push(p_raw);
    rec.q_raw.push(q_raw);
    rec.dq_dp.push(dq_dp);
    rec.dq_da.push(dq_da);
}

/// `Q_i = clip((O_i + T_i + u_i) + v_i)`; with `v = None` the CNN term is absent.
pub fn accumulate_q(state: &mut MessageState, v: Option<&[f64]>) {
    for i in 0..state.app.len() {
        let mut x = state.o[i] + state.t[i] + state.u[i];
        if let Some(v) = v {
            x += v[i];
            state.v[i] = v[i];
        }
        state.app[i] = clip_llr(x);
    }
}

/// Values of an unfolded forward pass needed for the reverse pass.
#[derive(Debug, Clone, Default)]
pub struct Recording {
    /// Unclipped `p` per iteration (slot indexed).
    pub p_raw: Vec<Vec<f64>>,
    /// Unclipped `q` per iteration.
    pub q_raw: Vec<Vec<f64>>,
    /// `dq/dp` and `dq/da` of every edge message per iteration.
    pub dq_dp: Vec<Vec<f64>>,
    pub dq_da: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    /// Unclipped APP per iteration.
    pub app_raw: Vec<Vec<f64>>,
    /// Clipped APP for iterations `0..=m_max`.
    pub app: Vec<Vec<f64>>,
    pub cnn: Vec<CnnCache>,
}

/// Soft-in soft-out SPDA / DL-SPDA detector for one block length.
#[derive(Debug, Clone)]
pub struct SpdaDetector {
    cfg: FgConfig,
    profile: IsiProfile,
    graph: FactorGraph,
    model: Option<Arc<CnnModel>>,
}

impl SpdaDetector {
    /// `profile` is the detector's channel knowledge; only `g_0..=g_{L_E}` is used.
    pub fn new(profile: &IsiProfile, cfg: FgConfig, model: Option<Arc<CnnModel>>) -> Result<Self> {
        cfg.validate(profile.span())?;
        if cfg.use_nn {
            let m = model.as_ref().ok_or(Error::MissingModel)?;
            check_model(m, &cfg)?;
        }
        Ok(Self {
            cfg,
            profile: profile.truncated(cfg.le)?,
            graph: FactorGraph::new(cfg.n, cfg.le),
            model: if cfg.use_nn { model } else { None },
        })
    }

    pub fn config(&self) -> &FgConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &FactorGraph {
        &self.graph
    }

    pub fn profile(&self) -> &IsiProfile {
        &self.profile
    }

    pub fn model(&self) -> Option<&CnnModel> {
        self.model.as_deref()
    }

    pub fn coupling(&self, sigma2: f64) -> EdgeCoupling {
        EdgeCoupling::new(&self.profile, self.cfg.le, sigma2)
    }

    /// Extrinsic LLRs `Q^{m_max} - O`.
    pub fn detect(&self, y: &[f64], prior: &[f64], sigma2: f64) -> Result<Vec<f64>> {
        let t = channel_llr(y, sigma2)?;
        let state = self.run(t, prior.to_vec(), sigma2, None)?;
        Ok(state.extrinsic())
    }

    /// APP LLRs after each iteration, `Q^1..=Q^{m_max}`.
    pub fn trajectory(&self, y: &[f64], prior: &[f64], sigma2: f64) -> Result<Vec<Vec<f64>>> {
        let t = channel_llr(y, sigma2)?;
        let mut rec = Recording::default();
        self.run(t, prior.to_vec(), sigma2, Some(&mut rec))?;
        Ok(rec.app.split_off(1))
    }

    /// Runs all iterations from given channel and prior LLRs.
    pub fn run(
        &self,
        t: Vec<f64>,
        o: Vec<f64>,
        sigma2: f64,
        mut rec: Option<&mut Recording>,
    ) -> Result<MessageState> {
        let mut state = MessageState::new(&self.graph, t, o)?;
        let coupling = self.coupling(sigma2);
        if let Some(r) = rec.as_deref_mut() {
            *r = Recording::default();
            r.app.push(state.app.clone());
        }
        let mut cache = CnnCache::default();
        let mut v = Vec::with_capacity(self.cfg.n);
        for m in 0..self.cfg.iterations {
            let varsigma = self.model.as_ref().map(|md| md.varsigma(m));
            match rec.as_deref_mut() {
                Some(r) => sweep_recorded(&mut state, &self.graph, &scaled(&coupling, varsigma), r),
                None => sweep_messages(&mut state, &self.graph, &coupling, varsigma),
            }
            match &self.model {
                Some(md) => {
                    cnn_forward_cached(&state.u, &md.layer(m), &md.hyper, &mut cache, &mut v)?;
                    accumulate_q(&mut state, Some(&v));
                }
                None => accumulate_q(&mut state, None),
            }
            if let Some(r) = rec.as_deref_mut() {
                r.u.push(state.u.clone());
                let raw = (0..self.cfg.n)
                    .map(|i| {
                        let x = state.o[i] + state.t[i] + state.u[i];
                        if self.model.is_some() {
                            x + v[i]
                        } else {
                            x
                        }
                    })
                    .collect();
                r.app_raw.push(raw);
                r.app.push(state.app.clone());
                r.cnn.push(std::mem::take(&mut cache));
            }
        }
        Ok(state)
    }
}

fn scaled(coupling: &EdgeCoupling, varsigma: Option<&[f64]>) -> Vec<f64> {
    match varsigma {
        Some(s) => coupling.theta.iter().zip(s).map(|(t, s)| t * s).collect(),
        None => coupling.theta.clone(),
    }
}

/// Checks that a model's dimensions match the detector configuration.
pub fn check_model(model: &CnnModel, cfg: &FgConfig) -> Result<()> {
    if model.n() != cfg.n {
        return Err(Error::ShapeMismatch {
            layer: "dense layer".into(),
            expected: format!("{} outputs", cfg.n),
            found: format!("{} outputs", model.n()),
        });
    }
    if model.le() != cfg.le {
        return Err(Error::ShapeMismatch {
            layer: "edge scales".into(),
            expected: format!("L_E = {}", cfg.le),
            found: format!("L_E = {}", model.le()),
        });
    }
    if model.iterations() != cfg.iterations {
        return Err(Error::ShapeMismatch {
            layer: "unfolded iterations".into(),
            expected: format!("m_max = {}", cfg.iterations),
            found: format!("m_max = {}", model.iterations()),
        });
    }
    Ok(())
}

/// Convenience wrapper: one detector call with a freshly built detector.
pub fn detect(
    y: &[f64],
    prior: &[f64],
    profile: &IsiProfile,
    sigma2: f64,
    cfg: FgConfig,
    model: Option<Arc<CnnModel>>,
) -> Result<Vec<f64>> {
    SpdaDetector::new(profile, cfg, model)?.detect(y, prior, sigma2)
}

//! Distance-based error analysis: pairwise error probabilities, the residual-ISI
//! variance bound, convolutional-code error events, FTN distance spectra and
//! the resulting union bounds.

use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;

use crate::coding::CcSpec;
use crate::error::{check_len, Error, Result};
use crate::ftn::{build_gram, isi_taps, GramMatrix, PulseSpec, DEFAULT_SPAN};
use crate::math::{binomial, db_to_linear, q_function, stream_rng};

pub use crate::oracle::{brute_force_map, brute_force_ml};

/// `e = x - x'` with entries in `{0, +2, -2}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ErrorSequence {
    entries: Vec<i8>,
}

impl ErrorSequence {
    pub fn new(entries: Vec<i8>) -> Result<Self> {
        if let Some(bad) = entries.iter().find(|v| !matches!(v, -2 | 0 | 2)) {
            return Err(Error::InvalidParameter(format!(
                "error sequence entries must be 0 or +-2, found {bad}"
            )));
        }
        Ok(Self { entries })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            entries: vec![0; n],
        }
    }

    /// Builds a length-`n` sequence from `(position, sign)` pairs (`sign = +-1`).
    pub fn from_support(n: usize, support: &[(usize, i8)]) -> Result<Self> {
        let mut entries = vec![0i8; n];
        for &(p, s) in support {
            if p >= n || s.abs() != 1 {
                return Err(Error::InvalidParameter(format!(
                    "support entry ({p}, {s}) invalid for length {n}"
                )));
            }
            entries[p] = 2 * s;
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[i8] {
        &self.entries
    }

    /// Positions of the nonzero entries.
    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.entries[i] != 0).collect()
    }

    pub fn weight(&self) -> usize {
        self.entries.iter().filter(|&&v| v != 0).count()
    }

    fn sparse(&self) -> Vec<(usize, f64)> {
        self.support()
            .into_iter()
            .map(|i| (i, self.entries[i] as f64))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distances {
    pub d2: f64,
    pub d2_ope: f64,
    pub weight: usize,
}

/// `d^2 = e^T G e / (2 E_b)`, `d^2_ope = e^T F e / (2 E_b)` and the Hamming weight.
pub fn distances(e: &ErrorSequence, g: &GramMatrix, f: &GramMatrix, eb: f64) -> Result<Distances> {
    check_len("error sequence", g.order(), e.len())?;
    check_len("error sequence", f.order(), e.len())?;
    let s = e.sparse();
    Ok(Distances {
        d2: g.sparse_quadratic(&s) / (2.0 * eb),
        d2_ope: f.sparse_quadratic(&s) / (2.0 * eb),
        weight: s.len(),
    })
}

/// `Q(sqrt(d^2 E_b / N_0))`.
pub fn pairwise_error_prob(d2: f64, ebn0: f64) -> f64 {
    q_function((d2 * ebn0).sqrt())
}

/// `[(G - F) e]_j` at each support position `j`.
fn residual_at_support(e: &ErrorSequence, g: &GramMatrix, f: &GramMatrix) -> Vec<(usize, f64)> {
    let s = e.sparse();
    s.iter()
        .map(|&(j, _)| {
            let r = s
                .iter()
                .map(|&(k, v)| (g.get(j, k) - f.get(j, k)) * v)
                .sum();
            (j, r)
        })
        .collect()
}

/// Lower bound on the residual-ISI variance:
/// `[sum_{j in P} x_j [(G - F) e]_j]^2 / (2 E_b)` with `x_j = e_j / 2`.
pub fn sigma_rl(e: &ErrorSequence, g: &GramMatrix, f: &GramMatrix, eb: f64) -> Result<f64> {
    check_len("error sequence", g.order(), e.len())?;
    check_len("error sequence", f.order(), e.len())?;
    let a: f64 = residual_at_support(e, g, f)
        .iter()
        .map(|&(j, r)| 0.5 * e.entries[j] as f64 * r)
        .sum();
    Ok(a * a / (2.0 * eb))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Monte Carlo estimate of `E[(x^T (G - F) e)^2] / (2 E_b)` with `x` pinned to
/// `e_j / 2` on the support and uniform `+-1` elsewhere.
pub fn sigma_r_oracle<R: Rng + ?Sized>(
    e: &ErrorSequence,
    g: &GramMatrix,
    f: &GramMatrix,
    eb: f64,
    rng: &mut R,
    samples: usize,
) -> Result<McEstimate> {
    check_len("error sequence", g.order(), e.len())?;
    check_len("error sequence", f.order(), e.len())?;
    if samples < 1000 {
        return Err(Error::InvalidParameter(format!(
            "sigma_R estimate needs >= 1000 samples, got {samples}"
        )));
    }
    let n = e.len();
    let ev: Vec<f64> = e.entries.iter().map(|&v| v as f64).collect();
    let (ge, fe) = (g.mul_vec(&ev), f.mul_vec(&ev));
    let b: Vec<f64> = ge.iter().zip(&fe).map(|(a, c)| a - c).collect();
    let fixed: f64 = (0..n)
        .filter(|&j| e.entries[j] != 0)
        .map(|j| 0.5 * ev[j] * b[j])
        .sum();
    let free: Vec<f64> = (0..n)
        .filter(|&j| e.entries[j] == 0 && b[j] != 0.0)
        .map(|j| b[j])
        .collect();
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..samples {
        let z: f64 = fixed
            + free
                .iter()
                .map(|&bj| if rng.gen::<bool>() { bj } else { -bj })
                .sum::<f64>();
        let v = z * z / (2.0 * eb);
        s1 += v;
        s2 += v * v;
    }
    let mean = s1 / samples as f64;
    let var = (s2 / samples as f64 - mean * mean).max(0.0);
    Ok(McEstimate {
        mean,
        stderr: (var / samples as f64).sqrt(),
        samples,
    })
}

/// Finite-tap pairwise error probability `Q(sqrt((E_b/N_0) d^4_ope / (d^2 + 2 sigma_R^2 / N_0)))`.
///
/// `sigma_r2` carries energy units, so `E_b` is needed to form `N_0`.
pub fn finite_tap_error_prob(d2: f64, d2_ope: f64, sigma_r2: f64, ebn0: f64, eb: f64) -> f64 {
    if d2_ope <= 0.0 {
        return 0.5;
    }
    let n0 = eb / ebn0;
    let ratio = d2_ope / (d2 + 2.0 * sigma_r2 / n0);
    q_function((ebn0 * d2_ope * ratio).sqrt())
}

/// Signs-and-lags summary of a sparse error pattern: `c_k = sum s_a s_b` over
/// support pairs at distance `k`, for `k = 1..=L`. Distances depend only on it.
type LagKey = Vec<i16>;

fn lag_key(positions: &[usize], signs: &[i8], span: usize) -> LagKey {
    let mut c = vec![0i16; span];
    for a in 0..positions.len() {
        for b in a + 1..positions.len() {
            let k = positions[b] - positions[a];
            if k >= 1 && k <= span {
                c[k - 1] += (signs[a] * signs[b]) as i16;
            }
        }
    }
    c
}

/// `sum_{a,b} s_a s_b t_{|a-b|}` from a lag key.
fn key_quadratic(w: usize, key: &[i16], taps: &[f64]) -> f64 {
    let mut acc = w as f64 * taps[0];
    for (k, &c) in key.iter().enumerate() {
        if let Some(t) = taps.get(k + 1) {
            acc += 2.0 * c as f64 * t;
        }
    }
    acc
}

/// Bookkeeping for one convolutional-code single error event.
#[derive(Debug, Clone, PartialEq)]
pub struct CcErrorEvent {
    /// Information bits that differ.
    pub info_diff: usize,
    /// Trellis steps from divergence to remerge.
    pub length: usize,
    /// Hamming weight of the code-bit difference.
    pub weight: usize,
    pub code_pattern: Vec<u8>,
    pub info_pattern: Vec<u8>,
    /// Average number of correct codewords (per start position) exhibiting it.
    pub multiplicity: f64,
}

/// Enumerates single error events with code weight `<= w_max` by searching
/// pairs of trellis paths that leave a common state and remerge once.
///
/// Events are averaged over a uniformly random correct path, so the search does
/// not rely on linearity.
pub fn cc_error_events(spec: &CcSpec, w_max: usize, k_prime: usize) -> Result<Vec<CcErrorEvent>> {
    let d_min = spec.free_distance();
    if w_max < d_min {
        return Err(Error::InvalidParameter(format!(
            "w_max = {w_max} below the free distance {d_min}"
        )));
    }
    let max_len = k_prime + spec.memory;
    let states = spec.states();
    let mut found: BTreeMap<(Vec<u8>, Vec<u8>), (usize, usize, usize, f64)> = BTreeMap::new();

    struct Walk<'a> {
        spec: &'a CcSpec,
        w_max: usize,
        max_len: usize,
        code: Vec<u8>,
        info: Vec<u8>,
    }
    fn dfs(
        walk: &mut Walk<'_>,
        sc: usize,
        se: usize,
        weight: usize,
        prob: f64,
        out: &mut BTreeMap<(Vec<u8>, Vec<u8>), (usize, usize, usize, f64)>,
    ) {
        let depth = walk.info.len();
        if depth > 0 && sc == se {
            let info_diff = walk.info.iter().filter(|&&b| b == 1).count();
            let entry = out
                .entry((walk.info.clone(), walk.code.clone()))
                .or_insert((info_diff, depth, weight, 0.0));
            entry.3 += prob;
            return;
        }
        if depth == walk.max_len {
            return;
        }
        for uc in 0..2u8 {
            for ue in 0..2u8 {
                if depth == 0 && uc == ue {
                    continue;
                }
                let (nc, oc) = walk.spec.step(sc, uc);
                let (ne, oe) = walk.spec.step(se, ue);
                let d = [oc[0] ^ oe[0], oc[1] ^ oe[1]];
                let w = weight + (d[0] + d[1]) as usize;
                if w > walk.w_max {
                    continue;
                }
                walk.info.push(uc ^ ue);
                walk.code.extend_from_slice(&d);
                dfs(walk, nc, ne, w, prob * 0.5, out);
                walk.info.pop();
                walk.code.truncate(walk.code.len() - 2);
            }
        }
    }

    for s0 in 0..states {
        let mut walk = Walk {
            spec,
            w_max,
            max_len,
            code: Vec::new(),
            info: Vec::new(),
        };
        dfs(&mut walk, s0, s0, 0, 1.0 / states as f64, &mut found);
    }
    let mut events: Vec<CcErrorEvent> = found
        .into_iter()
        .map(
            |((info_pattern, code_pattern), (info_diff, length, weight, multiplicity))| {
                CcErrorEvent {
                    info_diff,
                    length,
                    weight,
                    code_pattern,
                    info_pattern,
                    multiplicity,
                }
            },
        )
        .collect();
    events.sort_by(|a, b| {
        (a.weight, a.length, &a.info_pattern).cmp(&(b.weight, b.length, &b.info_pattern))
    });
    Ok(events)
}

/// One `(D_o, d^2, d^2_ope)` class of FTN error sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGroup {
    pub multiplicity: f64,
    pub d2: f64,
    pub d2_ope: f64,
    pub sigma_rl: f64,
    /// Largest deviation of any member's directly computed `sigma_RL` from the group value.
    pub sigma_rl_spread: f64,
    /// True when some of the multiplicity comes from Monte Carlo sampling.
    pub sampled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSpectrum {
    pub weight: usize,
    /// Total FTN error sequences for the event, `C(N, w) 2^w`.
    pub total: f64,
    pub window: usize,
    /// Sequences counted exactly by windowed enumeration.
    pub enumerated: f64,
    /// Monte Carlo placements drawn for the remainder (0 when fully exact).
    pub mc_samples: usize,
    pub groups: Vec<SpectrumGroup>,
}

impl DistanceSpectrum {
    pub fn multiplicity_sum(&self) -> f64 {
        self.groups.iter().map(|g| g.multiplicity).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumOptions {
    pub window: usize,
    pub eb: f64,
    pub mc_samples: usize,
    /// Largest number of windowed patterns enumerated before switching to sampling.
    pub budget: usize,
}

struct GroupAcc {
    multiplicity: f64,
    sigma_min: f64,
    sigma_max: f64,
    sampled: bool,
}

struct SpectrumBuilder<'a> {
    g: &'a GramMatrix,
    f: &'a GramMatrix,
    eb: f64,
    span: usize,
    groups: BTreeMap<LagKey, GroupAcc>,
}

impl SpectrumBuilder<'_> {
    fn add(&mut self, positions: &[usize], signs: &[i8], weight: f64, sampled: bool) {
        let key = lag_key(positions, signs, self.span);
        // Independent per-position evaluation, used to validate group membership.
        let mut proj = 0.0;
        for (a, &pa) in positions.iter().enumerate() {
            let mut r = 0.0;
            for (b, &pb) in positions.iter().enumerate() {
                r += (self.g.get(pa, pb) - self.f.get(pa, pb)) * 2.0 * signs[b] as f64;
            }
            proj += signs[a] as f64 * r;
        }
        let sigma = proj * proj / (2.0 * self.eb);
        let acc = self.groups.entry(key).or_insert(GroupAcc {
            multiplicity: 0.0,
            sigma_min: f64::INFINITY,
            sigma_max: f64::NEG_INFINITY,
            sampled: false,
        });
        acc.multiplicity += weight;
        acc.sigma_min = acc.sigma_min.min(sigma);
        acc.sigma_max = acc.sigma_max.max(sigma);
        acc.sampled |= sampled;
    }

    fn finish(self, w: usize) -> Vec<SpectrumGroup> {
        let gt = self.g.profile().one_sided();
        let ft = self.f.profile().one_sided();
        let mut out: Vec<SpectrumGroup> = self
            .groups
            .into_iter()
            .map(|(key, acc)| {
                let qg = key_quadratic(w, &key, gt);
                let qf = key_quadratic(w, &key, ft);
                let residual: f64 = key
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| k + 1 < gt.len())
                    .map(|(k, &c)| {
                        2.0 * c as f64 * (gt[k + 1] - ft.get(k + 1).copied().unwrap_or(0.0))
                    })
                    .sum();
                let proj = 2.0 * residual;
                let sigma = proj * proj / (2.0 * self.eb);
                let spread = (acc.sigma_max - sigma)
                    .abs()
                    .max((acc.sigma_min - sigma).abs());
                SpectrumGroup {
                    multiplicity: acc.multiplicity,
                    d2: 4.0 * qg / (2.0 * self.eb),
                    d2_ope: 4.0 * qf / (2.0 * self.eb),
                    sigma_rl: sigma,
                    sigma_rl_spread: spread,
                    sampled: acc.sampled,
                }
            })
            .collect();
        out.sort_by(|a, b| {
            a.d2.total_cmp(&b.d2)
                .then(a.d2_ope.total_cmp(&b.d2_ope))
                .then(a.multiplicity.total_cmp(&b.multiplicity))
        });
        out
    }
}

/// Calls `visit(positions, span)` for every support of size `w` starting at 0
/// with span `<= window`.
fn for_each_window_support(w: usize, window: usize, mut visit: impl FnMut(&[usize])) {
    fn rec(pos: &mut Vec<usize>, w: usize, window: usize, visit: &mut dyn FnMut(&[usize])) {
        if pos.len() == w {
            visit(pos);
            return;
        }
        let last = *pos.last().unwrap();
        let remaining = w - pos.len();
        for p in last + 1..=window - remaining {
            pos.push(p);
            rec(pos, w, window, visit);
            pos.pop();
        }
    }
    if w == 0 || window < w {
        return;
    }
    let mut pos = vec![0usize];
    rec(&mut pos, w, window, &mut visit);
}

fn for_each_sign_class(w: usize, mut visit: impl FnMut(&[i8])) {
    let mut signs = vec![1i8; w];
    for mask in 0u32..(1 << (w - 1)) {
        for (b, s) in signs.iter_mut().enumerate().skip(1) {
            *s = if (mask >> (b - 1)) & 1 == 1 { -1 } else { 1 };
        }
        visit(&signs);
    }
}

/// Number of sequences with weight `w` whose support spans at most `window` in
/// a block of `n`: `sum_s C(s-2, w-2) (n - s + 1) 2^w`.
fn windowed_count(n: usize, w: usize, window: usize) -> f64 {
    if w == 1 {
        return 2.0 * n as f64;
    }
    (w..=window.min(n))
        .map(|s| binomial((s - 2) as u64, (w - 2) as u64) * (n - s + 1) as f64)
        .sum::<f64>()
        * 2f64.powi(w as i32)
}

/// Distance spectrum of the FTN error sequences induced by `event` under a
/// uniform interleaver over `N = g.order()` symbols.
///
/// Supports with span `<= window` are enumerated exactly (shift multiplicity
/// `N - span + 1`, global sign folded in); the remaining placements are
/// represented by `mc_samples` uniform draws weighted to their exact count.
/// Above `budget` windowed patterns the whole spectrum is sampled.
pub fn ftn_event_spectrum<R: Rng + ?Sized>(
    event: &CcErrorEvent,
    g: &GramMatrix,
    f: &GramMatrix,
    opts: &SpectrumOptions,
    rng: &mut R,
) -> Result<DistanceSpectrum> {
    spectrum_for_weight(event.weight, g, f, opts, rng)
}

fn spectrum_for_weight<R: Rng + ?Sized>(
    w: usize,
    g: &GramMatrix,
    f: &GramMatrix,
    opts: &SpectrumOptions,
    rng: &mut R,
) -> Result<DistanceSpectrum> {
    let n = g.order();
    check_len("truncated Gram order", n, f.order())?;
    if w == 0 || w > n {
        return Err(Error::InvalidParameter(format!(
            "event weight {w} outside 1..={n}"
        )));
    }
    if opts.window < w {
        return Err(Error::InvalidParameter(format!(
            "window {} shorter than event weight {w}",
            opts.window
        )));
    }
    let total = binomial(n as u64, w as u64) * 2f64.powi(w as i32);
    let window = opts.window.min(n);
    let patterns = binomial((window - 1) as u64, (w - 1) as u64) * 2f64.powi(w as i32 - 1);
    let exhaustive_window = patterns <= opts.budget as f64;
    let mut b = SpectrumBuilder {
        g,
        f,
        eb: opts.eb,
        span: g.bandwidth(),
        groups: BTreeMap::new(),
    };
    let mut enumerated = 0.0;
    if exhaustive_window {
        for_each_window_support(w, window, |pos| {
            let span = pos[w - 1] + 1;
            let mult = 2.0 * (n - span + 1) as f64;
            for_each_sign_class(w, |signs| {
                b.add(pos, signs, mult, false);
                enumerated += mult;
            });
        });
    }
    let remainder = total - enumerated;
    let exact_by_window = exhaustive_window && window == n;
    let mut mc_samples = 0;
    if !exact_by_window && remainder > 0.0 {
        if opts.mc_samples == 0 {
            return Err(Error::BudgetExceeded(format!(
                "weight-{w} spectrum needs Monte Carlo samples for {remainder:.3e} placements"
            )));
        }
        let weight = remainder / opts.mc_samples as f64;
        let mut signs = vec![1i8; w];
        while mc_samples < opts.mc_samples {
            let mut pos = sample_indices(rng, n, w).into_vec();
            pos.sort_unstable();
            if exhaustive_window && pos[w - 1] - pos[0] < window {
                continue;
            }
            for s in signs.iter_mut() {
                *s = if rng.gen::<bool>() { 1 } else { -1 };
            }
            b.add(&pos, &signs, weight, true);
            mc_samples += 1;
        }
    }
    Ok(DistanceSpectrum {
        weight: w,
        total,
        window,
        enumerated,
        mc_samples,
        groups: b.finish(w),
    })
}

/// Inputs to the coded bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundConfig {
    pub pulse: PulseSpec,
    pub le: usize,
    /// Interleaved code symbols per block.
    pub n: usize,
    /// Information bits per block.
    pub k: usize,
    /// Known symbols per side appended for trellis termination (count towards `E_b`).
    pub guard: usize,
    pub spec: CcSpec,
    pub w_max: usize,
    pub window: usize,
    pub k_prime: usize,
    pub ebn0_db: Vec<f64>,
    pub mc_samples: usize,
    pub budget: usize,
    pub seed: u64,
}

impl BoundConfig {
    /// Defaults for the (7,5) code, `K = 123`, `N = 250`, roll-off 0.3, `L = 11`.
    pub fn new(tau: f64, le: usize) -> Result<Self> {
        Ok(Self {
            pulse: PulseSpec::new(tau, 0.3, DEFAULT_SPAN)?,
            le,
            n: 250,
            k: 123,
            guard: 0,
            spec: CcSpec::CC_7_5,
            w_max: 8,
            window: 18,
            k_prime: 12,
            ebn0_db: (0..=20).map(|i| i as f64 * 0.5).collect(),
            mc_samples: 20_000,
            budget: 5_000_000,
            seed: 1,
        })
    }

    /// Information bits per transmitted symbol.
    pub fn rate(&self) -> f64 {
        self.k as f64 / (self.n + 2 * self.guard) as f64
    }

    pub fn eb(&self) -> f64 {
        1.0 / self.rate()
    }

    pub fn d_min(&self) -> usize {
        self.spec.free_distance()
    }

    /// `floor(N R / K_b - L_eps + 1)`, clamped at zero.
    pub fn event_positions(&self, length: usize) -> f64 {
        let v = self.n as f64 * self.rate() - length as f64 + 1.0;
        (v + 1e-9).floor().max(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.le > self.pulse.span {
            return Err(Error::InvalidTruncation {
                requested: self.le,
                span: self.pulse.span,
            });
        }
        if self.w_max < self.d_min() {
            return Err(Error::InvalidParameter(format!(
                "w_max = {} below d_min = {}",
                self.w_max,
                self.d_min()
            )));
        }
        if self.window < self.w_max {
            return Err(Error::InvalidParameter(format!(
                "window {} shorter than w_max {}",
                self.window, self.w_max
            )));
        }
        if self.k == 0 || self.spec.code_len(self.k) != self.n {
            return Err(Error::InvalidParameter(format!(
                "K = {} does not produce N = {} code bits",
                self.k, self.n
            )));
        }
        Ok(())
    }
}

/// Which probability each spectrum group contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    /// Full-tap ML: `Q(sqrt(d^2 E_b/N_0))`.
    FullTaps,
    /// Finite-tap ML: the residual-ISI-aware probability with `sigma_RL`.
    FiniteTaps,
}

/// Evaluates the coded bound at every SNR in `cfg.ebn0_db`.
///
/// `spectra[i]` belongs to `events[i]`.
pub fn coded_bound(
    cfg: &BoundConfig,
    events: &[CcErrorEvent],
    spectra: &[DistanceSpectrum],
    kind: BoundKind,
) -> Result<Vec<f64>> {
    check_len("spectra", events.len(), spectra.len())?;
    let eb = cfg.eb();
    let nr = cfg.n as f64 * cfg.rate();
    Ok(cfg
        .ebn0_db
        .iter()
        .map(|&db| {
            let ebn0 = db_to_linear(db);
            let mut pb = 0.0;
            for (ev, sp) in events.iter().zip(spectra) {
                let scale = ev.multiplicity * ev.info_diff as f64 / nr
                    * cfg.event_positions(ev.length)
                    / sp.total;
                let mut inner = 0.0;
                for grp in &sp.groups {
                    let p = match kind {
                        BoundKind::FullTaps => pairwise_error_prob(grp.d2, ebn0),
                        BoundKind::FiniteTaps => {
                            finite_tap_error_prob(grp.d2, grp.d2_ope, grp.sigma_rl, ebn0, eb)
                        }
                    };
                    inner += grp.multiplicity * p;
                }
                pb += scale * inner;
            }
            pb
        })
        .collect())
}

/// Events, per-event spectra and both bound curves.
#[derive(Debug, Clone)]
pub struct BoundCurve {
    pub ebn0_db: Vec<f64>,
    pub full_taps: Vec<f64>,
    pub finite_taps: Vec<f64>,
    pub events: Vec<CcErrorEvent>,
    pub spectra: Vec<DistanceSpectrum>,
}

/// Runs the full bound pipeline for `cfg`. Spectra depend only on the event
/// weight, so one spectrum per weight is computed (in parallel) and shared.
pub fn bound_curve(cfg: &BoundConfig) -> Result<BoundCurve> {
    cfg.validate()?;
    let profile = isi_taps(&cfg.pulse);
    let g = build_gram(&profile, cfg.n)?;
    let f = g.truncate(cfg.le)?.into_inner();
    let events = cc_error_events(&cfg.spec, cfg.w_max, cfg.k_prime)?;
    let opts = SpectrumOptions {
        window: cfg.window,
        eb: cfg.eb(),
        mc_samples: cfg.mc_samples,
        budget: cfg.budget,
    };
    let mut weights: Vec<usize> = events.iter().map(|e| e.weight).collect();
    weights.dedup();
    let by_weight: Vec<(usize, DistanceSpectrum)> = weights
        .par_iter()
        .map(|&w| {
            let mut rng = stream_rng(cfg.seed, &[w as u64]);
            spectrum_for_weight(w, &g, &f, &opts, &mut rng).map(|s| (w, s))
        })
        .collect::<Result<_>>()?;
    let spectra: Vec<DistanceSpectrum> = events
        .iter()
        .map(|e| {
            by_weight
                .iter()
                .find(|(w, _)| *w == e.weight)
                .map(|(_, s)| s.clone())
                .expect("spectrum computed for every event weight")
        })
        .collect();
    let full_taps = coded_bound(cfg, &events, &spectra, BoundKind::FullTaps)?;
    let finite_taps = coded_bound(cfg, &events, &spectra, BoundKind::FiniteTaps)?;
    Ok(BoundCurve {
        ebn0_db: cfg.ebn0_db.clone(),
        full_taps,
        finite_taps,
        events,
        spectra,
    })
}

/// Uncoded union bound `sum_w sum_j w / (2^w N) Q(sqrt(d^2 E_b/N_0))` with `E_b = 1`.
///
/// Blocks with `3^N <= budget` are enumerated exhaustively; larger blocks use
/// supports of span `<= window` with exact shift multiplicities (terms with
/// wider supports are omitted).
pub fn uncoded_union_bound(
    g: &GramMatrix,
    w_max: usize,
    window: usize,
    ebn0_db: &[f64],
    budget: usize,
) -> Result<Vec<f64>> {
    let n = g.order();
    if w_max == 0 || w_max > n {
        return Err(Error::InvalidParameter(format!(
            "w_max = {w_max} must lie in 1..={n}"
        )));
    }
    // (weight, d^2, multiplicity) terms
    let mut terms: Vec<(usize, f64, f64)> = Vec::new();
    let exhaustive = (n as f64) * 3f64.ln() <= (budget as f64).ln();
    if exhaustive {
        let mut digits = vec![0u8; n];
        let total = 3usize.pow(n as u32);
        for _ in 1..total {
            for d in digits.iter_mut() {
                *d = (*d + 1) % 3;
                if *d != 0 {
                    break;
                }
            }
            let s: Vec<(usize, f64)> = digits
                .iter()
                .enumerate()
                .filter(|(_, &d)| d != 0)
                .map(|(i, &d)| (i, if d == 1 { 2.0 } else { -2.0 }))
                .collect();
            if s.len() <= w_max {
                terms.push((s.len(), g.sparse_quadratic(&s) / 2.0, 1.0));
            }
        }
    } else {
        let taps = g.profile().one_sided();
        let mut counted = 0.0;
        for w in 1..=w_max {
            let patterns = binomial((window - 1) as u64, (w - 1) as u64) * 2f64.powi(w as i32 - 1);
            counted += patterns;
            if counted > budget as f64 {
                return Err(Error::BudgetExceeded(format!(
                    "windowed union bound needs more than {budget} patterns"
                )));
            }
            let mut groups: BTreeMap<LagKey, f64> = BTreeMap::new();
            for_each_window_support(w, window.min(n), |pos| {
                let span = pos[w - 1] + 1;
                for_each_sign_class(w, |signs| {
                    *groups
                        .entry(lag_key(pos, signs, g.bandwidth()))
                        .or_default() += 2.0 * (n - span + 1) as f64;
                });
            });
            for (key, mult) in groups {
                terms.push((w, 4.0 * key_quadratic(w, &key, taps) / 2.0, mult));
            }
        }
    }
    Ok(ebn0_db
        .iter()
        .map(|&db| {
            let ebn0 = db_to_linear(db);
            terms
                .iter()
                .map(|&(w, d2, m)| {
                    m * w as f64 / (2f64.powi(w as i32) * n as f64) * pairwise_error_prob(d2, ebn0)
                })
                .sum()
        })
        .collect())
}

/// Total FTN error sequences spanning at most `window` symbols (exposed for tests and reports).
pub fn windowed_sequence_count(n: usize, w: usize, window: usize) -> f64 {
    windowed_count(n, w, window)
}

//! Rate-1/2 (7,5) feedforward convolutional code with zero-tail termination,
//! a seeded uniform interleaver, and a log-MAP (BCJR) soft-in soft-out decoder.
//!
//! LLRs are `ln P(bit = 0) / P(bit = 1)` throughout, so positive values favor
//! bit 0 and therefore symbol +1.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::math::max_star;

/// Trellis description of a rate-1/2 feedforward code with memory 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CcSpec {
    /// Generator polynomials in octal notation, MSB = current input.
    pub generators: [u8; 2],
    pub memory: usize,
}

impl Default for CcSpec {
    fn default() -> Self {
        Self::CC_7_5
    }
}

impl CcSpec {
    pub const CC_7_5: CcSpec = CcSpec {
        generators: [0o7, 0o5],
        memory: 2,
    };

    pub const INPUTS_PER_STEP: usize = 1;
    pub const OUTPUTS_PER_STEP: usize = 2;

    pub fn states(&self) -> usize {
        1 << self.memory
    }

    /// Minimum free distance of the (7,5) code.
    pub fn free_distance(&self) -> usize {
        5
    }

    /// Number of code bits for `k` information bits, including the tail.
    pub fn code_len(&self, k: usize) -> usize {
        (k + self.memory) * Self::OUTPUTS_PER_STEP
    }

    /// `(next_state, [c1, c2])` for `input` leaving `state`.
    ///
    /// The state holds the last `memory` inputs, most recent in the high bit.
    #[inline]
    pub fn step(&self, state: usize, input: u8) -> (usize, [u8; 2]) {
        let reg = ((input as usize) << self.memory) | state;
        let out = |g: u8| ((reg & g as usize).count_ones() & 1) as u8;
        let next = reg >> 1;
        (next, [out(self.generators[0]), out(self.generators[1])])
    }
}

/// Encodes `bits` and appends the `memory` zero tail bits, so the encoder ends in state 0.
pub fn cc_encode(bits: &[u8], spec: &CcSpec) -> Vec<u8> {
    let mut out = Vec::with_capacity(spec.code_len(bits.len()));
    let mut state = 0;
    let tail = std::iter::repeat_n(0u8, spec.memory);
    for b in bits.iter().copied().chain(tail) {
        let (next, c) = spec.step(state, b & 1);
        out.extend_from_slice(&c);
        state = next;
    }
    debug_assert_eq!(state, 0);
    out
}

/// Seeded uniform random permutation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interleaver {
    perm: Vec<usize>,
}

impl Interleaver {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..len).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self { perm }
    }

    pub fn identity(len: usize) -> Self {
        Self {
            perm: (0..len).collect(),
        }
    }

    pub fn from_permutation(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidParameter(
                    "interleaver table is not a permutation".into(),
                ));
            }
        }
        Ok(Self { perm })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// `out[i] = v[perm[i]]`.
    pub fn interleave<T: Copy>(&self, v: &[T]) -> Result<Vec<T>> {
        check_len("interleaver input", self.perm.len(), v.len())?;
        Ok(self.perm.iter().map(|&p| v[p]).collect())
    }

    /// Inverse of [`Interleaver::interleave`].
    pub fn deinterleave<T: Copy + Default>(&self, v: &[T]) -> Result<Vec<T>> {
        check_len("deinterleaver input", self.perm.len(), v.len())?;
        let mut out = vec![T::default(); v.len()];
        for (&p, &x) in self.perm.iter().zip(v) {
            out[p] = x;
        }
        Ok(out)
    }
}

/// Log-MAP kernel selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MapKernel {
    /// Exact max* with the logarithmic correction term.
    #[default]
    LogMap,
    /// Correction dropped: max-log-MAP.
    MaxLog,
}

impl MapKernel {
    #[inline]
    fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            MapKernel::LogMap => max_star(a, b),
            MapKernel::MaxLog => a.max(b),
        }
    }
}

/// Soft outputs of the convolutional decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutput {
    /// APP LLRs of the `K` information bits.
    pub info_app: Vec<f64>,
    /// APP LLRs of every code bit (tail included).
    pub code_app: Vec<f64>,
    /// `code_app - channel_llr`.
    pub code_extrinsic: Vec<f64>,
}

impl DecoderOutput {
    pub fn hard_info(&self) -> Vec<u8> {
        self.info_app
            .iter()
            .map(|&l| crate::math::llr_to_bit(l))
            .collect()
    }
}

/// Forward-backward decoding over the terminated trellis.
///
/// `channel_llr` covers all `2(K + 2)` code bits; `prior_llr` covers the `K`
/// information bits (tail bits are known zeros).
pub fn cc_bcjr_decode(
    channel_llr: &[f64],
    prior_llr: &[f64],
    spec: &CcSpec,
    kernel: MapKernel,
) -> Result<DecoderOutput> {
    let k = prior_llr.len();
    check_len("decoder channel LLRs", spec.code_len(k), channel_llr.len())?;
    let steps = k + spec.memory;
    let ns = spec.states();
    let neg = f64::NEG_INFINITY;

    // gamma[t][state][input]
    let mut gamma = vec![[[neg; 2]; 4]; steps];
    let mut next = [[0usize; 2]; 4];
    let mut outs = [[[0u8; 2]; 2]; 4];
    for s in 0..ns {
        for u in 0..2u8 {
            let (n, c) = spec.step(s, u);
            next[s][u as usize] = n;
            outs[s][u as usize] = c;
        }
    }
    let half = |bit: u8, llr: f64| if bit == 0 { 0.5 * llr } else { -0.5 * llr };
    for t in 0..steps {
        let l0 = channel_llr[2 * t];
        let l1 = channel_llr[2 * t + 1];
        let inputs: &[u8] = if t < k { &[0, 1] } else { &[0] };
        for s in 0..ns {
            for &u in inputs {
                let c = outs[s][u as usize];
                let prior = if t < k { half(u, prior_llr[t]) } else { 0.0 };
                gamma[t][s][u as usize] = prior + half(c[0], l0) + half(c[1], l1);
            }
        }
    }

    let mut alpha = vec![[neg; 4]; steps + 1];
    alpha[0][0] = 0.0;
    for t in 0..steps {
        let mut a = [neg; 4];
        for s in 0..ns {
            if alpha[t][s] == neg {
                continue;
            }
            for u in 0..2 {
                let g = gamma[t][s][u];
                if g == neg {
                    continue;
                }
                let n = next[s][u];
                a[n] = kernel.combine(a[n], alpha[t][s] + g);
            }
        }
        let m = a.iter().cloned().fold(neg, f64::max);
        for v in a.iter_mut() {
            *v -= m;
        }
        alpha[t + 1] = a;
    }

    let mut beta = vec![[neg; 4]; steps + 1];
    beta[steps][0] = 0.0;
    for t in (0..steps).rev() {
        let mut b = [neg; 4];
        for s in 0..ns {
            for u in 0..2 {
                let g = gamma[t][s][u];
                if g == neg {
                    continue;
                }
                let n = next[s][u];
                if beta[t + 1][n] == neg {
                    continue;
                }
                b[s] = kernel.combine(b[s], g + beta[t + 1][n]);
            }
        }
        let m = b.iter().cloned().fold(neg, f64::max);
        for v in b.iter_mut() {
            *v -= m;
        }
        beta[t] = b;
    }

    let mut info_app = Vec::with_capacity(k);
    let mut code_app = Vec::with_capacity(channel_llr.len());
    for t in 0..steps {
        let mut by_input = [neg; 2];
        let mut by_c = [[neg; 2]; 2];
        for s in 0..ns {
            if alpha[t][s] == neg {
                continue;
            }
            for u in 0..2 {
                let g = gamma[t][s][u];
                let n = next[s][u];
                if g == neg || beta[t + 1][n] == neg {
                    continue;
                }
                let metric = alpha[t][s] + g + beta[t + 1][n];
                by_input[u] = kernel.combine(by_input[u], metric);
                let c = outs[s][u];
                for j in 0..2 {
                    let slot = &mut by_c[j][c[j] as usize];
                    *slot = kernel.combine(*slot, metric);
                }
            }
        }
        if t < k {
            info_app.push(by_input[0] - by_input[1]);
        }
        for pair in by_c {
            code_app.push(pair[0] - pair[1]);
        }
    }
    let code_extrinsic = code_app
        .iter()
        .zip(channel_llr)
        .map(|(a, c)| a - c)
        .collect();
    Ok(DecoderOutput {
        info_app,
        code_app,
        code_extrinsic,
    })
}

//! FTN channel model: pulse autocorrelation, ISI taps, Gram matrices and the
//! colored-noise observation `y = G x + eta`, `E[eta eta^T] = sigma^2 G`.

use std::f64::consts::PI;
use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};

/// Default one-sided number of significant ISI taps.
pub const DEFAULT_SPAN: usize = 11;

/// Root-raised-cosine FTN pulse parameters. The symbol period is normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSpec {
    pub rolloff: f64,
    pub tau: f64,
    pub span: usize,
}

impl PulseSpec {
    pub fn new(tau: f64, rolloff: f64, span: usize) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "acceleration factor tau must lie in (0, 1], got {tau}"
            )));
        }
        if !(0.0..=1.0).contains(&rolloff) {
            return Err(Error::InvalidParameter(format!(
                "rolloff must lie in [0, 1], got {rolloff}"
            )));
        }
        Ok(Self { rolloff, tau, span })
    }
}

/// Raised-cosine pulse `p(t)`, the autocorrelation of a unit-energy RRC pulse.
///
/// At `|t| = 1/(2 alpha)` the closed form is 0/0; the limit `(pi/4) sinc(1/(2 alpha))`
/// is returned instead.
pub fn raised_cosine(t: f64, rolloff: f64) -> f64 {
    let s = sinc(t);
    if rolloff == 0.0 {
        return s;
    }
    let x = 2.0 * rolloff * t;
    let denom = 1.0 - x * x;
    if denom.abs() < 1e-10 {
        return PI / 4.0 * sinc(1.0 / (2.0 * rolloff));
    }
    s * (PI * rolloff * t).cos() / denom
}

fn sinc(t: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let r = t.round();
    if r != 0.0 && (t - r).abs() == 0.0 {
        // sin(pi k) for integer k is exactly zero; avoid the ~1e-16 residue.
        return 0.0;
    }
    (PI * t).sin() / (PI * t)
}

/// One-sided ISI taps `g_0..=g_L`; `g_{-i} = g_i` and `g_i = 0` beyond `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsiProfile {
    taps: Vec<f64>,
}

impl IsiProfile {
    /// Builds a profile from one-sided taps `[g_0, g_1, ..., g_L]`.
    pub fn from_one_sided(taps: Vec<f64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidParameter("profile needs at least g_0".into()));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("non-finite ISI tap".into()));
        }
        Ok(Self { taps })
    }

    pub fn span(&self) -> usize {
        self.taps.len() - 1
    }

    /// `g_i` for any signed offset.
    pub fn tap(&self, offset: isize) -> f64 {
        self.taps.get(offset.unsigned_abs()).copied().unwrap_or(0.0)
    }

    pub fn one_sided(&self) -> &[f64] {
        &self.taps
    }

    /// Keeps only `g_0..=g_{le}`.
    pub fn truncated(&self, le: usize) -> Result<Self> {
        if le > self.span() {
            return Err(Error::InvalidTruncation {
                requested: le,
                span: self.span(),
            });
        }
        Ok(Self {
            taps: self.taps[..=le].to_vec(),
        })
    }
}

/// ISI taps for an RRC FTN pulse, sampled from the closed-form autocorrelation.
pub fn isi_taps(pulse: &PulseSpec) -> IsiProfile {
    let taps = (0..=pulse.span)
        .map(|i| raised_cosine(i as f64 * pulse.tau, pulse.rolloff))
        .collect();
    IsiProfile { taps }
}

/// Symmetric banded Toeplitz matrix `G_{i,j} = g_{i-j}` of order `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    profile: IsiProfile,
}

impl GramMatrix {
    pub fn new(profile: &IsiProfile, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("block length must be >= 1".into()));
        }
        Ok(Self {
            n,
            profile: profile.clone(),
        })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.profile.span()
    }

    pub fn profile(&self) -> &IsiProfile {
        &self.profile
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.profile.tap(i as isize - j as isize)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let l = self.bandwidth();
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(l);
                let hi = (i + l).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// `e^T G e` over a sparse vector given as `(position, value)` pairs.
    pub fn sparse_quadratic(&self, entries: &[(usize, f64)]) -> f64 {
        let mut acc = 0.0;
        for &(i, a) in entries {
            for &(j, b) in entries {
                acc += a * b * self.get(i, j);
            }
        }
        acc
    }

    pub fn truncate(&self, le: usize) -> Result<TruncatedGram> {
        Ok(TruncatedGram(GramMatrix {
            n: self.n,
            profile: self.profile.truncated(le)?,
        }))
    }
}

/// Band-`L_E` copy of a [`GramMatrix`] (the detector's view of the channel).
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedGram(GramMatrix);

impl TruncatedGram {
    pub fn into_inner(self) -> GramMatrix {
        self.0
    }
}

impl Deref for TruncatedGram {
    type Target = GramMatrix;
    fn deref(&self) -> &GramMatrix {
        &self.0
    }
}

pub fn build_gram(profile: &IsiProfile, n: usize) -> Result<GramMatrix> {
    GramMatrix::new(profile, n)
}

pub fn truncate_gram(gram: &GramMatrix, le: usize) -> Result<TruncatedGram> {
    gram.truncate(le)
}

/// BPSK mapping `x = (-1)^c`.
pub fn modulate(bits: &[u8]) -> Vec<f64> {
    bits.iter()
        .map(|&b| crate::math::bit_to_symbol(b))
        .collect()
}

/// The FTN channel for one block length: `G` plus the symmetric square root of
/// the eigenvalue-clamped `G` used to color the noise.
#[derive(Debug, Clone)]
pub struct FtnChannel {
    gram: GramMatrix,
    noise_root: DMatrix<f64>,
    clamp: f64,
}

impl FtnChannel {
    pub fn new(gram: GramMatrix) -> Self {
        let eig = gram.to_dense().symmetric_eigen();
        let most_negative = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::min);
        let clamp = -most_negative;
        if clamp > 0.0 {
            log::debug!(
                "Gram matrix of order {} is indefinite; clamped eigenvalues down to {:.3e}",
                gram.order(),
                most_negative
            );
        }
        let roots = DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
        );
        let v = &eig.eigenvectors;
        let noise_root = v * DMatrix::from_diagonal(&roots) * v.transpose();
        Self {
            gram,
            noise_root,
            clamp,
        }
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    /// Magnitude of the most negative eigenvalue removed by clamping (0 if `G` is PSD).
    pub fn clamp_magnitude(&self) -> f64 {
        self.clamp
    }

    /// Colored noise with covariance `sigma2 * G+` where `G+` is the clamped Gram matrix.
    pub fn noise<R: Rng + ?Sized>(&self, sigma2: f64, rng: &mut R) -> Result<Vec<f64>> {
        if !(sigma2 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be >= 0, got {sigma2}"
            )));
        }
        let n = self.gram.order();
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let eta = &self.noise_root * z * sigma2.sqrt();
        Ok(eta.iter().copied().collect())
    }

    /// `y = G x + eta`. With `sigma2 == 0` no randomness is consumed.
    pub fn transmit<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        sigma2: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        check_len("symbol block", self.gram.order(), x.len())?;
        if !(sigma2 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be >= 0, got {sigma2}"
            )));
        }
        let mut y = self.gram.mul_vec(x);
        if sigma2 > 0.0 {
            for (yi, ni) in y.iter_mut().zip(self.noise(sigma2, rng)?) {
                *yi += ni;
            }
        }
        Ok(y)
    }
}

pub fn transmit<R: Rng + ?Sized>(
    gram: &GramMatrix,
    x: &[f64],
    sigma2: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    FtnChannel::new(gram.clone()).transmit(x, sigma2, rng)
}

/// Noise variance per matched-filter sample for a given `E_b/N_0` (dB) and rate.
///
/// Symbols carry unit energy, so `E_b = 1 / rate` and `sigma^2 = N_0 / 2`.
pub fn noise_variance(ebn0_db: f64, rate: f64) -> f64 {
    if ebn0_db == f64::INFINITY {
        return 0.0;
    }
    1.0 / (2.0 * rate * crate::math::db_to_linear(ebn0_db))
}

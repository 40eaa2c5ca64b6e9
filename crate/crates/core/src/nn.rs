//! The CNN function node: two linear 1-D convolutions with "same" zero padding
//! and one dense layer with activation `a(z) = -max(0, z)`, mapping the
//! u-message LLRs to the v-message LLRs.
//!
//! All trainable numbers of a model (CNN weights for every unfolded iteration
//! plus the edge scales) live in one flat vector; [`Layout`] names the slices.

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_len, Error, Result};

/// `(filters, filter length, stride)` of one convolutional layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub length: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CnnHyper {
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl Default for CnnHyper {
    fn default() -> Self {
        Self::standard()
    }
}

/// Output length and left padding of a TF-style "same" convolution.
pub fn same_geometry(n: usize, length: usize, stride: usize) -> (usize, usize) {
    let out = n.div_ceil(stride);
    let total = ((out - 1) * stride + length).saturating_sub(n);
    (out, total / 2)
}

impl CnnHyper {
    /// Default configuration: (3, 8, 5), (1, 3, 1), std 0.03.
    pub fn standard() -> Self {
        Self {
            conv1: ConvSpec {
                filters: 3,
                length: 8,
                stride: 5,
            },
            conv2: ConvSpec {
                filters: 1,
                length: 3,
                stride: 1,
            },
            sigma1: 0.03,
            sigma2: 0.03,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in [("conv1", self.conv1), ("conv2", self.conv2)] {
            if c.filters == 0 || c.length == 0 || c.stride == 0 {
                return Err(Error::InvalidParameter(format!(
                    "{name}: filters, length and stride must all be >= 1"
                )));
            }
        }
        if !(self.sigma1 >= 0.0 && self.sigma2 >= 0.0) {
            return Err(Error::InvalidParameter("init std must be >= 0".into()));
        }
        Ok(())
    }

    /// `ceil(N / f_s1)`.
    pub fn conv1_len(&self, n: usize) -> usize {
        n.div_ceil(self.conv1.stride)
    }

    /// `ceil(ceil(N / f_s1) / f_s2)`.
    pub fn conv2_len(&self, n: usize) -> usize {
        self.conv1_len(n).div_ceil(self.conv2.stride)
    }

    /// Width of the flattened conv2 output fed to the dense layer.
    pub fn flat_len(&self, n: usize) -> usize {
        self.conv2_len(n) * self.conv2.filters
    }

    /// Closed-form trainable CNN parameter count for one iteration.
    pub fn param_count(&self, n: usize) -> usize {
        let (c1, c2) = (self.conv1, self.conv2);
        c1.filters * c1.length
            + c1.filters
            + c2.filters * c1.filters * c2.length
            + c2.filters
            + self.flat_len(n) * n
            + n
    }
}

/// Index ranges of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub le: usize,
    pub iterations: usize,
    per_iter: usize,
    hyper_shapes: [Vec<usize>; 6],
}

/// Parameter ranges for one unfolded iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterRanges {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    pub wd: Range<usize>,
    pub bd: Range<usize>,
}

const TENSOR_NAMES: [&str; 6] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "dense.weight",
    "dense.bias",
];

impl Layout {
    pub fn new(hyper: &CnnHyper, n: usize, le: usize, iterations: usize) -> Self {
        let (c1, c2) = (hyper.conv1, hyper.conv2);
        let hyper_shapes = [
            vec![c1.filters, c1.length],
            vec![c1.filters],
            vec![c2.filters, c1.filters, c2.length],
            vec![c2.filters],
            vec![n, hyper.flat_len(n)],
            vec![n],
        ];
        Self {
            n,
            le,
            iterations,
            per_iter: hyper.param_count(n),
            hyper_shapes,
        }
    }

    pub fn total(&self) -> usize {
        self.per_iter * self.iterations + self.le * self.iterations
    }

    pub fn per_iteration(&self) -> usize {
        self.per_iter
    }

    /// Ranges of iteration `m` (0-based).
    pub fn iter(&self, m: usize) -> IterRanges {
        let mut at = m * self.per_iter;
        let mut take = |shape: &Vec<usize>| {
            let len: usize = shape.iter().product();
            let r = at..at + len;
            at += len;
            r
        };
        let s = &self.hyper_shapes;
        IterRanges {
            w1: take(&s[0]),
            b1: take(&s[1]),
            w2: take(&s[2]),
            b2: take(&s[3]),
            wd: take(&s[4]),
            bd: take(&s[5]),
        }
    }

    /// Edge scales of iteration `m`, one per offset `d = 1..=L_E`.
    pub fn varsigma(&self, m: usize) -> Range<usize> {
        let start = self.per_iter * self.iterations + m * self.le;
        start..start + self.le
    }

    pub fn all_varsigma(&self) -> Range<usize> {
        let start = self.per_iter * self.iterations;
        start..start + self.le * self.iterations
    }

    /// `(name, shape, range)` for every tensor, in storage order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, Range<usize>)> {
        let mut out = Vec::new();
        for m in 0..self.iterations {
            let r = self.iter(m);
            let ranges = [r.w1, r.b1, r.w2, r.b2, r.wd, r.bd];
            for ((name, shape), range) in TENSOR_NAMES.iter().zip(&self.hyper_shapes).zip(ranges) {
                out.push((format!("iter{}.{name}", m + 1), shape.clone(), range));
            }
        }
        for m in 0..self.iterations {
            out.push((
                format!("iter{}.varsigma", m + 1),
                vec![self.le],
                self.varsigma(m),
            ));
        }
        out
    }
}

/// Borrowed parameters of one iteration's CNN.
#[derive(Debug, Clone, Copy)]
pub struct LayerView<'a> {
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
    pub wd: &'a [f64],
    pub bd: &'a [f64],
}

impl<'a> LayerView<'a> {
    pub fn from_flat(params: &'a [f64], r: &IterRanges) -> Self {
        Self {
            w1: &params[r.w1.clone()],
            b1: &params[r.b1.clone()],
            w2: &params[r.w2.clone()],
            b2: &params[r.b2.clone()],
            wd: &params[r.wd.clone()],
            bd: &params[r.bd.clone()],
        }
    }
}

/// Training provenance stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelMeta {
    pub seed: u64,
    pub batches: u64,
    pub samples: u64,
    pub snr_db: (f64, f64),
    pub tau: f64,
    pub optimizer: String,
}

/// Per-iteration CNN parameters plus the per-(iteration, offset) edge scales.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub hyper: CnnHyper,
    layout: Layout,
    params: Vec<f64>,
    pub meta: ModelMeta,
}

impl CnnModel {
    /// All CNN parameters zero and every edge scale one.
    pub fn zeroed(hyper: CnnHyper, n: usize, le: usize, iterations: usize) -> Result<Self> {
        hyper.validate()?;
        if n < hyper.conv1.length {
            return Err(Error::InvalidParameter(format!(
                "block length {n} is shorter than the conv1 filter ({})",
                hyper.conv1.length
            )));
        }
        if iterations == 0 {
            return Err(Error::InvalidParameter("m_max must be >= 1".into()));
        }
        let layout = Layout::new(&hyper, n, le, iterations);
        let mut params = vec![0.0; layout.total()];
        params[layout.all_varsigma()].fill(1.0);
        Ok(Self {
            hyper,
            layout,
            params,
            meta: ModelMeta::default(),
        })
    }

    pub fn from_parts(
        hyper: CnnHyper,
        layout: Layout,
        params: Vec<f64>,
        meta: ModelMeta,
    ) -> Result<Self> {
        check_len("model parameter vector", layout.total(), params.len())?;
        Ok(Self {
            hyper,
            layout,
            params,
            meta,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n(&self) -> usize {
        self.layout.n
    }

    pub fn le(&self) -> usize {
        self.layout.le
    }

    pub fn iterations(&self) -> usize {
        self.layout.iterations
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layer(&self, m: usize) -> LayerView<'_> {
        LayerView::from_flat(&self.params, &self.layout.iter(m))
    }

    pub fn varsigma(&self, m: usize) -> &[f64] {
        &self.params[self.layout.varsigma(m)]
    }
}

/// Draws weights from a normal truncated at `+-2 sigma` whose post-truncation
/// std equals `sigma`; biases start at zero and edge scales at one.
pub fn init_params<R: Rng + ?Sized>(
    hyper: CnnHyper,
    n: usize,
    le: usize,
    iterations: usize,
    rng: &mut R,
) -> Result<CnnModel> {
    let mut model = CnnModel::zeroed(hyper, n, le, iterations)?;
    let s1 = TruncatedNormal::matching_std(hyper.sigma1);
    let s2 = TruncatedNormal::matching_std(hyper.sigma2);
    for m in 0..iterations {
        let r = model.layout.iter(m);
        for w in &mut model.params[r.w1] {
            *w = s1.sample(rng);
        }
        for w in &mut model.params[r.w2] {
            *w = s2.sample(rng);
        }
        for w in &mut model.params[r.wd] {
            *w = s2.sample(rng);
        }
    }
    Ok(model)
}

/// Zero-mean normal truncated to `[-bound, bound]`, sampled by rejection.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedNormal {
    scale: f64,
    bound: f64,
}

impl TruncatedNormal {
    /// Truncation at `+-2 sigma` with the underlying scale solved so the
    /// truncated distribution has standard deviation exactly `sigma`.
    pub fn matching_std(sigma: f64) -> Self {
        let bound = 2.0 * sigma;
        if sigma == 0.0 {
            return Self { scale: 0.0, bound };
        }
        // Truncated std / sigma as a function of s = scale / sigma, increasing in s.
        let ratio = |s: f64| truncated_std(s, 2.0 / s);
        let (mut lo, mut hi) = (1.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if ratio(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Self {
            scale: 0.5 * (lo + hi) * sigma,
            bound,
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        let normal = Normal::new(0.0, self.scale).expect("finite positive scale");
        loop {
            let x: f64 = normal.sample(rng);
            if x.abs() <= self.bound {
                return x;
            }
        }
    }
}

/// Std of `N(0, s^2)` truncated to `[-beta s, beta s]`.
fn truncated_std(s: f64, beta: f64) -> f64 {
    let pdf = (-0.5 * beta * beta).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mass = 1.0 - 2.0 * crate::math::q_function(beta);
    s * (1.0 - 2.0 * beta * pdf / mass).sqrt()
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct CnnCache {
    pub out1: Vec<f64>,
    pub flat: Vec<f64>,
    pub z: Vec<f64>,
}

/// `-max(0, z)`, returning `-0.0` on the inactive side so that adding an
/// inactive output never changes a sum bitwise.
#[inline]
pub fn neg_relu(z: f64) -> f64 {
    if z > 0.0 {
        -z
    } else {
        -0.0
    }
}

pub fn cnn_forward(u: &[f64], layer: &LayerView<'_>, hyper: &CnnHyper) -> Result<Vec<f64>> {
    let mut cache = CnnCache::default();
    let mut v = Vec::new();
    cnn_forward_cached(u, layer, hyper, &mut cache, &mut v)?;
    Ok(v)
}

/// Forward pass writing `v` and the activations needed by [`cnn_backward`].
pub fn cnn_forward_cached(
    u: &[f64],
    layer: &LayerView<'_>,
    hyper: &CnnHyper,
    cache: &mut CnnCache,
    v: &mut Vec<f64>,
) -> Result<()> {
    let n = layer.bd.len();
    check_len("CNN input", n, u.len())?;
    let (c1, c2) = (hyper.conv1, hyper.conv2);
    let (len1, pad1) = same_geometry(n, c1.length, c1.stride);
    let (len2, pad2) = same_geometry(len1, c2.length, c2.stride);

    // out1[f * len1 + t]
    cache.out1.clear();
    cache.out1.resize(c1.filters * len1, 0.0);
    for f in 0..c1.filters {
        let w = &layer.w1[f * c1.length..(f + 1) * c1.length];
        for t in 0..len1 {
            let start = (t * c1.stride) as isize - pad1 as isize;
            let mut acc = layer.b1[f];
            for (k, wk) in w.iter().enumerate() {
                let idx = start + k as isize;
                if idx >= 0 && (idx as usize) < n {
                    acc += wk * u[idx as usize];
                }
            }
            cache.out1[f * len1 + t] = acc;
        }
    }

    // flat[t * f_n2 + g]
    cache.flat.clear();
    cache.flat.resize(len2 * c2.filters, 0.0);
    for g in 0..c2.filters {
        for t in 0..len2 {
            let start = (t * c2.stride) as isize - pad2 as isize;
            let mut acc = layer.b2[g];
            for c in 0..c1.filters {
                let w = &layer.w2[(g * c1.filters + c) * c2.length..][..c2.length];
                let row = &cache.out1[c * len1..(c + 1) * len1];
                for (k, wk) in w.iter().enumerate() {
                    let idx = start + k as isize;
                    if idx >= 0 && (idx as usize) < len1 {
                        acc += wk * row[idx as usize];
                    }
                }
            }
            cache.flat[t * c2.filters + g] = acc;
        }
    }

    let flat_len = cache.flat.len();
    cache.z.clear();
    v.clear();
    for o in 0..n {
        let row = &layer.wd[o * flat_len..(o + 1) * flat_len];
        let z = layer.bd[o] + dot(row, &cache.flat);
        cache.z.push(z);
        v.push(neg_relu(z));
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mutable gradient slices matching a [`LayerView`].
pub struct LayerGrad<'a> {
    pub w1: &'a mut [f64],
    pub b1: &'a mut [f64],
    pub w2: &'a mut [f64],
    pub b2: &'a mut [f64],
    pub wd: &'a mut [f64],
    pub bd: &'a mut [f64],
}

impl<'a> LayerGrad<'a> {
    /// Splits the iteration's contiguous block of a flat gradient vector.
    pub fn from_flat(grad: &'a mut [f64], r: &IterRanges) -> Self {
        let block = &mut grad[r.w1.start..r.bd.end];
        let (w1, rest) = block.split_at_mut(r.w1.len());
        let (b1, rest) = rest.split_at_mut(r.b1.len());
        let (w2, rest) = rest.split_at_mut(r.w2.len());
        let (b2, rest) = rest.split_at_mut(r.b2.len());
        let (wd, bd) = rest.split_at_mut(r.wd.len());
        Self {
            w1,
            b1,
            w2,
            b2,
            wd,
            bd,
        }
    }
}

/// Reverse pass: accumulates parameter gradients into `grad` and writes `du`.
pub fn cnn_backward(
    u: &[f64],
    layer: &LayerView<'_>,
    hyper: &CnnHyper,
    cache: &CnnCache,
    dv: &[f64],
    grad: &mut LayerGrad<'_>,
    du: &mut [f64],
) {
    let n = layer.bd.len();
    let (c1, c2) = (hyper.conv1, hyper.conv2);
    let (len1, pad1) = same_geometry(n, c1.length, c1.stride);
    let (len2, pad2) = same_geometry(len1, c2.length, c2.stride);
    let flat_len = cache.flat.len();

    let mut dflat = vec![0.0; flat_len];
    for o in 0..n {
        if !(cache.z[o] > 0.0) {
            continue;
        }
        let dz = -dv[o];
        grad.bd[o] += dz;
        let row = &layer.wd[o * flat_len..(o + 1) * flat_len];
        let grow = &mut grad.wd[o * flat_len..(o + 1) * flat_len];
        for r in 0..flat_len {
            grow[r] += dz * cache.flat[r];
            dflat[r] += dz * row[r];
        }
    }

    let mut dout1 = vec![0.0; c1.filters * len1];
    for g in 0..c2.filters {
        for t in 0..len2 {
            let d = dflat[t * c2.filters + g];
            if d == 0.0 {
                continue;
            }
            grad.b2[g] += d;
            let start = (t * c2.stride) as isize - pad2 as isize;
            for c in 0..c1.filters {
                let off = (g * c1.filters + c) * c2.length;
                for k in 0..c2.length {
                    let idx = start + k as isize;
                    if idx >= 0 && (idx as usize) < len1 {
                        let i = c * len1 + idx as usize;
                        grad.w2[off + k] += d * cache.out1[i];
                        dout1[i] += d * layer.w2[off + k];
                    }
                }
            }
        }
    }

    du.fill(0.0);
    for f in 0..c1.filters {
        for t in 0..len1 {
            let d = dout1[f * len1 + t];
            if d == 0.0 {
                continue;
            }
            grad.b1[f] += d;
            let start = (t * c1.stride) as isize - pad1 as isize;
            for k in 0..c1.length {
                let idx = start + k as isize;
                if idx >= 0 && (idx as usize) < n {
                    grad.w1[f * c1.length + k] += d * u[idx as usize];
                    du[idx as usize] += d * layer.w1[f * c1.length + k];
                }
            }
        }
    }
}

/// Per-iteration operation counts: `(additions, look-up accesses)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpCount {
    pub additions: u64,
    pub lookups: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexityReport {
    pub log_map: OpCount,
    pub spda: OpCount,
    pub dl_extra: OpCount,
}

impl ComplexityReport {
    /// SPDA plus the CNN extra, per iteration.
    pub fn dl_spda(&self) -> OpCount {
        OpCount {
            additions: self.spda.additions + self.dl_extra.additions,
            lookups: self.spda.lookups + self.dl_extra.lookups,
        }
    }
}

/// Addition and look-up counts per message-passing iteration.
pub fn complexity_report(n: usize, le: usize, hyper: &CnnHyper) -> ComplexityReport {
    let n64 = n as u64;
    let le64 = le as u64;
    let states = 1u64 << le;
    let (c1, c2) = (hyper.conv1, hyper.conv2);
    let l1 = hyper.conv1_len(n) as u64;
    let l2 = hyper.conv2_len(n) as u64;
    let conv1 = l1 * (c1.length * c1.filters) as u64;
    let conv2 = l2 * ((c2.length * c1.filters * c2.filters) as u64 + 1);
    let dense = l2 * (c2.filters as u64) * n64;
    ComplexityReport {
        log_map: OpCount {
            additions: n64 * (15 * states + 9),
            lookups: n64 * (10 * states - 4),
        },
        spda: OpCount {
            additions: n64 * (32 * le64 + 6),
            lookups: 4 * n64 * le64,
        },
        dl_extra: OpCount {
            additions: 2 * n64 + l1 * ((c1.length * c1.filters) as u64 + 1) + conv2 + dense,
            lookups: conv1 + conv2 + dense,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::stream_rng;
    use proptest::prelude::{prop_assert_eq, proptest};
    use rand::Rng;

    #[test]
    fn standard_dimensions() {
        let h = CnnHyper::standard();
        assert_eq!(h.conv1_len(250), 50);
        assert_eq!(h.conv2_len(250), 50);
        let m = CnnModel::zeroed(h, 250, 3, 6).unwrap();
        let v = cnn_forward(&vec![0.3; 250], &m.layer(0), &h).unwrap();
        assert_eq!(v.len(), 250);
        assert_eq!(h.param_count(250), 24 + 3 + 9 + 1 + 50 * 250 + 250);
        assert_eq!(m.layout().total(), 6 * h.param_count(250) + 18);
    }

    #[test]
    fn same_padding_geometry() {
        assert_eq!(same_geometry(250, 8, 5), (50, 1));
        assert_eq!(same_geometry(50, 3, 1), (50, 1));
        assert_eq!(same_geometry(10, 3, 2), (5, 0));
        assert_eq!(same_geometry(7, 4, 1), (7, 1));
    }

    #[test]
    fn zero_everything_gives_zero() {
        let h = CnnHyper::standard();
        let m = CnnModel::zeroed(h, 40, 2, 1).unwrap();
        let v = cnn_forward(&vec![0.0; 40], &m.layer(0), &h).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
        assert!(m.varsigma(0).iter().all(|&s| s == 1.0));
    }

    #[test]
    fn length_mismatch() {
        let h = CnnHyper::standard();
        let m = CnnModel::zeroed(h, 40, 2, 1).unwrap();
        assert!(cnn_forward(&[0.0; 39], &m.layer(0), &h).is_err());
        assert!(CnnModel::zeroed(h, 5, 2, 1).is_err());
    }

    #[test]
    fn output_is_nonpositive() {
        let h = CnnHyper::standard();
        let mut rng = stream_rng(2, &[]);
        let m = init_params(h, 60, 2, 1, &mut rng).unwrap();
        let u: Vec<f64> = (0..60).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let v = cnn_forward(&u, &m.layer(0), &h).unwrap();
        assert!(v.iter().all(|&x| x <= 0.0));
    }

    #[test]
    fn pre_activation_is_linear() {
        let h = CnnHyper::standard();
        let mut rng = stream_rng(4, &[]);
        let m = init_params(h, 30, 1, 1, &mut rng).unwrap();
        let u: Vec<f64> = (0..30).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let u3: Vec<f64> = u.iter().map(|x| 3.0 * x).collect();
        let mut ca = CnnCache::default();
        let mut cb = CnnCache::default();
        let mut v = Vec::new();
        cnn_forward_cached(&u, &m.layer(0), &h, &mut ca, &mut v).unwrap();
        cnn_forward_cached(&u3, &m.layer(0), &h, &mut cb, &mut v).unwrap();
        // Biases are zero at init, so every layer is linear.
        for (a, b) in ca.z.iter().zip(&cb.z) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn truncated_normal_statistics() {
        let tn = TruncatedNormal::matching_std(0.03);
        assert!((tn.scale() / 0.03 - 1.38).abs() < 0.02);
        let mut rng = stream_rng(6, &[]);
        let xs: Vec<f64> = (0..100_000).map(|_| tn.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        assert!((0.027..=0.033).contains(&std), "std {std}");
        assert!(xs.iter().all(|x| x.abs() <= 0.06));
    }

    #[test]
    fn complexity_rows() {
        let h = CnnHyper::standard();
        let r = complexity_report(250, 3, &h);
        assert_eq!(r.log_map.additions, 32_250);
        assert_eq!(
            r.spda,
            OpCount {
                additions: 25_500,
                lookups: 3_000
            }
        );
        assert_eq!(
            r.dl_extra,
            OpCount {
                additions: 14_750,
                lookups: 14_200
            }
        );
        let six = r.dl_spda();
        assert_eq!(6 * six.additions, 241_500);
        assert_eq!(6 * six.lookups, 103_200);
        let bcjr6 = complexity_report(250, 6, &h).log_map;
        assert_eq!(
            bcjr6,
            OpCount {
                additions: 242_250,
                lookups: 159_000
            }
        );
    }

    #[test]
    fn backward_matches_finite_differences() {
        let h = CnnHyper {
            conv1: ConvSpec {
                filters: 2,
                length: 4,
                stride: 3,
            },
            conv2: ConvSpec {
                filters: 2,
                length: 3,
                stride: 2,
            },
            sigma1: 0.3,
            sigma2: 0.3,
        };
        let n = 13;
        let mut rng = stream_rng(10, &[]);
        let mut m = init_params(h, n, 1, 1, &mut rng).unwrap();
        let bd = m.layout().iter(0).bd;
        for b in &mut m.params_mut()[bd] {
            *b = 0.5;
        }
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let dv: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |params: &[f64], u: &[f64]| {
            let view = LayerView::from_flat(params, &m.layout().iter(0));
            let v = cnn_forward(u, &view, &h).unwrap();
            dot(&v, &dv)
        };
        let mut cache = CnnCache::default();
        let mut v = Vec::new();
        cnn_forward_cached(&u, &m.layer(0), &h, &mut cache, &mut v).unwrap();
        let mut grad = vec![0.0; m.layout().total()];
        let mut du = vec![0.0; n];
        {
            let r = m.layout().iter(0);
            let mut g = LayerGrad::from_flat(&mut grad, &r);
            cnn_backward(&u, &m.layer(0), &h, &cache, &dv, &mut g, &mut du);
        }
        let base = m.params().to_vec();
        let per = m.layout().per_iteration();
        for k in 0..per {
            let mut p = base.clone();
            p[k] += 1e-6;
            let up = loss(&p, &u);
            p[k] -= 2e-6;
            let dn = loss(&p, &u);
            let fd = (up - dn) / 2e-6;
            assert!(
                (fd - grad[k]).abs() < 1e-6,
                "param {k}: fd {fd} vs {}",
                grad[k]
            );
        }
        for i in 0..n {
            let mut up = u.clone();
            up[i] += 1e-6;
            let mut dn = u.clone();
            dn[i] -= 1e-6;
            let fd = (loss(&base, &up) - loss(&base, &dn)) / 2e-6;
            assert!((fd - du[i]).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn output_length_is_n(n in 8usize..400) {
            let h = CnnHyper::standard();
            let m = CnnModel::zeroed(h, n, 1, 1).unwrap();
            let v = cnn_forward(&vec![1.0; n], &m.layer(0), &h).unwrap();
            prop_assert_eq!(v.len(), n);
        }
    }
}

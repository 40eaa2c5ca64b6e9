//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every key may appear at most once;
//! unknown keys are rejected so typos surface immediately.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ftn::DEFAULT_SPAN;
use crate::turbo::MAX_TRELLIS_MEMORY;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    /// Memoryless: channel LLRs `2y / sigma^2`, hard decisions on `y`.
    Threshold,
    Spda,
    DlSpda,
    Bcjr,
}

impl DetectorKind {
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Threshold => "threshold",
            DetectorKind::Spda => "spda",
            DetectorKind::DlSpda => "dlspda",
            DetectorKind::Bcjr => "bcjr",
        }
    }
}

impl FromStr for DetectorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "threshold" => Ok(DetectorKind::Threshold),
            "spda" => Ok(DetectorKind::Spda),
            "dlspda" => Ok(DetectorKind::DlSpda),
            "bcjr" => Ok(DetectorKind::Bcjr),
            other => Err(format!(
                "unknown detector '{other}' (expected threshold, spda, dlspda or bcjr)"
            )),
        }
    }
}

/// Guard symbols per frame side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Guard {
    /// `L_E` for a coded trellis detector, otherwise none.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub tau: f64,
    pub alpha: f64,
    pub span: usize,
    pub le: usize,
    pub coded: bool,
    /// Information bits per coded block.
    pub k: usize,
    /// Symbols per uncoded block.
    pub block_len: usize,
    pub detector: DetectorKind,
    pub rho_max: usize,
    pub iterations: usize,
    pub snr_db: Vec<f64>,
    pub max_blocks: u64,
    pub min_block_errors: u64,
    pub min_bits: u64,
    pub seed: u64,
    pub interleaver_seed: u64,
    pub guard: Guard,
    pub model: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            tau: 0.6,
            alpha: 0.3,
            span: DEFAULT_SPAN,
            le: 3,
            coded: true,
            k: 123,
            block_len: 250,
            detector: DetectorKind::Spda,
            rho_max: 3,
            iterations: 6,
            snr_db: vec![4.0, 5.0, 6.0],
            max_blocks: 100_000,
            min_block_errors: 100,
            min_bits: 0,
            seed: 1,
            interleaver_seed: 7,
            guard: Guard::Auto,
            model: None,
        }
    }
}

const KEYS: [&str; 19] = [
    "tau",
    "alpha",
    "L",
    "L_E",
    "coded",
    "K",
    "N",
    "detector",
    "rho_max",
    "m_max",
    "snr_db",
    "max_blocks",
    "min_block_errors",
    "min_bits",
    "seed",
    "interleaver_seed",
    "guard",
    "model",
    "threads",
];

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Config {
        line,
        msg: format!("cannot parse '{raw}' for key '{key}'"),
    })
}

fn parse_bool(line: usize, key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config {
            line,
            msg: format!("'{key}' expects true or false, got '{raw}'"),
        }),
    }
}

fn parse_snr_list(line: usize, raw: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for item in raw.split(',').map(str::trim) {
        let v = match item {
            "inf" | "+inf" => f64::INFINITY,
            _ => value::<f64>(line, "snr_db", item)?,
        };
        if v.is_nan() || v == f64::NEG_INFINITY {
            return Err(Error::Config {
                line,
                msg: format!("invalid SNR '{item}'"),
            });
        }
        out.push(v);
    }
    Ok(out)
}

fn fmt_snr(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

impl ExperimentConfig {
    /// Parses a config file body; missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw_line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, raw) = body.split_once('=').ok_or_else(|| Error::Config {
                line,
                msg: format!("expected 'key = value', got '{body}'"),
            })?;
            let (key, raw) = (key.trim(), raw.trim());
            let Some(&known) = KEYS.iter().find(|k| **k == key) else {
                return Err(Error::Config {
                    line,
                    msg: format!("unknown key '{key}'"),
                });
            };
            if seen.contains(&known) {
                return Err(Error::Config {
                    line,
                    msg: format!("duplicate key '{key}'"),
                });
            }
            seen.push(known);
            match known {
                "tau" => cfg.tau = value(line, key, raw)?,
                "alpha" => cfg.alpha = value(line, key, raw)?,
                "L" => cfg.span = value(line, key, raw)?,
                "L_E" => cfg.le = value(line, key, raw)?,
                "coded" => cfg.coded = parse_bool(line, key, raw)?,
                "K" => cfg.k = value(line, key, raw)?,
                "N" => cfg.block_len = value(line, key, raw)?,
                "detector" => {
                    cfg.detector = raw.parse().map_err(|msg| Error::Config { line, msg })?
                }
                "rho_max" => cfg.rho_max = value(line, key, raw)?,
                "m_max" => cfg.iterations = value(line, key, raw)?,
                "snr_db" => cfg.snr_db = parse_snr_list(line, raw)?,
                "max_blocks" => cfg.max_blocks = value(line, key, raw)?,
                "min_block_errors" => cfg.min_block_errors = value(line, key, raw)?,
                "min_bits" => cfg.min_bits = value(line, key, raw)?,
                "seed" => cfg.seed = value(line, key, raw)?,
                "interleaver_seed" => cfg.interleaver_seed = value(line, key, raw)?,
                "guard" => {
                    cfg.guard = if raw == "auto" {
                        Guard::Auto
                    } else {
                        Guard::Fixed(value(line, key, raw)?)
                    }
                }
                "model" => {
                    cfg.model = if raw.is_empty() || raw == "none" {
                        None
                    } else {
                        Some(PathBuf::from(raw))
                    }
                }
                // Accepted for compatibility with older files; the sweep is
                // deterministic for any thread count.
                "threads" => {
                    value::<usize>(line, key, raw)?;
                }
                _ => unreachable!("key list and match arms agree"),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config { line: 0, msg });
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.le > self.span {
            return fail(format!("L_E = {} exceeds L = {}", self.le, self.span));
        }
        if self.span > 64 {
            return fail(format!("L = {} is larger than supported (64)", self.span));
        }
        if matches!(self.detector, DetectorKind::Spda | DetectorKind::DlSpda) && self.le == 0 {
            return fail("factor-graph detectors need L_E >= 1".into());
        }
        if self.detector == DetectorKind::Bcjr && self.le > MAX_TRELLIS_MEMORY {
            return fail(format!(
                "bcjr with L_E = {} exceeds the state budget (L_E <= {MAX_TRELLIS_MEMORY})",
                self.le
            ));
        }
        if self.coded && self.k == 0 {
            return fail("K must be >= 1".into());
        }
        if !self.coded && self.block_len == 0 {
            return fail("N must be >= 1".into());
        }
        if self.data_len() > 1 << 20 {
            return fail(format!("block of {} symbols is too large", self.data_len()));
        }
        if self.rho_max == 0 || self.iterations == 0 {
            return fail("rho_max and m_max must be >= 1".into());
        }
        if self.snr_db.is_empty() {
            return fail("snr_db needs at least one value".into());
        }
        if self.max_blocks == 0 || self.min_block_errors == 0 {
            return fail("max_blocks and min_block_errors must be >= 1".into());
        }
        if self.guard() > 0 && self.detector != DetectorKind::Bcjr {
            return fail("guard symbols are only supported by the bcjr detector".into());
        }
        if self.guard() > 1 << 10 {
            return fail(format!("guard = {} is too large", self.guard()));
        }
        Ok(())
    }

    /// Data symbols per block (excluding guards).
    pub fn data_len(&self) -> usize {
        if self.coded {
            2 * (self.k + 2)
        } else {
            self.block_len
        }
    }

    pub fn guard(&self) -> usize {
        match self.guard {
            Guard::Fixed(g) => g,
            Guard::Auto if self.coded && self.detector == DetectorKind::Bcjr => self.le,
            Guard::Auto => 0,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.data_len() + 2 * self.guard()
    }

    /// Information bits per block.
    pub fn info_bits(&self) -> usize {
        if self.coded {
            self.k
        } else {
            self.block_len
        }
    }

    /// Information bits per transmitted symbol; sets `E_b = 1 / rate`.
    pub fn rate(&self) -> f64 {
        self.info_bits() as f64 / self.frame_len() as f64
    }

    /// Resolved configuration in the same `key = value` syntax.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let snr: Vec<String> = self.snr_db.iter().map(|&v| fmt_snr(v)).collect();
        let guard = match self.guard {
            Guard::Auto => "auto".to_string(),
            Guard::Fixed(g) => g.to_string(),
        };
        let model = self
            .model
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "none".into());
        let rows: [(&str, String); 18] = [
            ("tau", self.tau.to_string()),
            ("alpha", self.alpha.to_string()),
            ("L", self.span.to_string()),
            ("L_E", self.le.to_string()),
            ("coded", self.coded.to_string()),
            ("K", self.k.to_string()),
            ("N", self.block_len.to_string()),
            ("detector", self.detector.name().into()),
            ("rho_max", self.rho_max.to_string()),
            ("m_max", self.iterations.to_string()),
            ("snr_db", snr.join(", ")),
            ("max_blocks", self.max_blocks.to_string()),
            ("min_block_errors", self.min_block_errors.to_string()),
            ("min_bits", self.min_bits.to_string()),
            ("seed", self.seed.to_string()),
            ("interleaver_seed", self.interleaver_seed.to_string()),
            ("guard", guard),
            ("model", model),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_full_file() {
        let text =
            "# sweep\ntau = 0.5\nalpha=0.25\nL = 9\nL_E = 2 # two taps\ncoded = false\nN = 64\n\
                    detector = bcjr\nsnr_db = 0, 2.5, inf\nguard = 2\nmodel = a/b.model\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.tau, 0.5);
        assert_eq!(c.alpha, 0.25);
        assert_eq!((c.span, c.le, c.block_len), (9, 2, 64));
        assert!(!c.coded);
        assert_eq!(c.detector, DetectorKind::Bcjr);
        assert_eq!(c.snr_db, vec![0.0, 2.5, f64::INFINITY]);
        assert_eq!(c.guard(), 2);
        assert_eq!(c.frame_len(), 68);
        assert_eq!(c.model.as_deref(), Some(std::path::Path::new("a/b.model")));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("tau = 0.5\nbogus = 1\n", 2),
            ("\n\ntau = x\n", 3),
            ("tau = 0.5\ntau = 0.6\n", 2),
            ("detector = viterbi\n", 1),
            ("just words\n", 1),
            ("coded = maybe\n", 1),
            ("snr_db = 1, nan\n", 1),
        ];
        for (text, want) in cases {
            match ExperimentConfig::parse(text) {
                Err(Error::Config { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn semantic_validation() {
        for text in [
            "tau = 0\n",
            "tau = 1.5\n",
            "L_E = 12\n",
            "rho_max = 0\n",
            "detector = spda\nL_E = 0\n",
            "detector = spda\nguard = 3\n",
            "snr_db = \n",
        ] {
            assert!(ExperimentConfig::parse(text).is_err(), "{text:?}");
        }
    }

    #[test]
    fn rates_follow_block_shape() {
        let mut c = ExperimentConfig::default();
        assert!((c.rate() - 0.492).abs() < 1e-12);
        c.detector = DetectorKind::Bcjr;
        c.le = 7;
        assert_eq!(c.frame_len(), 264);
        assert!((c.rate() - 123.0 / 264.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn text_round_trip(
            tau in 0.05f64..=1.0,
            alpha in 0.0f64..=1.0,
            le in 1usize..=11,
            snr in proptest::collection::vec(-5.0f64..20.0, 1..5),
            seed in any::<u64>(),
            coded in any::<bool>(),
        ) {
            let c = ExperimentConfig { tau, alpha, le, snr_db: snr, seed, coded, ..Default::default() };
            let back = ExperimentConfig::parse(&c.to_text()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}

//! Versioned plain-text model files.
//!
//! ```text
//! ftn-dlspda-model 1
//! n 250
//! le 2
//! iterations 6
//! conv1 3 8 5
//! conv2 1 3 1
//! sigma_cnn 0.03 0.03
//! meta seed 1
//! ...
//! tensor iter1.conv1.weight 3 8
//! <values>
//! ...
//! end
//! ```
//!
//! Values are written with the shortest round-trip representation, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{CnnHyper, CnnModel, ConvSpec, ModelMeta};

pub const MODEL_MAGIC: &str = "ftn-dlspda-model";
pub const MODEL_VERSION: u32 = 1;

/// Upper bound on stored parameters, so a corrupt header cannot request an
/// absurd allocation.
const MAX_PARAMS: u128 = 1 << 26;

pub fn model_to_string(model: &CnnModel) -> String {
    let mut s = String::new();
    let h = &model.hyper;
    let m = &model.meta;
    let _ = writeln!(s, "{MODEL_MAGIC} {MODEL_VERSION}");
    let _ = writeln!(s, "n {}", model.n());
    let _ = writeln!(s, "le {}", model.le());
    let _ = writeln!(s, "iterations {}", model.iterations());
    for (name, c) in [("conv1", h.conv1), ("conv2", h.conv2)] {
        let _ = writeln!(s, "{name} {} {} {}", c.filters, c.length, c.stride);
    }
    let _ = writeln!(s, "sigma_cnn {:e} {:e}", h.sigma1, h.sigma2);
    let _ = writeln!(s, "meta seed {}", m.seed);
    let _ = writeln!(s, "meta batches {}", m.batches);
    let _ = writeln!(s, "meta samples {}", m.samples);
    let _ = writeln!(s, "meta snr_db {:e} {:e}", m.snr_db.0, m.snr_db.1);
    let _ = writeln!(s, "meta tau {:e}", m.tau);
    let optimizer = if m.optimizer.is_empty() {
        "none"
    } else {
        m.optimizer.as_str()
    };
    let _ = writeln!(s, "meta optimizer {optimizer}");
    for (name, shape, range) in model.layout().tensors() {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "tensor {name} {}", dims.join(" "));
        let vals: Vec<String> = model.params()[range]
            .iter()
            .map(|v| format!("{v:e}"))
            .collect();
        let _ = writeln!(s, "{}", vals.join(" "));
    }
    s.push_str("end\n");
    s
}

pub fn save_model(model: &CnnModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_string(model)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<CnnModel> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_model(&text)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, expect: &str) -> Result<(usize, &'a str)> {
        for (i, l) in self.inner.by_ref() {
            self.last = i + 1;
            let t = l.trim();
            if !t.is_empty() {
                return Ok((i + 1, t));
            }
        }
        Err(Error::ModelFormat {
            line: self.last + 1,
            msg: format!("unexpected end of file, expected {expect}"),
        })
    }

    /// Next line, which must start with `key`; returns the remaining fields.
    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (line, text) = self.next(&format!("'{key}'"))?;
        let mut fields = text.split_whitespace();
        match fields.next() {
            Some(k) if k == key => Ok((line, fields.collect())),
            _ => Err(Error::ModelFormat {
                line,
                msg: format!("expected '{key}', found '{text}'"),
            }),
        }
    }
}

fn num<T: std::str::FromStr>(line: usize, what: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::ModelFormat {
        line,
        msg: format!("invalid {what} '{raw}'"),
    })
}

fn fields<const K: usize>(line: usize, key: &str, f: &[&str]) -> Result<[String; K]> {
    if f.len() != K {
        return Err(Error::ModelFormat {
            line,
            msg: format!("'{key}' takes {K} values, found {}", f.len()),
        });
    }
    Ok(std::array::from_fn(|i| f[i].to_string()))
}

fn bounded(line: usize, what: &str, v: usize, max: usize) -> Result<usize> {
    if v == 0 || v > max {
        return Err(Error::ModelFormat {
            line,
            msg: format!("{what} = {v} outside 1..={max}"),
        });
    }
    Ok(v)
}

/// Parses a model file body. Never panics on malformed input.
pub fn parse_model(text: &str) -> Result<CnnModel> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (line, header) = lines.next("the model header")?;
    let mut h = header.split_whitespace();
    if h.next() != Some(MODEL_MAGIC) {
        return Err(Error::ModelFormat {
            line,
            msg: format!("not a model file (expected '{MODEL_MAGIC}')"),
        });
    }
    let version: u32 = num(line, "version", h.next().unwrap_or(""))?;
    if version != MODEL_VERSION {
        return Err(Error::ModelVersion {
            found: version,
            expected: MODEL_VERSION,
        });
    }

    let mut scalar = |key: &str, max: usize| -> Result<usize> {
        let (line, f) = lines.keyed(key)?;
        let [v] = fields::<1>(line, key, &f)?;
        bounded(line, key, num(line, key, &v)?, max)
    };
    let n = scalar("n", 1 << 16)?;
    let le = scalar("le", 64)?;
    let iterations = scalar("iterations", 256)?;
    let mut conv = |key: &str| -> Result<ConvSpec> {
        let (line, f) = lines.keyed(key)?;
        let [a, b, c] = fields::<3>(line, key, &f)?;
        Ok(ConvSpec {
            filters: bounded(line, "filters", num(line, "filters", &a)?, 1024)?,
            length: bounded(line, "filter length", num(line, "filter length", &b)?, 1024)?,
            stride: bounded(line, "stride", num(line, "stride", &c)?, 1024)?,
        })
    };
    let conv1 = conv("conv1")?;
    let conv2 = conv("conv2")?;
    let (line, f) = lines.keyed("sigma_cnn")?;
    let [s1, s2] = fields::<2>(line, "sigma_cnn", &f)?;
    let hyper = CnnHyper {
        conv1,
        conv2,
        sigma1: num(line, "sigma", &s1)?,
        sigma2: num(line, "sigma", &s2)?,
    };
    hyper.validate().map_err(|e| Error::ModelFormat {
        line,
        msg: e.to_string(),
    })?;

    let mut meta = ModelMeta::default();
    for key in ["seed", "batches", "samples", "snr_db", "tau", "optimizer"] {
        let (line, f) = lines.keyed("meta")?;
        if f.first() != Some(&key) {
            return Err(Error::ModelFormat {
                line,
                msg: format!("expected 'meta {key}'"),
            });
        }
        let rest = &f[1..];
        match key {
            "seed" => meta.seed = num(line, key, &fields::<1>(line, key, rest)?[0])?,
            "batches" => meta.batches = num(line, key, &fields::<1>(line, key, rest)?[0])?,
            "samples" => meta.samples = num(line, key, &fields::<1>(line, key, rest)?[0])?,
            "snr_db" => {
                let [a, b] = fields::<2>(line, key, rest)?;
                meta.snr_db = (num(line, key, &a)?, num(line, key, &b)?);
            }
            "tau" => meta.tau = num(line, key, &fields::<1>(line, key, rest)?[0])?,
            _ => {
                let o = rest.join(" ");
                meta.optimizer = if o == "none" { String::new() } else { o };
            }
        }
    }

    let per_iter = hyper.param_count(n) as u128 + le as u128;
    if per_iter * iterations as u128 > MAX_PARAMS || n < hyper.conv1.length {
        return Err(Error::ModelFormat {
            line,
            msg: format!("header describes an unsupported model (n = {n}, {per_iter} parameters per iteration)"),
        });
    }
    let mut model = CnnModel::zeroed(hyper, n, le, iterations).map_err(|e| Error::ModelFormat {
        line,
        msg: e.to_string(),
    })?;
    model.meta = meta;
    let tensors = model.layout().tensors();
    for (name, shape, range) in tensors {
        let (line, f) = lines.keyed("tensor")?;
        if f.first() != Some(&name.as_str()) {
            return Err(Error::ModelFormat {
                line,
                msg: format!(
                    "expected tensor '{name}', found '{}'",
                    f.first().unwrap_or(&"")
                ),
            });
        }
        let dims: Vec<usize> = f[1..]
            .iter()
            .map(|d| num(line, "dimension", d))
            .collect::<Result<_>>()?;
        if dims != shape {
            let layer = if name.ends_with("dense.weight") || name.ends_with("dense.bias") {
                "dense layer".to_string()
            } else {
                name.clone()
            };
            return Err(Error::ShapeMismatch {
                layer,
                expected: format!("{shape:?}"),
                found: format!("{dims:?}"),
            });
        }
        let (line, values) = lines.next(&format!("values of '{name}'"))?;
        let slot = &mut model.params_mut()[range.clone()];
        let mut count = 0;
        for raw in values.split_whitespace() {
            if count == slot.len() {
                return Err(Error::ModelFormat {
                    line,
                    msg: format!("too many values for '{name}' (expected {})", slot.len()),
                });
            }
            let v: f64 = num(line, "value", raw)?;
            if !v.is_finite() {
                return Err(Error::ModelFormat {
                    line,
                    msg: format!("non-finite value '{raw}' in '{name}'"),
                });
            }
            slot[count] = v;
            count += 1;
        }
        if count != slot.len() {
            return Err(Error::ModelFormat {
                line,
                msg: format!("'{name}' has {count} values, expected {}", slot.len()),
            });
        }
    }
    let (line, t) = lines.next("'end'")?;
    if t != "end" {
        return Err(Error::ModelFormat {
            line,
            msg: format!("expected 'end', found '{t}'"),
        });
    }
    Ok(model)
}

//! `ftnlab`: taps, simulation sweeps, training, bounds and self-checks.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use ftn_core::analysis::{bound_curve, BoundConfig};
use ftn_core::error::Error;
use ftn_core::ftn::{isi_taps, PulseSpec};
use ftn_core::harness::{load_model, run_ber_sweep, save_model, DetectorKind, ExperimentConfig};
use ftn_core::nn::{complexity_report, CnnHyper};
use ftn_core::oracle::quadrature_taps;
use ftn_core::trainer::{TrainConfig, Trainer};
use ftn_core::verify;

const EXIT_CONFIG: u8 = 3;
const EXIT_MODEL: u8 = 4;
const EXIT_NUMERICAL: u8 = 5;

#[derive(Parser, Debug)]
#[command(
    name = "ftnlab",
    version,
    about = "Coded faster-than-Nyquist detection lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the ISI taps g_0..g_L of the raised-cosine autocorrelation.
    Taps {
        #[arg(long, default_value_t = 0.6)]
        tau: f64,
        #[arg(long, default_value_t = 0.3)]
        alpha: f64,
        #[arg(long, default_value_t = 11)]
        span: usize,
        /// Add a column computed by numerical integration of the pulse.
        #[arg(long)]
        quadrature: bool,
    },
    /// Run a Monte Carlo BER sweep described by a config file.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides applied after the file, e.g. `--set rho_max=5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Shortcut for `--set detector=...`.
        #[arg(long)]
        detector: Option<String>,
        /// Shortcut for `--set L_E=...`.
        #[arg(long = "taps")]
        le: Option<usize>,
        /// Shortcut for `--set rho_max=...`.
        #[arg(long = "turbo")]
        rho_max: Option<usize>,
        /// Model file (takes precedence over the config's `model` key).
        #[arg(long)]
        model: Option<PathBuf>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a DL-SPDA model with the compatible training scheme.
    Train {
        /// Experiment config supplying tau, alpha, L, L_E, K, m_max and seeds;
        /// explicit flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to 0.6.
        #[arg(long)]
        tau: Option<f64>,
        /// Defaults to 2.
        #[arg(long = "taps")]
        le: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        batches: u64,
        /// Defaults to 1.
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to 6.
        #[arg(long)]
        m_max: Option<usize>,
        /// Batches per convergence window.
        #[arg(long, default_value_t = 5000)]
        window: u64,
        /// Continue from an existing model instead of a fresh initialization.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Per-batch losses as CSV.
        #[arg(long)]
        losses: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the coded union bound over an SNR grid.
    Bound {
        #[arg(long, default_value_t = 0.6)]
        tau: f64,
        #[arg(long = "taps", default_value_t = 3)]
        le: usize,
        #[arg(long, default_value_t = 8)]
        wmax: usize,
        #[arg(long, default_value_t = 18)]
        window: usize,
        /// `start:stop:step` or a comma list (dB).
        #[arg(long = "snr-grid", default_value = "0:10:0.5")]
        snr_grid: String,
        /// Known symbols per side added for trellis termination.
        #[arg(long, default_value_t = 0)]
        guard: usize,
        #[arg(long, default_value_t = 20_000)]
        mc_samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = BoundVariant::Finite)]
        kind: BoundVariant,
    },
    /// Dump the grouped FTN distance spectra of every CC error event.
    Spectrum {
        #[arg(long, default_value_t = 0.6)]
        tau: f64,
        #[arg(long = "taps", default_value_t = 3)]
        le: usize,
        #[arg(long, default_value_t = 8)]
        wmax: usize,
        #[arg(long, default_value_t = 18)]
        window: usize,
        #[arg(long, default_value_t = 20_000)]
        mc_samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Per-iteration operation counts of the detectors.
    Complexity {
        #[arg(long, default_value_t = 250)]
        n: usize,
        #[arg(long = "taps", default_value_t = 3)]
        le: usize,
        #[arg(long, default_value_t = 6)]
        m_max: usize,
    },
    /// Run the oracle self-checks.
    Verify {
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BoundVariant {
    /// Detector sees every tap.
    Full,
    /// Detector sees `L_E` taps; residual ISI enters through sigma_RL.
    Finite,
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn new(code: u8, msg: impl Into<String>) -> Self {
        Self {
            code,
            msg: msg.into(),
        }
    }
}

fn classify(e: Error) -> Failure {
    let code = match e {
        Error::MissingModel
        | Error::ModelFormat { .. }
        | Error::ModelVersion { .. }
        | Error::ShapeMismatch { .. } => EXIT_MODEL,
        Error::Numerical(_) | Error::Degenerate(_) | Error::BudgetExceeded(_) => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    };
    let hint = match e {
        Error::MissingModel => {
            "\nhint: train one with `ftnlab train --out model.txt` and pass `--model model.txt`"
        }
        _ => "",
    };
    Failure::new(code, format!("{e}{hint}"))
}

fn io_failure(code: u8, path: &Path, e: io::Error) -> Failure {
    Failure::new(code, format!("{}: {e}", path.display()))
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::new(2, format!("invalid SNR grid '{spec}'"));
    if spec.contains(':') {
        let parts: Vec<f64> = spec
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        let [a, b, step] = parts[..] else {
            return Err(bad());
        };
        if step.is_nan() || step <= 0.0 || b < a || (b - a) / step > 1e5 {
            return Err(bad());
        }
        let count = ((b - a) / step + 1e-9).floor() as usize;
        Ok((0..=count).map(|i| a + i as f64 * step).collect())
    } else {
        spec.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect()
    }
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    match path {
        Some(p) => fs::File::create(p)
            .map(|f| Box::new(io::BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|e| io_failure(EXIT_CONFIG, p, e)),
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn write_lines(out: &mut dyn Write, lines: &[String]) -> Result<(), Failure> {
    for l in lines {
        writeln!(out, "{l}").map_err(|e| Failure::new(1, e.to_string()))?;
    }
    out.flush().map_err(|e| Failure::new(1, e.to_string()))
}

fn cmd_taps(tau: f64, alpha: f64, span: usize, quadrature: bool) -> Result<(), Failure> {
    let pulse = PulseSpec::new(tau, alpha, span).map_err(classify)?;
    let taps = isi_taps(&pulse);
    let quad = quadrature.then(|| quadrature_taps(&pulse));
    let mut lines = vec![if quadrature {
        "i,g,g_quadrature".to_string()
    } else {
        "i,g".to_string()
    }];
    for (i, g) in taps.one_sided().iter().enumerate() {
        match &quad {
            Some(q) => lines.push(format!("{i},{g:.16e},{:.16e}", q[i])),
            None => lines.push(format!("{i},{g:.16e}")),
        }
    }
    write_lines(&mut io::stdout().lock(), &lines)
}

fn cmd_simulate(
    config: Option<PathBuf>,
    overrides: Vec<String>,
    model: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut text = match &config {
        Some(p) => fs::read_to_string(p).map_err(|e| io_failure(EXIT_CONFIG, p, e))?,
        None => String::new(),
    };
    for o in &overrides {
        if !o.contains('=') {
            return Err(Failure::new(
                2,
                format!("--set expects KEY=VALUE, got '{o}'"),
            ));
        }
        // Later keys must replace earlier ones, so drop any earlier line for the key.
        let key = o.split('=').next().unwrap_or("").trim();
        text = text
            .lines()
            .filter(|l| {
                l.split('#')
                    .next()
                    .unwrap_or("")
                    .split('=')
                    .next()
                    .map(str::trim)
                    != Some(key)
            })
            .collect::<Vec<_>>()
            .join("\n");
        text.push('\n');
        text.push_str(o);
        text.push('\n');
    }
    let mut cfg = ExperimentConfig::parse(&text).map_err(classify)?;
    if model.is_some() {
        cfg.model = model;
    }
    let loaded = match (&cfg.model, cfg.detector) {
        (Some(p), DetectorKind::DlSpda) => Some(Arc::new(load_model(p).map_err(|e| {
            let mut f = classify(e);
            f.code = EXIT_MODEL;
            f
        })?)),
        _ => None,
    };
    let mut sink = open_out(&out)?;
    let records = run_ber_sweep(&cfg, loaded, &mut *sink).map_err(classify)?;
    for r in &records {
        log::info!("{} dB: ber {:e} ({} errors)", r.snr_db, r.ber, r.bit_errors);
    }
    Ok(())
}

fn cmd_train(
    cfg: TrainConfig,
    resume: Option<PathBuf>,
    losses: Option<PathBuf>,
    out: PathBuf,
) -> Result<(), Failure> {
    let mut trainer = match resume {
        Some(p) => {
            let m = load_model(&p).map_err(|e| Failure::new(EXIT_MODEL, e.to_string()))?;
            Trainer::from_model(cfg, m).map_err(classify)?
        }
        None => Trainer::new(cfg).map_err(classify)?,
    };
    trainer.run().map_err(classify)?;
    save_model(trainer.model(), &out).map_err(|e| Failure::new(EXIT_MODEL, e.to_string()))?;
    if let Some(p) = losses {
        let mut lines = vec!["batch_index,avg_loss,xi_avg,xi_cg".to_string()];
        let mut points = trainer.monitor.points.iter().peekable();
        for (i, l) in trainer.losses.iter().enumerate() {
            // Window metrics are attached to the batch that closes the window.
            match points.next_if(|p| p.0 == i as u64 + 1) {
                Some((_, a, c)) => lines.push(format!("{i},{l:e},{a:e},{c:e}")),
                None => lines.push(format!("{i},{l:e},,")),
            }
        }
        let mut f = open_out(&Some(p))?;
        write_lines(&mut *f, &lines)?;
    }
    let mut lines = vec!["window_end,xi_avg,xi_cg".to_string()];
    lines.extend(
        trainer
            .monitor
            .points
            .iter()
            .map(|(b, a, c)| format!("{b},{a:.6},{c:.6}")),
    );
    if let Some(a) = trainer.monitor.stable_from() {
        lines.push(format!("# stable from window {a}"));
    }
    write_lines(&mut io::stdout().lock(), &lines)
}

fn bound_config(
    tau: f64,
    le: usize,
    wmax: usize,
    window: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<BoundConfig, Failure> {
    let mut cfg = BoundConfig::new(tau, le).map_err(classify)?;
    cfg.w_max = wmax;
    cfg.window = window;
    cfg.mc_samples = mc_samples;
    cfg.seed = seed;
    Ok(cfg)
}

fn cmd_complexity(n: usize, le: usize, m_max: usize) -> Result<(), Failure> {
    let r = complexity_report(n, le, &CnnHyper::standard());
    let dl = r.dl_spda();
    let m = m_max as u64;
    let lines = vec![
        "algorithm,additions,lookups".to_string(),
        format!("log-MAP BCJR,{},{}", r.log_map.additions, r.log_map.lookups),
        format!("SPDA,{},{}", r.spda.additions, r.spda.lookups),
        format!(
            "DL-SPDA extra,{},{}",
            r.dl_extra.additions, r.dl_extra.lookups
        ),
        format!("DL-SPDA,{},{}", dl.additions, dl.lookups),
        format!("DL-SPDA x{m_max},{},{}", m * dl.additions, m * dl.lookups),
    ];
    write_lines(&mut io::stdout().lock(), &lines)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Taps {
            tau,
            alpha,
            span,
            quadrature,
        } => cmd_taps(tau, alpha, span, quadrature),
        Command::Simulate {
            config,
            mut overrides,
            detector,
            le,
            rho_max,
            model,
            out,
        } => {
            overrides.extend(detector.map(|d| format!("detector={d}")));
            overrides.extend(le.map(|v| format!("L_E={v}")));
            overrides.extend(rho_max.map(|v| format!("rho_max={v}")));
            cmd_simulate(config, overrides, model, out)
        }
        Command::Train {
            config,
            tau,
            le,
            batches,
            seed,
            m_max,
            window,
            resume,
            losses,
            out,
        } => {
            let base = match &config {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| io_failure(EXIT_CONFIG, p, e))?;
                    ExperimentConfig::parse(&text).map_err(classify)?
                }
                None => ExperimentConfig {
                    le: 2,
                    ..Default::default()
                },
            };
            let mut cfg = TrainConfig::standard(tau.unwrap_or(base.tau), le.unwrap_or(base.le))
                .map_err(classify)?;
            cfg.pulse = PulseSpec::new(cfg.pulse.tau, base.alpha, base.span).map_err(classify)?;
            cfg.k = base.k;
            cfg.iterations = m_max.unwrap_or(base.iterations);
            cfg.seed = seed.unwrap_or(base.seed);
            cfg.interleaver_seed = base.interleaver_seed;
            cfg.batches = batches;
            cfg.window = window;
            cmd_train(cfg, resume, losses, out)
        }
        Command::Bound {
            tau,
            le,
            wmax,
            window,
            snr_grid,
            guard,
            mc_samples,
            seed,
            kind,
        } => {
            let mut cfg = bound_config(tau, le, wmax, window, mc_samples, seed)?;
            cfg.guard = guard;
            cfg.ebn0_db = parse_grid(&snr_grid)?;
            let curve = bound_curve(&cfg).map_err(classify)?;
            let values = match kind {
                BoundVariant::Full => &curve.full_taps,
                BoundVariant::Finite => &curve.finite_taps,
            };
            let mut lines = vec!["snr_db,pb_bound".to_string()];
            lines.extend(
                curve
                    .ebn0_db
                    .iter()
                    .zip(values)
                    .map(|(s, p)| format!("{s},{p:e}")),
            );
            write_lines(&mut io::stdout().lock(), &lines)
        }
        Command::Spectrum {
            tau,
            le,
            wmax,
            window,
            mc_samples,
            seed,
        } => {
            let mut cfg = bound_config(tau, le, wmax, window, mc_samples, seed)?;
            cfg.ebn0_db = Vec::new();
            let curve = bound_curve(&cfg).map_err(classify)?;
            let mut lines = vec!["event_id,multiplicity,d2,d2_ope,sigma_rl".to_string()];
            for (id, sp) in curve.spectra.iter().enumerate() {
                for g in &sp.groups {
                    lines.push(format!(
                        "{id},{:e},{:.12e},{:.12e},{:.12e}",
                        g.multiplicity, g.d2, g.d2_ope, g.sigma_rl
                    ));
                }
            }
            write_lines(&mut io::stdout().lock(), &lines)
        }
        Command::Complexity { n, le, m_max } => cmd_complexity(n, le, m_max),
        Command::Verify { quick, seed } => {
            let checks = verify::run_all(quick, seed).map_err(classify)?;
            let mut lines = Vec::new();
            let mut ok = true;
            for c in &checks {
                ok &= c.passed;
                lines.push(format!(
                    "{} {}: {:.3e} (tolerance {:.1e}) {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.metric,
                    c.tolerance,
                    c.detail
                ));
            }
            write_lines(&mut io::stdout().lock(), &lines)?;
            if ok {
                Ok(())
            } else {
                Err(Failure::new(EXIT_NUMERICAL, "one or more checks failed"))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("ftnlab: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

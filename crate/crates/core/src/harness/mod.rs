//! Experiment plumbing: configuration files, model persistence and BER sweeps.

pub mod config;
pub mod model_io;
pub mod sweep;

pub use config::{DetectorKind, ExperimentConfig, Guard};
pub use model_io::{load_model, model_to_string, parse_model, save_model};
pub use sweep::{run_ber_sweep, wilson_interval, BerRecord, Link};

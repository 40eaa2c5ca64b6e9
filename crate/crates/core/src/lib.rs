//! Faster-than-Nyquist signalling with factor-graph detection and a learned
//! message corrector, plus the tooling to train, simulate and bound it.

// `!(x > 0.0)` guards deliberately reject NaN; index loops mirror the
// per-position update rules.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod analysis;
pub mod coding;
pub mod error;
pub mod ftn;
pub mod harness;
pub mod math;
pub mod nn;
pub mod oracle;
pub mod spda;
pub mod trainer;
pub mod turbo;
pub mod verify;

pub use error::{Error, Result};

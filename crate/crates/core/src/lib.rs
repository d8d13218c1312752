//! Monte Carlo simulator for downlink rate-splitting in user-centric cell-free
//! massive MIMO with imperfect, aging CSI.
//!
//! The pipeline per network drop is: [`topology`] (positions, clusters,
//! pilots, large-scale statistics) -> [`channel`] (Rician channels aged
//! against an anchor instant) -> [`ul`] (UL pilot LMMSE estimates) ->
//! [`precoding`] (MR common and private precoders) -> [`dl`] (DL effective
//! channel training) -> [`link`] (SIC chain, SINR and ergodic SE).
//! [`experiment`] drives parameter sweeps and writes CSV/SVG output.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod dl;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod link;
pub mod precoding;
pub mod rng;
pub mod topology;
pub mod ul;

pub use config::{Mode, SimConfig, Timeline, Velocity};
pub use error::{Error, Result};
pub use link::{ergodic_se, DropModel, RunOptions, SeReport};

//! Short-term bus link travel-time prediction with calibrated uncertainty.
//!
//! The crate covers the whole pipeline: snapping irregular link observations
//! onto a reference grid ([`prep`]), two probabilistic recurrent predictors
//! ([`dqr`] quantile regression and [`brnn`] variational LSTM) on a small
//! reverse-mode runtime ([`nn`]), a Kalman-filter baseline ([`kalman`]),
//! turning per-link uncertainty into route-level arrival distributions
//! ([`gaussian`], [`multilink`]), interval metrics ([`metrics`]) and an
//! uncertainty-aware transfer holding policy ([`transfer`]).

pub mod error;
pub mod io;
pub mod nn;
pub mod dqr;
pub mod brnn;
pub mod gaussian;
pub mod normal;
pub mod prep;
pub mod training;
pub mod synth;
pub mod multilink;
pub mod metrics;
pub mod evaluation;
pub mod kalman;
pub mod transfer;
pub mod hpo;

pub use error::{Error, Result};

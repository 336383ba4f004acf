//! Interpretable rule induction for return prediction, sleeping-expert
//! aggregation of the learned rules, and walk-forward screening backtests.
//!
//! The pipeline runs as follows:
//!
//! 1. [`panel`] discretizes raw features into quantile modalities.
//! 2. [`rulegen`] designs suitable hyper-rectangle rules and selects a
//!    covering subset, using the algebra in [`rules`].
//! 3. [`aggregate`] combines the active rules' predictions with
//!    exponentially weighted sleeping experts and maps them to scores.
//! 4. [`backtest`] turns scores into monthly screened portfolios and
//!    compares them with best-in-class ESG screens.
//!
//! [`synth`] generates panels with planted rules for verification.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod aggregate;
pub mod backtest;
pub mod bits;
pub mod cli;
pub mod config;
pub mod error;
pub mod panel;
pub mod pipeline;
pub mod rulegen;
pub mod rules;
pub mod synth;

pub use error::{Error, Result};

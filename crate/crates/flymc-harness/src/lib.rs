//! Experiment harness for the `flymc` crate.
//!
//! One JSON config describes a complete experiment: a synthetic dataset,
//! the chains to run on it (full-data MCMC, subsampling chains with
//! untuned or MAP-tuned bounds, tempered negative controls), and the
//! comparison to report. [`runner::run_experiment`] executes it and writes
//! a deterministic artifact directory; the `flymc` binary wraps the same
//! pieces in subcommands.

pub mod config;
pub mod oracle;
pub mod runner;
pub mod synthetic;

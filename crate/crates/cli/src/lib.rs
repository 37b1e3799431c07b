//! Experiment harness for the deep copula classifier: configuration,
//! orchestration, and report writing. The `dcc` binary is a thin shell over
//! [`runner::run_synthetic`] and [`runner::run_pima`].

pub mod config;
pub mod report;
pub mod runner;

//! Config-driven orchestration of the counterfactual pipeline: training
//! fixtures, generating and evaluating runs, grid sweeps and reports.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod run;
pub mod sweep;

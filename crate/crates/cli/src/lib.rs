//! Benchmark harness: manifest resolution, dataset ingestion, method
//! dispatch, run records, budget sweeps, and report emission. The `stepsmc`
//! binary is a thin CLI over this library.

pub mod dataset;
pub mod manifest;
pub mod record;
pub mod report;
pub mod runner;
pub mod svg;
pub mod sweep;

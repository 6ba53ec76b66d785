//! Experiment drivers: configuration profiles, training schedules,
//! checkpoints, metrics files and the individual experiments.

pub mod bars;
pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod reconstruct;
pub mod schedule;
pub mod task1;
pub mod task2;

//! Evaluation statistics.

pub mod accuracy;
pub mod bootstrap;
pub mod cutoffs;
pub mod descriptive;
pub mod overlap;
pub mod ranktests;
pub mod repeatability;

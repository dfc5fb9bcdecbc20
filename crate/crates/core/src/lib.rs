//! Active learning for Sim-to-Real transfer at desk scale: Bayesian fusion of
//! MC-dropout detector outputs, uncertainty acquisition, batch selection
//! strategies, a small MC-dropout classifier, synthetic sim/real benchmarks
//! and the active-learning loop that ties them together.

pub mod acquisition;
pub mod config;
pub mod experiment;
pub mod fusion;
pub mod interchange;
pub mod learner;
pub mod pipeline;
pub mod sampling;
pub mod seed;
pub mod synthdata;

pub mod agents;
pub mod config;
pub mod demand;
pub mod engine;
pub mod error;
pub mod grid;
pub mod matching;
pub mod metrics;
pub mod predictor;
pub mod rng;
pub mod strategies;

//! Replay-buffer experiments for online class-incremental learning: a
//! deterministic RNG, a small dense network, a weighted reservoir buffer,
//! the ER/DER family of losses, a synthetic task stream, a trial runner and
//! the statistics used to compare weighting schemes.

pub mod analysis;
pub mod buffer;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod nn;
pub mod output;
pub mod rng;
pub mod stats;
pub mod stream;

pub use buffer::{InsertOutcome, ReplayBuffer, ReplaySlot, WeightKind, WeightPolicy};
pub use error::{Error, Result};
pub use experiment::{
    run_jobs, run_suite, run_trial, run_trial_on, ExperimentConfig, Method, SuiteResult, TrialConfig, TrialProbe,
    TrialResult,
};
pub use losses::{HeadLayout, LossConfig};
pub use nn::ModelParams;
pub use rng::RngStream;
pub use stream::{build_stream, TaskData, TaskStream, TaskStreamConfig};

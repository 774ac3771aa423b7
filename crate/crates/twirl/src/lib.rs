//! Experience-transfer reinforcement learning on toy continuous-control
//! tasks: a SAC-family learner with dropout/layer-norm critics and a high
//! update-to-data ratio, trained on batches mixed at a fixed ratio from a
//! frozen source-experience buffer and a growing online buffer.

pub mod config;
pub mod envs;
pub mod error;
pub mod evaluate;
pub mod metrics;
pub mod plots;
pub mod linalg;
pub mod nn;
pub mod replay;
pub mod sac;
pub mod seeding;
pub mod transfer;

pub use error::{Error, Result};

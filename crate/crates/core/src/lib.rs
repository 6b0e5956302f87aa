//! Proximal policy optimization with demonstration and self-imitation replay.

pub mod baselines;
pub mod cli;
pub mod config;
pub mod demo;
pub mod diffcore;
pub mod envs;
pub mod error;
pub mod policy;
pub mod ppo;
pub mod replay;
pub mod session;
pub mod train;

pub use error::{Error, Result};

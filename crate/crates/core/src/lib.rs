//! Simulator and multi-agent learning stack for RICS-assisted vehicular
//! edge computing.
//!
//! The crate is organised bottom-up:
//!
//! - [`scenario`]: geometry, mobility and stochastic channel generation.
//! - [`phy`]: RICS coefficient matrices, SINR, rates and the outage transform.
//! - [`mec`]: task model, offloading delays and the driving-safety factor.
//! - [`env`]: the Markov game (observations, joint actions, reward).
//! - [`neural`]: a small dense network engine with exact backprop and Adam.
//! - [`agents`]: replay, DDQN / MP-DQN agents, the training loop,
//!   evaluation, baselines and the exhaustive oracle.
//! - [`config`] and [`cli`]: run configuration and experiment commands.
//!
//! Independent runs (seeds, sweep points, oracle candidates) are fanned out
//! through [`exec`], which uses rayon when the `parallel` feature is enabled.

pub mod agents;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod exec;
pub mod mec;
pub mod neural;
pub mod phy;
pub mod scenario;

pub use error::{Error, Result};

/// Complex baseband sample type used throughout the crate.
pub type C64 = num_complex::Complex64;

//! Unsupervised RSS localization as a grid-world Markov decision process.
//!
//! The agent's location estimate lives on a square-cell grid and moves by one
//! of nine actions per step. Gateways with known positions act as landmarks:
//! whenever a gateway's RSS exceeds a near-field threshold the estimate is
//! rewarded (or penalized) by its distance to that gateway. A deep Q-network
//! learns the movement policy from unlabeled RSS trajectories alone.
//!
//! Modules, bottom up:
//!
//! * [`grid`]: cells, actions, gateway layouts.
//! * [`radio`]: log-distance path loss, RSS synthesis and sample pools.
//! * [`env`]: reward, state features, trajectories.
//! * [`neural`]: MLP with batch normalization and hand-written backprop.
//! * [`dqn`]: replay memory, epsilon-greedy, target network, training loop.
//! * [`baselines`]: multilateration and a supervised fingerprint classifier.
//! * [`metrics`]: error series, summary statistics, CDFs.
//! * [`format`]: on-disk formats for datasets and network weights.
//! * [`seed`]: master-seed expansion into per-stage streams.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod dqn;
pub mod env;
pub mod error;
pub mod format;
pub mod grid;
pub mod metrics;
pub mod neural;
pub mod radio;
pub mod seed;

pub use error::{Error, Result};
pub use grid::{Action, ActionSet, CellIndex, Gateway, GridMap, Position};
pub use radio::{PathLossParams, RssDatabase, RssVector};

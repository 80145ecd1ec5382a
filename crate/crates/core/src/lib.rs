//! Multi-task adaptive LQR with a shared dynamics representation.
//!
//! A fleet of linear systems whose `[A B]` matrices share a low-dimensional
//! basis is controlled with certainty-equivalent gains; each agent fits its
//! own weights by least squares, and the agents jointly refine the basis with
//! federated, preconditioned gradient steps (De-bias & Feature Whiten).

pub mod error;
pub mod fleet;
pub mod harness;
pub mod lqr;
pub mod matkit;
pub mod mtlearn;
pub mod orchestrator;
pub mod rng;
pub mod selfcheck;
pub mod sim;

pub use error::{Error, Result};
pub use fleet::{Fleet, SharedBasis};
pub use harness::{ExperimentConfig, ExperimentOutput, RegretCurve};
pub use lqr::{CostParams, StateSpace};
pub use matkit::{Mat, OrthoBasis, Vector};
pub use mtlearn::{CovStats, DfwMode, DfwReport};
pub use orchestrator::{EpochSchedule, ExplorationMode, ExplorationSchedule, LoopParams, UpdateOrder};
pub use rng::RandomStream;

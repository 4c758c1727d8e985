//! Multi-model target tracking built around an interacting multiple model
//! (IMM) filter whose winner-takes-all output is guarded by a covariance-aware
//! drift gate: the single best model is emitted only when the jump from the
//! fused mixture to the winner is provably bounded.
//!
//! The crate also provides the surrounding machinery needed to benchmark the
//! filter end to end:
//!
//! - [`models`] — constant-velocity / constant-acceleration kinematics and the
//!   cross-model state mapping,
//! - [`kalman`] — linear predict/update plus Gaussian and Student-t
//!   innovation likelihoods,
//! - [`imm`] — the IMM cycle, the drift bound, and the gated output,
//! - [`tpm_adapt`] — online transition-matrix corrections,
//! - [`association`] — a GNN multi-object tracker with M-of-N lifecycle,
//! - [`metrics`] — RMSE and OSPA evaluation,
//! - [`sim`] — a deterministic maneuvering-target simulator,
//! - [`runner`] — one-call scenario -> tracker -> metrics runs.

pub mod association;
pub mod error;
pub mod imm;
pub mod kalman;
pub(crate) mod linalg;
pub mod metrics;
pub mod models;
pub mod runner;
pub mod sim;
pub mod tpm_adapt;

pub use error::{Error, Result};

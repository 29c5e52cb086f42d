//! Reliability analysis for variable-length block codes with ideal feedback on
//! cost-constrained discrete memoryless channels.
//!
//! The crate is organized around a pipeline:
//!
//! 1. [`channel`] — the channel model (`Dmc`) and single-letter quantities
//!    (mutual information, per-letter costs, maximum single-letter divergences).
//! 2. [`capacity`] — the cost-constrained capacity function `C(P)` with its
//!    Lagrange multipliers and landmarks (`C(0)`, `C*`, `P*`, `beta`).
//! 3. [`divergence`] — the piecewise-linear concave envelope `D(P)` of the
//!    per-letter divergences under a cost budget.
//! 4. [`reliability`] — the error exponent `E(R, P)` obtained by splitting a
//!    block into a data phase and a confirm phase and optimizing the split.
//! 5. [`simulator`] — an executable two-phase error-and-erasure scheme with
//!    retransmission, plus the zero-error variant for channels with a zero
//!    transition probability.
//! 6. [`converse`] — numeric lower bounds on expected decoding time and
//!    statistical/pathwise checks evaluated on simulated entropy trajectories.
//!
//! All information quantities are in nats.

pub mod builtin;
pub mod capacity;
pub mod channel;
pub mod converse;
pub mod divergence;
pub mod reliability;
pub mod simulator;

#[cfg(test)]
pub(crate) mod testutil;

pub use channel::{Dmc, InputDistribution, LetterDivergences};

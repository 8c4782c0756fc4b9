//! Simulation toolkit for "qubus" quantum computation: qubits that interact
//! only through a shared continuous-variable bus mode.
//!
//! The crate has two independent simulation backends plus the gate protocols
//! built on top of them:
//!
//! - [`state`]: an exact coherent-branch engine. States are finite sums
//!   `c |bitstring>|alpha>` and every gate (conditional displacement,
//!   conditional rotation, unconditional displacement, single-qubit unitary)
//!   maps that family to itself, so there is no truncation error.
//! - [`fock`]: a brute-force truncated number-basis simulator used as an
//!   oracle against the branch engine, and for the dispersive-limit and
//!   displaced-Kerr sandwich analyses that have no branch representation.
//! - [`measure`]: homodyne, photon-number and bucket detector models with
//!   Bayesian conditioning of the branch state.
//! - [`protocols`]: the named qubus gates — QND readout, displacement and
//!   rotation parity gates, the measurement-free geometric-phase gates and
//!   their closed-form error budgets.
//! - [`checks`]: the self-validation suite wired into `qubus validate`.

pub mod checks;
pub mod error;
pub mod fock;
pub mod measure;
pub mod protocols;
pub mod qubit;
pub(crate) mod ser;
pub mod state;

pub use error::{QubusError, Result};
pub use state::{coherent_overlap, Branch, BusOp, HybridState, Trajectory, C64};

/// The user guide, rendered by mdbook from `book/`; included here so the
/// code blocks run under `cargo test --doc`.
pub mod guide {
    #[doc = include_str!("../../../book/src/overview.md")]
    pub mod overview {}
    #[doc = include_str!("../../../book/src/branch-engine.md")]
    pub mod branch_engine {}
    #[doc = include_str!("../../../book/src/measurement.md")]
    pub mod measurement {}
    #[doc = include_str!("../../../book/src/protocols.md")]
    pub mod protocols {}
    #[doc = include_str!("../../../book/src/validation.md")]
    pub mod validation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}

use thiserror::Error;

/// Errors produced by state operations, measurement conditioning, the Fock
/// oracle, and protocol drivers.
#[derive(Debug, Error)]
pub enum QubusError {
    #[error("qubit index {qubit} out of range for {n_qubits}-qubit register")]
    QubitOutOfRange { qubit: usize, n_qubits: usize },

    #[error("single-qubit matrix is not unitary (deviation {deviation:.3e})")]
    NonUnitary { deviation: f64 },

    #[error("branch count exceeded cap of {cap}; circuit left the coherent-branch gate set")]
    BranchCapExceeded { cap: usize },

    #[error("non-finite amplitude produced by {context}")]
    NonFinite { context: &'static str },

    #[error("bus mode already consumed by a projective measurement")]
    BusConsumed,

    #[error("forced measurement outcome has probability below 1e-300")]
    ZeroProbabilityOutcome,

    #[error("Fock truncation inadequate: tail mass {tail:.3e} in top levels (dim {dim})")]
    TruncationInadequate { tail: f64, dim: usize },

    #[error("Fock dimension {dim} too small for amplitude excursion {excursion:.3}")]
    DimensionTooSmall { dim: usize, excursion: f64 },

    #[error("parameters outside the dispersive regime: |Omega/Delta| = {ratio:.3}")]
    NonDispersive { ratio: f64 },

    #[error("integrator failed to converge: {context}")]
    ConvergenceFailure { context: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("density matrix is not physical: {reason}")]
    NonPhysicalDensity { reason: String },

    #[error("displacement path is not closed (residual {residual:.3e})")]
    PathNotClosed { residual: f64 },

    #[error("sequence search exhausted without a match for {target}")]
    SequenceSearchFailed { target: String },
}

pub type Result<T> = std::result::Result<T, QubusError>;

//! Exact branch representation of n qubits coupled to one coherent bus mode.
//!
//! A state is a finite superposition of branches `c |bitstring> |alpha>`,
//! where `alpha` is a coherent amplitude of the bus. This family is closed
//! under conditional displacements, conditional rotations, unconditional
//! displacements and single-qubit unitaries, so every gate in the qubus
//! repertoire is simulated without truncation error. Displacement phases are
//! folded into the branch coefficients so interference after single-qubit
//! gates works out automatically.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QubusError, Result};
use crate::ser::complex;

pub type C64 = Complex64;

/// Default Euclidean tolerance for merging branches with equal labels.
pub const DEFAULT_MERGE_TOL: f64 = 1e-9;
/// Coefficients below this magnitude are pruned on construction.
pub const COEFF_PRUNE_TOL: f64 = 1e-14;
/// Default ceiling on the number of branches.
pub const DEFAULT_BRANCH_CAP: usize = 4096;

/// One term of the superposition: computational-basis label, complex
/// coefficient and coherent bus amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// Basis label with qubit 0 in the least significant bit; bit value 0 is
    /// the sigma_z = +1 eigenstate.
    pub label: usize,
    #[serde(with = "complex")]
    pub coeff: C64,
    #[serde(with = "complex")]
    pub bus: C64,
}

/// Tagged circuit element acting on the joint qubit-bus state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BusOp {
    /// Bus displacement D(sigma_z beta) conditioned on one qubit.
    CondDisp {
        qubit: usize,
        #[serde(with = "complex")]
        beta: C64,
    },
    /// Phase-space rotation exp(i theta sigma_z a'a) conditioned on one qubit.
    CondRot { qubit: usize, theta: f64 },
    /// Unconditional displacement D(beta).
    UncondDisp {
        #[serde(with = "complex")]
        beta: C64,
    },
    /// Arbitrary 2x2 unitary on one qubit.
    SingleQubit {
        qubit: usize,
        u: [[ComplexEntry; 2]; 2],
    },
}

/// Serializable complex matrix entry ({"re": .., "im": ..} on the wire).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexEntry {
    pub re: f64,
    pub im: f64,
}

impl From<C64> for ComplexEntry {
    fn from(z: C64) -> Self {
        Self { re: z.re, im: z.im }
    }
}

impl From<ComplexEntry> for C64 {
    fn from(e: ComplexEntry) -> Self {
        C64::new(e.re, e.im)
    }
}

impl BusOp {
    pub fn cond_disp(qubit: usize, beta: C64) -> Self {
        BusOp::CondDisp { qubit, beta }
    }

    pub fn cond_rot(qubit: usize, theta: f64) -> Self {
        BusOp::CondRot { qubit, theta }
    }

    pub fn uncond_disp(beta: C64) -> Self {
        BusOp::UncondDisp { beta }
    }

    pub fn single_qubit(qubit: usize, u: [[C64; 2]; 2]) -> Self {
        BusOp::SingleQubit {
            qubit,
            u: [
                [u[0][0].into(), u[0][1].into()],
                [u[1][0].into(), u[1][1].into()],
            ],
        }
    }

    pub fn hadamard(qubit: usize) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self::single_qubit(
            qubit,
            [
                [C64::new(h, 0.0), C64::new(h, 0.0)],
                [C64::new(h, 0.0), C64::new(-h, 0.0)],
            ],
        )
    }
}

/// Overlap of two coherent states, `<b|a> = exp(-|a|^2/2 - |b|^2/2 + conj(b) a)`.
pub fn coherent_overlap(a: C64, b: C64) -> C64 {
    (-0.5 * a.norm_sqr() - 0.5 * b.norm_sqr() + b.conj() * a).exp()
}

/// Per-op record of every branch's bus amplitude, keyed by basis label.
pub type Trajectory = Vec<Vec<(usize, C64)>>;

/// Superposition of coherent branches over an n-qubit register and one bus.
///
/// Immutable by convention: every operation returns a new state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HybridState {
    n_qubits: usize,
    branches: Vec<Branch>,
    merge_tol: f64,
    #[serde(default = "default_cap")]
    branch_cap: usize,
    /// Set once a projective bus measurement has consumed the mode.
    #[serde(default)]
    bus_consumed: bool,
}

fn default_cap() -> usize {
    // QUBUS_BRANCH_CAP overrides the compiled-in cap process-wide
    static CAP: std::sync::OnceLock<usize> = std::sync::OnceLock::new();
    *CAP.get_or_init(|| {
        std::env::var("QUBUS_BRANCH_CAP")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(DEFAULT_BRANCH_CAP)
    })
}

impl HybridState {
    /// Build a state from raw branches, merging duplicates and pruning
    /// negligible coefficients.
    pub fn new(n_qubits: usize, branches: Vec<Branch>) -> Result<Self> {
        Self::with_options(n_qubits, branches, DEFAULT_MERGE_TOL, default_cap())
    }

    pub fn with_options(
        n_qubits: usize,
        branches: Vec<Branch>,
        merge_tol: f64,
        branch_cap: usize,
    ) -> Result<Self> {
        let mut state = Self {
            n_qubits,
            branches: Vec::new(),
            merge_tol,
            branch_cap,
            bus_consumed: false,
        };
        for b in branches {
            state.push_merged(b)?;
        }
        state.branches.retain(|b| b.coeff.norm() >= COEFF_PRUNE_TOL);
        state.check_finite("state construction")?;
        Ok(state)
    }

    /// Product state: a full 2^n qubit amplitude vector times `|alpha>`.
    pub fn product(qubit_amps: &[C64], alpha: C64) -> Result<Self> {
        let dim = qubit_amps.len();
        assert!(dim.is_power_of_two() && dim >= 2, "qubit vector length must be 2^n");
        let n_qubits = dim.trailing_zeros() as usize;
        let branches = qubit_amps
            .iter()
            .enumerate()
            .map(|(label, &coeff)| Branch { label, coeff, bus: alpha })
            .collect();
        Self::new(n_qubits, branches)
    }

    /// The equal superposition of all basis states times `|alpha>`.
    pub fn plus_all(n_qubits: usize, alpha: C64) -> Result<Self> {
        let dim = 1usize << n_qubits;
        let amp = C64::new(1.0 / (dim as f64).sqrt(), 0.0);
        Self::product(&vec![amp; dim], alpha)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn merge_tol(&self) -> f64 {
        self.merge_tol
    }

    pub fn branch_cap(&self) -> usize {
        self.branch_cap
    }

    pub fn with_branch_cap(mut self, cap: usize) -> Self {
        self.branch_cap = cap;
        self
    }

    pub fn bus_consumed(&self) -> bool {
        self.bus_consumed
    }

    pub(crate) fn set_bus_consumed(&mut self) {
        self.bus_consumed = true;
    }

    fn check_qubit(&self, qubit: usize) -> Result<()> {
        if qubit >= self.n_qubits {
            return Err(QubusError::QubitOutOfRange { qubit, n_qubits: self.n_qubits });
        }
        Ok(())
    }

    fn check_not_consumed(&self) -> Result<()> {
        if self.bus_consumed {
            return Err(QubusError::BusConsumed);
        }
        Ok(())
    }

    fn check_finite(&self, context: &'static str) -> Result<()> {
        for b in &self.branches {
            if !b.coeff.re.is_finite()
                || !b.coeff.im.is_finite()
                || !b.bus.re.is_finite()
                || !b.bus.im.is_finite()
            {
                return Err(QubusError::NonFinite { context });
            }
        }
        Ok(())
    }

    fn push_merged(&mut self, b: Branch) -> Result<()> {
        if b.coeff.norm() < COEFF_PRUNE_TOL {
            return Ok(());
        }
        for existing in &mut self.branches {
            if existing.label == b.label && (existing.bus - b.bus).norm() <= self.merge_tol {
                existing.coeff += b.coeff;
                return Ok(());
            }
        }
        self.branches.push(b);
        if self.branches.len() > self.branch_cap {
            return Err(QubusError::BranchCapExceeded { cap: self.branch_cap });
        }
        Ok(())
    }

    /// Rebuild after a coefficient update so pruning applies again.
    fn rebuilt(&self, branches: Vec<Branch>) -> Result<Self> {
        let mut out = Self {
            n_qubits: self.n_qubits,
            branches: Vec::new(),
            merge_tol: self.merge_tol,
            branch_cap: self.branch_cap,
            bus_consumed: self.bus_consumed,
        };
        for b in branches {
            out.push_merged(b)?;
        }
        out.branches.retain(|b| b.coeff.norm() >= COEFF_PRUNE_TOL);
        out.check_finite("branch update")?;
        Ok(out)
    }

    /// Squared norm, including coherent overlaps between branches that share
    /// a basis label.
    pub fn norm_sqr(&self) -> f64 {
        let mut total = C64::new(0.0, 0.0);
        for i in &self.branches {
            for j in &self.branches {
                if i.label == j.label {
                    total += i.coeff * j.coeff.conj() * coherent_overlap(i.bus, j.bus);
                }
            }
        }
        total.re
    }

    /// Scale all coefficients so the state is normalized.
    pub fn normalized(&self) -> Result<Self> {
        let n2 = self.norm_sqr();
        if !(n2 > 1e-300) {
            return Err(QubusError::ZeroProbabilityOutcome);
        }
        let scale = C64::new(1.0 / n2.sqrt(), 0.0);
        let branches = self
            .branches
            .iter()
            .map(|b| Branch { coeff: b.coeff * scale, ..*b })
            .collect();
        self.rebuilt(branches)
    }

    /// Conditional displacement D(sigma_z beta): branches with qubit bit 0
    /// shift by +beta, bit 1 by -beta, with the single-displacement phase
    /// folded into the coefficient.
    pub fn cond_disp(&self, qubit: usize, beta: C64) -> Result<Self> {
        self.check_qubit(qubit)?;
        self.check_not_consumed()?;
        let branches = self
            .branches
            .iter()
            .map(|b| {
                let sigma = if (b.label >> qubit) & 1 == 0 { 1.0 } else { -1.0 };
                displaced(b, sigma * beta)
            })
            .collect();
        self.rebuilt(branches)
    }

    /// Conditional phase-space rotation exp(i theta sigma_z a'a).
    pub fn cond_rot(&self, qubit: usize, theta: f64) -> Result<Self> {
        self.check_qubit(qubit)?;
        self.check_not_consumed()?;
        let branches = self
            .branches
            .iter()
            .map(|b| {
                let sigma = if (b.label >> qubit) & 1 == 0 { 1.0 } else { -1.0 };
                Branch { bus: b.bus * C64::new(0.0, sigma * theta).exp(), ..*b }
            })
            .collect();
        self.rebuilt(branches)
    }

    /// Unconditional displacement D(beta) of the bus.
    pub fn uncond_disp(&self, beta: C64) -> Result<Self> {
        self.check_not_consumed()?;
        let branches = self.branches.iter().map(|b| displaced(b, beta)).collect();
        self.rebuilt(branches)
    }

    /// Apply a 2x2 unitary to one qubit, splitting and re-merging branches.
    pub fn single_qubit(&self, qubit: usize, u: [[C64; 2]; 2]) -> Result<Self> {
        self.check_qubit(qubit)?;
        let dev = unitarity_deviation(&u);
        if dev > 1e-12 {
            return Err(QubusError::NonUnitary { deviation: dev });
        }
        let mut branches = Vec::with_capacity(self.branches.len() * 2);
        for b in &self.branches {
            let bit = (b.label >> qubit) & 1;
            for out_bit in 0..2 {
                let amp = u[out_bit][bit];
                if amp.norm() == 0.0 {
                    continue;
                }
                let label = (b.label & !(1 << qubit)) | (out_bit << qubit);
                branches.push(Branch { label, coeff: b.coeff * amp, bus: b.bus });
            }
        }
        self.rebuilt(branches)
    }

    pub fn apply(&self, op: &BusOp) -> Result<Self> {
        match op {
            BusOp::CondDisp { qubit, beta } => self.cond_disp(*qubit, *beta),
            BusOp::CondRot { qubit, theta } => self.cond_rot(*qubit, *theta),
            BusOp::UncondDisp { beta } => self.uncond_disp(*beta),
            BusOp::SingleQubit { qubit, u } => self.single_qubit(
                *qubit,
                [
                    [u[0][0].into(), u[0][1].into()],
                    [u[1][0].into(), u[1][1].into()],
                ],
            ),
        }
    }

    /// Sequentially apply `ops`, recording every branch's bus amplitude after
    /// each op. The trajectory is the data behind phase-space
    /// stage diagrams.
    pub fn run_circuit(&self, ops: &[BusOp]) -> Result<(Self, Trajectory)> {
        let mut state = self.clone();
        let mut trajectory = Vec::with_capacity(ops.len());
        for op in ops {
            state = state.apply(op)?;
            trajectory.push(state.branches.iter().map(|b| (b.label, b.bus)).collect());
        }
        Ok((state, trajectory))
    }

    /// Reduced qubit density matrix, tracing out the bus:
    /// `rho[l_i, l_j] = sum coeff_i conj(coeff_j) <bus_j|bus_i>`.
    pub fn reduced_qubit_density(&self) -> DMatrix<C64> {
        let dim = 1usize << self.n_qubits;
        let mut rho = DMatrix::zeros(dim, dim);
        for i in &self.branches {
            for j in &self.branches {
                rho[(i.label, j.label)] +=
                    i.coeff * j.coeff.conj() * coherent_overlap(i.bus, j.bus);
            }
        }
        rho
    }

    /// Overlap `<target| rho_reduced |target>` with a pure qubit state.
    pub fn fidelity_to(&self, target: &[C64]) -> Result<f64> {
        let dim = 1usize << self.n_qubits;
        if target.len() != dim {
            return Err(QubusError::DimensionMismatch { expected: dim, got: target.len() });
        }
        let rho = self.reduced_qubit_density();
        let mut f = C64::new(0.0, 0.0);
        for (i, &ti) in target.iter().enumerate() {
            for (j, &tj) in target.iter().enumerate() {
                f += ti.conj() * rho[(i, j)] * tj;
            }
        }
        Ok(f.re)
    }

    /// Largest pairwise distance between branch bus amplitudes; zero means
    /// the bus is disentangled from the qubits.
    pub fn bus_spread(&self) -> f64 {
        let mut max = 0.0f64;
        for i in &self.branches {
            for j in &self.branches {
                max = max.max((i.bus - j.bus).norm());
            }
        }
        max
    }

    /// Sum of coefficients per basis label, valid once all branches share a
    /// common bus amplitude (or the bus is consumed).
    pub fn qubit_vector(&self) -> Vec<C64> {
        let mut v = vec![C64::new(0.0, 0.0); 1 << self.n_qubits];
        for b in &self.branches {
            v[b.label] += b.coeff;
        }
        v
    }

    /// Collapse every branch's bus to vacuum and mark the mode consumed.
    /// Used after projective bus measurements; same-label branches merge.
    pub(crate) fn consume_bus(&self) -> Result<Self> {
        let branches = self
            .branches
            .iter()
            .map(|b| Branch { bus: C64::new(0.0, 0.0), ..*b })
            .collect();
        let mut out = self.rebuilt(branches)?;
        out.set_bus_consumed();
        Ok(out)
    }

    /// Multiply each branch coefficient by `f(branch)` and renormalize.
    pub(crate) fn reweighted<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&Branch) -> C64,
    {
        let branches = self
            .branches
            .iter()
            .map(|b| Branch { coeff: b.coeff * f(b), ..*b })
            .collect();
        self.rebuilt(branches)?.normalized()
    }
}

fn displaced(b: &Branch, shift: C64) -> Branch {
    // D(beta)|alpha> = exp(i Im(beta conj(alpha))) |alpha + beta>
    let phase = C64::new(0.0, (shift * b.bus.conj()).im).exp();
    Branch { label: b.label, coeff: b.coeff * phase, bus: b.bus + shift }
}

fn unitarity_deviation(u: &[[C64; 2]; 2]) -> f64 {
    let mut dev = 0.0f64;
    for i in 0..2 {
        for j in 0..2 {
            let mut dot = C64::new(0.0, 0.0);
            for k in 0..2 {
                dot += u[k][i].conj() * u[k][j];
            }
            let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            dev = dev.max((dot - target).norm());
        }
    }
    dev
}

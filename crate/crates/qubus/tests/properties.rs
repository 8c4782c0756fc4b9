//! Property tests for the core invariants of the branch engine.

use num_complex::Complex64;
use proptest::prelude::*;

use qubus::fock::{circuit_truncation_dim, embed_hybrid, run_circuit_fock};
use qubus::protocols::{geometric_phase_of_path, shoelace_double_area};
use qubus::state::{coherent_overlap, BusOp, HybridState};

type C64 = Complex64;

fn complex_in_disk(r: f64) -> impl Strategy<Value = C64> {
    (0.0..r, 0.0..std::f64::consts::TAU)
        .prop_map(|(m, a)| C64::new(m * a.cos(), m * a.sin()))
}

fn arb_op(n_qubits: usize) -> impl Strategy<Value = BusOp> {
    prop_oneof![
        (0..n_qubits, complex_in_disk(1.5)).prop_map(|(q, b)| BusOp::cond_disp(q, b)),
        (0..n_qubits, -0.5..0.5f64).prop_map(|(q, t)| BusOp::cond_rot(q, t)),
        complex_in_disk(1.5).prop_map(BusOp::uncond_disp),
        (0..n_qubits).prop_map(BusOp::hadamard),
    ]
}

fn arb_amps(n_qubits: usize) -> impl Strategy<Value = Vec<C64>> {
    proptest::collection::vec(complex_in_disk(1.0), 1 << n_qubits).prop_filter_map(
        "non-null state",
        |v| {
            let n: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            (n > 1e-3).then(|| v.iter().map(|z| z / n).collect())
        },
    )
}

/// <psi|psi> from the branch list, honoring coherent-state overlaps within
/// each basis label.
fn state_norm(s: &HybridState) -> f64 {
    let mut n2 = C64::new(0.0, 0.0);
    for a in s.branches() {
        for b in s.branches() {
            if a.label == b.label {
                n2 += b.coeff.conj() * a.coeff * coherent_overlap(a.bus, b.bus);
            }
        }
    }
    n2.re.sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn every_op_preserves_norm(
        amps in arb_amps(2),
        alpha in complex_in_disk(2.0),
        ops in proptest::collection::vec(arb_op(2), 1..8),
    ) {
        let mut s = HybridState::product(&amps, alpha).unwrap();
        for op in &ops {
            s = s.apply(op).unwrap();
            prop_assert!((state_norm(&s) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn displacements_compose_with_the_half_area_phase(
        b1 in complex_in_disk(3.0),
        b2 in complex_in_disk(3.0),
        alpha in complex_in_disk(2.0),
    ) {
        let s = HybridState::product(&[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], alpha).unwrap();
        let two = s
            .apply(&BusOp::uncond_disp(b1)).unwrap()
            .apply(&BusOp::uncond_disp(b2)).unwrap();
        let one = s.apply(&BusOp::uncond_disp(b1 + b2)).unwrap();
        // D(b2) D(b1) = exp((b2 conj(b1) - conj(b2) b1)/2) D(b1 + b2)
        let phase = ((b2 * b1.conj() - b2.conj() * b1) * 0.5).exp();
        let got = two.branches()[0].coeff;
        let want = one.branches()[0].coeff * phase;
        prop_assert!((got - want).norm() < 1e-12, "got {got} want {want}");
        prop_assert!((two.branches()[0].bus - one.branches()[0].bus).norm() < 1e-12);
    }

    #[test]
    fn closed_paths_pick_up_twice_the_enclosed_area(
        steps in proptest::collection::vec(complex_in_disk(1.5), 2..8),
    ) {
        let mut path = steps;
        let total: C64 = path.iter().sum();
        path.push(-total);
        let phase = geometric_phase_of_path(&path).unwrap();
        let twice_area = shoelace_double_area(&path);
        let diff = (C64::new(0.0, phase).exp() - C64::new(0.0, twice_area).exp()).norm();
        prop_assert!(diff < 1e-10, "phase {phase} vs twice-area {twice_area}");
    }

    #[test]
    fn rebuilding_from_branches_is_a_no_op(
        amps in arb_amps(2),
        alpha in complex_in_disk(2.0),
        ops in proptest::collection::vec(arb_op(2), 0..6),
    ) {
        let mut s = HybridState::product(&amps, alpha).unwrap();
        for op in &ops {
            s = s.apply(op).unwrap();
        }
        let rebuilt = HybridState::new(s.n_qubits(), s.branches().to_vec()).unwrap();
        prop_assert_eq!(rebuilt.branches().len(), s.branches().len());
        for (a, b) in rebuilt.branches().iter().zip(s.branches()) {
            prop_assert_eq!(a.label, b.label);
            prop_assert!((a.coeff - b.coeff).norm() < 1e-14);
            prop_assert!((a.bus - b.bus).norm() < 1e-14);
        }
    }
}

proptest! {
    // the oracle runs a dense truncated evolution per case, so fewer cases
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn branch_engine_agrees_with_number_basis_oracle(
        amps in arb_amps(2),
        alpha in complex_in_disk(1.5),
        ops in proptest::collection::vec(arb_op(2), 1..6),
    ) {
        let dim = circuit_truncation_dim(2, alpha, &ops).unwrap() + 8;
        let oracle = run_circuit_fock(2, &amps, alpha, &ops, dim).unwrap();
        let mut s = HybridState::product(&amps, alpha).unwrap();
        for op in &ops {
            s = s.apply(op).unwrap();
        }
        let embedded = embed_hybrid(&s, dim).unwrap();
        let f = embedded.fidelity_to(&oracle);
        prop_assert!(f >= 1.0 - 1e-8, "fidelity {f}");
    }
}

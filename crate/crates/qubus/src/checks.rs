//! Built-in validation suites: each suite exercises one invariant of the
//! simulator (displacement composition law, area law, oracle equivalence,
//! closed-form agreement, dispersive-limit fit, sandwich scaling, homodyne
//! kernel, heralding bookkeeping) and reports a machine-readable verdict.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fock::{circuit_truncation_dim, dispersive_jc_validate, embed_hybrid, run_circuit_fock,
    sandwich_displacement, JCParams};
use crate::measure::{photon_number_mass, photon_number_measure, quadrature_kernel};
use crate::protocols::{rotation_gate_closed_forms, frozen_rotation_only_sequence,
    geometric_phase_of_path, shoelace_double_area};
use crate::state::{BusOp, HybridState};

type C64 = Complex64;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub suite: String,
    pub passed: bool,
    /// worst observed deviation (suite-specific scale)
    pub worst: f64,
    pub detail: String,
}

fn result(suite: &str, passed: bool, worst: f64, detail: String) -> CheckResult {
    CheckResult { suite: suite.to_string(), passed, worst, detail }
}

/// Run every suite whose name contains `filter` (all when `None`).
pub fn run_checks(filter: Option<&str>) -> Result<Vec<CheckResult>> {
    let all: &[(&str, fn() -> Result<CheckResult>)] = &[
        ("composition-law", composition_law),
        ("area-law", area_law),
        ("oracle-equivalence", oracle_equivalence),
        ("closed-form-agreement", closed_form_agreement),
        ("dispersive-jc", dispersive_jc),
        ("sandwich-scaling", sandwich_scaling),
        ("homodyne-kernel", homodyne_kernel),
        ("error-formula-consistency", error_formula_consistency),
        ("heralding-ledger", heralding_ledger),
    ];
    let mut out = Vec::new();
    for (name, f) in all {
        if let Some(pat) = filter {
            if !name.contains(pat) {
                continue;
            }
        }
        out.push(f()?);
    }
    Ok(out)
}

/// D(b2) D(b1) = exp(i Im(b2 conj b1)) D(b1 + b2), checked through the
/// branch engine on random displacements up to |b| = 3.
fn composition_law() -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let b1 = C64::new(rng.gen::<f64>() * 6.0 - 3.0, rng.gen::<f64>() * 6.0 - 3.0);
        let b2 = C64::new(rng.gen::<f64>() * 6.0 - 3.0, rng.gen::<f64>() * 6.0 - 3.0);
        let a0 = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        let s = HybridState::product(&[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], a0)?;
        let two = s.uncond_disp(b1)?.uncond_disp(b2)?;
        let one = s.uncond_disp(b1 + b2)?;
        let interchange = C64::new(0.0, (b2 * b1.conj()).im).exp();
        let dev = (two.branches()[0].coeff - interchange * one.branches()[0].coeff)
            .norm()
            .max((two.branches()[0].bus - one.branches()[0].bus).norm());
        worst = worst.max(dev);
    }
    Ok(result(
        "composition-law",
        worst < 1e-12,
        worst,
        format!("200 random (b1, b2) pairs, |b| <= 3; worst deviation {worst:.3e} (tol 1e-12)"),
    ))
}

/// Accumulated phase around a closed polygon equals twice the shoelace area.
fn area_law() -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(3..9);
        let mut steps: Vec<C64> = (0..n)
            .map(|_| C64::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0))
            .collect();
        let close = -steps.iter().sum::<C64>();
        steps.push(close);
        let phase = geometric_phase_of_path(&steps)?;
        let area2 = shoelace_double_area(&steps);
        let dev = (C64::new(0.0, phase).exp() - C64::new(0.0, area2).exp()).norm();
        worst = worst.max(dev);
    }
    Ok(result(
        "area-law",
        worst < 1e-10,
        worst,
        format!("50 random closed polygons; worst phase deviation {worst:.3e} (tol 1e-10)"),
    ))
}

fn random_ops(rng: &mut ChaCha8Rng, count: usize) -> Vec<BusOp> {
    (0..count)
        .map(|_| {
            let qubit = rng.gen_range(0..2);
            match rng.gen_range(0..4) {
                0 => BusOp::cond_disp(
                    qubit,
                    C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
                ),
                1 => BusOp::cond_rot(qubit, rng.gen::<f64>() * 2.0 - 1.0),
                2 => BusOp::uncond_disp(C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)),
                _ => BusOp::hadamard(qubit),
            }
        })
        .collect()
}

/// Branch engine vs truncated-Fock brute force on random circuits.
fn oracle_equivalence() -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let alpha = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        let count = rng.gen_range(1..=10);
        let ops = random_ops(&mut rng, count);
        let amps = [
            C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
            C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
            C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
            C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
        ];
        let norm: f64 = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let amps: Vec<C64> = amps.iter().map(|z| z / norm).collect();
        let (engine, _) = HybridState::product(&amps, alpha)?.run_circuit(&ops)?;
        // a little headroom over the planned dimension keeps the strict
        // per-op tail guard quiet on unlucky draws
        let dim = circuit_truncation_dim(2, alpha, &ops)? + 8;
        let brute = run_circuit_fock(2, &amps, alpha, &ops, dim)?;
        let fidelity = embed_hybrid(&engine, dim)?.fidelity_to(&brute);
        worst = worst.max(1.0 - fidelity);
    }
    Ok(result(
        "oracle-equivalence",
        worst < 1e-8,
        worst,
        format!("100 random circuits of <= 10 ops; worst infidelity {worst:.3e} (tol 1e-8)"),
    ))
}

/// The frozen rotation-only sequence reproduces every closed-form quantity
/// on the certification grid, and the stated small-angle limits hold.
fn closed_form_agreement() -> Result<CheckResult> {
    let ops = frozen_rotation_only_sequence();
    let mut worst = 0.0f64;
    for alpha in [0.5, 1.0, 2.0] {
        for theta in [0.01, 0.05, 0.1] {
            let forms = rotation_gate_closed_forms(alpha, theta);
            let bus0 = C64::new(alpha, 0.0) * C64::new(0.0, std::f64::consts::FRAC_PI_4).exp();
            let beta = 2.0f64.sqrt() * alpha;
            let mut s = HybridState::product(
                &[C64::new(0.5, 0.0); 4],
                bus0,
            )?;
            for op in &ops {
                s = s.apply(&op.instantiate(theta, beta))?;
            }
            let phases = [forms.phi_gg, forms.phi_ge, forms.phi_eg, forms.phi_ee];
            let buses = [forms.alpha_plus, bus0, bus0, forms.alpha_minus];
            for b in s.branches() {
                let dev_bus = (b.bus - buses[b.label]).norm();
                let dev_phase =
                    (b.coeff * 2.0 - C64::new(0.0, phases[b.label]).exp()).norm();
                worst = worst.max(dev_bus).max(dev_phase);
            }
            // psi/gamma are defined through the overlap of the returned even
            // buses with the starting point
            let ov_p = crate::state::coherent_overlap(forms.alpha_plus, bus0);
            let ov_m = crate::state::coherent_overlap(forms.alpha_minus, bus0);
            worst = worst.max((ov_p.arg() - forms.psi_gg).abs());
            worst = worst.max((ov_m.arg() - forms.psi_ee).abs());
            worst = worst.max((-ov_p.norm().ln() - forms.gamma_gg).abs());
            worst = worst.max((-ov_m.norm().ln() - forms.gamma_ee).abs());
            // phi_d assembles from the branch phases and trace-out phases
            let phi_d = forms.phi_gg - forms.phi_ge - forms.phi_eg + forms.phi_ee
                + forms.psi_gg
                + forms.psi_ee;
            worst = worst.max((phi_d - forms.phi_d).abs());
        }
    }
    // gamma_gg / (4 alpha^2 theta^4) -> 1 for small theta
    let small = rotation_gate_closed_forms(1.0, 0.01);
    let gamma_ratio = small.gamma_gg / (4.0 * 0.01f64.powi(4));
    let limit_ok = (gamma_ratio - 1.0).abs() < 0.05;
    Ok(result(
        "closed-form-agreement",
        worst < 1e-9 && limit_ok,
        worst,
        format!(
            "frozen sequence vs closed forms over 9-point grid; worst deviation {worst:.3e} \
             (tol 1e-9); gamma_gg small-angle ratio {gamma_ratio:.4}"
        ),
    ))
}

/// Fitted effective chi of the detuned exchange interaction vs the
/// dispersive prediction, improving as detuning grows.
fn dispersive_jc() -> Result<CheckResult> {
    let p50 = JCParams { omega0: 0.0, omega_c: 5.0, omega_rabi: 0.1, t_final: 400.0, dt: 0.02 };
    let p100 = JCParams { omega0: 0.0, omega_c: 10.0, omega_rabi: 0.1, t_final: 400.0, dt: 0.02 };
    let r50 = dispersive_jc_validate(&p50, C64::new(1.0, 0.0), 24)?;
    let r100 = dispersive_jc_validate(&p100, C64::new(1.0, 0.0), 24)?;
    let passed = r50.relative_error < 0.05 && r100.relative_error < r50.relative_error;
    Ok(result(
        "dispersive-jc",
        passed,
        r50.relative_error,
        format!(
            "chi_eff vs Omega^2/(4 Delta): rel. error {:.4} at Delta/Omega=50, {:.4} at 100 \
             (tol 0.05, monotone improvement)",
            r50.relative_error, r100.relative_error
        ),
    ))
}

/// Third-order scaling of the sandwich construction and linearity of the
/// induced displacement in |alpha|.
fn sandwich_scaling() -> Result<CheckResult> {
    let alpha = C64::new(2.0, 1.0);
    let (_, full) = sandwich_displacement(alpha, 0.1, 48)?;
    let (_, half) = sandwich_displacement(alpha, 0.05, 48)?;
    let ratio = full.error / half.error;
    let ratio_ok = (ratio - 8.0).abs() < 1.6;
    let chi_t = 0.05;
    let (_, r1) = sandwich_displacement(C64::new(1.0, 0.0), chi_t, 48)?;
    let (_, r2) = sandwich_displacement(C64::new(2.0, 0.0), chi_t, 48)?;
    let lin = r2.induced_displacement.norm() / r1.induced_displacement.norm();
    let lin_ok = (lin - 2.0).abs() < 0.04;
    Ok(result(
        "sandwich-scaling",
        ratio_ok && lin_ok,
        (ratio - 8.0).abs(),
        format!(
            "error ratio t vs t/2: {ratio:.3} (target 8 +- 20%); induced displacement \
             |alpha|-doubling ratio {lin:.4} (target 2 +- 2%)"
        ),
    ))
}

/// Closed-form quadrature amplitude <x|alpha> vs the number-basis Hermite
/// sum, evaluated by stable recurrence.
fn homodyne_kernel() -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for &(re, im) in &[(0.0, 0.0), (1.5, 0.0), (0.0, 2.0), (-1.0, 1.5), (2.5, -2.0)] {
        let alpha = C64::new(re, im);
        let pre = (-0.5 * alpha.norm_sqr()).exp();
        for k in -12..=12 {
            let x = k as f64;
            // psi_n(x) recurrence for <x|n> with variance-1 quadrature
            let mut psi_prev = C64::new(0.0, 0.0);
            let mut psi = C64::new((2.0 * std::f64::consts::PI).powf(-0.25) * (-x * x / 4.0).exp(), 0.0);
            let mut sum = psi * pre;
            let mut coeff = C64::new(1.0, 0.0);
            for n in 0..400usize {
                let next = (psi * x - psi_prev * (n as f64).sqrt()) / ((n + 1) as f64).sqrt();
                psi_prev = psi;
                psi = next;
                coeff *= alpha / ((n + 1) as f64).sqrt();
                sum += coeff * psi * pre;
            }
            let dev = (sum - quadrature_kernel(x, alpha)).norm();
            worst = worst.max(dev);
        }
    }
    Ok(result(
        "homodyne-kernel",
        worst < 1e-8,
        worst,
        format!("kernel vs 400-term number-basis sum on |x| <= 12; worst {worst:.3e} (tol 1e-8)"),
    ))
}

/// The compact quoted erfc error formulas vs the exact Gaussian-overlap
/// forms: within a factor of 2 in the erfc argument regime theta <= 0.1.
fn error_formula_consistency() -> Result<CheckResult> {
    let mut worst_factor = 1.0f64;
    let mut track = |exact_arg: f64, quoted_arg: f64| {
        if exact_arg > 0.0 && quoted_arg > 0.0 {
            let f = (exact_arg / quoted_arg).max(quoted_arg / exact_arg);
            worst_factor = worst_factor.max(f);
        }
    };
    // QND: exact argument from peaks +-2 beta vs quoted beta/sqrt 2
    for beta in [1.0f64, 2.0, 3.0] {
        track(4.0 * beta / (2.0 * 2.0f64.sqrt()), beta / 2.0f64.sqrt());
    }
    // rotation parity, homodyne variant: separation 8 alpha sin^2 theta
    for theta in [0.05f64, 0.1] {
        let alpha = 30.0;
        track(
            8.0 * alpha * theta.sin().powi(2) / (2.0 * 2.0f64.sqrt()),
            2.0f64.sqrt() * alpha * theta * theta,
        );
        // rotation plus displacement variant: separation 4 alpha sin^2 theta
        track(
            4.0 * alpha * theta.sin().powi(2) / (2.0 * 2.0f64.sqrt()),
            alpha * theta * theta / 2.0f64.sqrt(),
        );
    }
    Ok(result(
        "error-formula-consistency",
        worst_factor <= 2.0,
        worst_factor,
        format!(
            "quoted vs exact erfc arguments across protocols: worst factor {worst_factor:.3} \
             (tracked bound 2)"
        ),
    ))
}

/// Outcome probabilities of each detector sum to one, and the
/// probability-weighted posterior mixture reconstructs the pre-measurement
/// reduced density matrix.
fn heralding_ledger() -> Result<CheckResult> {
    let beta = 3.0;
    let mut s = HybridState::product(&[C64::new(0.5, 0.0); 4], C64::new(0.0, 0.0))?;
    for q in 0..2 {
        s = s.apply(&BusOp::cond_disp(q, C64::new(beta, 0.0)))?;
    }
    let rho_pre = s.reduced_qubit_density();
    let mut worst = 0.0f64;

    // photon-number detector: enumerate outcomes to a generous bound
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let bound = crate::fock::truncation_rule(2.0 * beta) + 8;
    let mut total_p = 0.0;
    let mut mix = DMatrix::<C64>::zeros(4, 4);
    for n in 0..bound {
        let p = photon_number_mass(&s, n);
        if p < 1e-300 {
            continue;
        }
        let rec = photon_number_measure(&s, &mut rng, Some(n))?;
        total_p += rec.probability;
        mix += rec.posterior.reduced_qubit_density().scale(rec.probability);
    }
    worst = worst.max((total_p - 1.0).abs());
    worst = worst.max((&mix - &rho_pre).norm());

    // bucket detector: two outcomes
    let mut total_b = 0.0;
    let mut mix_b = DMatrix::<C64>::zeros(4, 4);
    for click in [false, true] {
        let rec = crate::measure::bucket_measure(&s, &mut rng, Some(click), false)?;
        total_b += rec.probability;
        mix_b += rec.posterior.reduced_qubit_density().scale(rec.probability);
    }
    worst = worst.max((total_b - 1.0).abs());
    worst = worst.max((&mix_b - &rho_pre).norm());

    // homodyne: Simpson quadrature over the latent outcome density
    let pdf = crate::measure::homodyne_pdf(&s, 0.0, 0.0)?;
    let (lo, hi, steps) = (-4.0 * beta - 8.0, 4.0 * beta + 8.0, 6000usize);
    let h = (hi - lo) / steps as f64;
    let mut total_h = 0.0;
    let mut mix_h = DMatrix::<C64>::zeros(4, 4);
    for i in 0..=steps {
        let x = lo + i as f64 * h;
        let w = if i == 0 || i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        } * h
            / 3.0;
        let d = pdf.latent_density(x);
        if d < 1e-300 {
            total_h += w * d;
            continue;
        }
        let rec = crate::measure::homodyne_measure(&s, 0.0, 0.0, &mut rng, Some(x))?;
        total_h += w * d;
        mix_h += rec.posterior.reduced_qubit_density().scale(w * d);
    }
    worst = worst.max((total_h - 1.0).abs());
    worst = worst.max((&mix_h - &rho_pre).norm());

    Ok(result(
        "heralding-ledger",
        worst < 1e-6,
        worst,
        format!(
            "photon-number, bucket, homodyne detectors on the beta=3 parity state: \
             probability sums and posterior mixtures reconstruct the input within {worst:.3e} \
             (tol 1e-6)"
        ),
    ))
}

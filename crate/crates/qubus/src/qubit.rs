//! Density-matrix utilities for the qubit register: validity checks,
//! Wootters concurrence and pure-state fidelity.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{QubusError, Result};

type C64 = Complex64;

/// Cyclic Jacobi eigensolver for complex Hermitian matrices. Converges to
/// machine precision, which the tightest gate certifications (1e-12 on
/// concurrence) require; dimensions here are tiny.
pub fn hermitian_eigen(a: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let n = a.nrows();
    let mut m = (a + a.adjoint()).scale(0.5);
    let mut v = DMatrix::<C64>::identity(n, n);
    let scale: f64 = m.norm().max(1e-300);
    for _ in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= 1e-16 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                let b = apq.norm();
                if b <= 1e-18 * scale {
                    continue;
                }
                let u = apq / b;
                let zeta = (m[(q, q)].re - m[(p, p)].re) / (2.0 * b);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (zeta * zeta + 1.0).sqrt())
                } else {
                    -1.0 / (-zeta + (zeta * zeta + 1.0).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // columns p,q of the plane rotation: e_p -> c e_p - s conj(u) e_q,
                // e_q -> s u e_p + c e_q
                for i in 0..n {
                    let mip = m[(i, p)];
                    let miq = m[(i, q)];
                    m[(i, p)] = c * mip - s * u.conj() * miq;
                    m[(i, q)] = s * u * mip + c * miq;
                }
                for i in 0..n {
                    let mpi = m[(p, i)];
                    let mqi = m[(q, i)];
                    m[(p, i)] = c * mpi - s * u * mqi;
                    m[(q, i)] = s * u.conj() * mpi + c * mqi;
                }
                m[(p, q)] = C64::new(0.0, 0.0);
                m[(q, p)] = C64::new(0.0, 0.0);
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip - s * u.conj() * viq;
                    v[(i, q)] = s * u * vip + c * viq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| m[(i, i)].re).collect();
    (vals, v)
}

/// Hermiticity/trace/positivity check for a density matrix.
pub fn check_density(rho: &DMatrix<C64>) -> Result<()> {
    let n = rho.nrows();
    if rho.ncols() != n {
        return Err(QubusError::NonPhysicalDensity { reason: "not square".into() });
    }
    let herm_dev = (rho - rho.adjoint()).norm();
    if herm_dev > 1e-8 {
        return Err(QubusError::NonPhysicalDensity {
            reason: format!("not Hermitian (deviation {herm_dev:.3e})"),
        });
    }
    let trace: C64 = (0..n).map(|i| rho[(i, i)]).sum();
    if (trace.re - 1.0).abs() > 1e-8 || trace.im.abs() > 1e-10 {
        return Err(QubusError::NonPhysicalDensity {
            reason: format!("trace {:.6} != 1", trace.re),
        });
    }
    let min = min_eigenvalue(rho);
    if min < -1e-10 {
        return Err(QubusError::NonPhysicalDensity {
            reason: format!("negative eigenvalue {min:.3e}"),
        });
    }
    Ok(())
}

pub fn min_eigenvalue(rho: &DMatrix<C64>) -> f64 {
    let (vals, _) = hermitian_eigen(rho);
    vals.into_iter().fold(f64::INFINITY, f64::min)
}

/// Hermitian PSD square root (negative eigenvalues clamped to zero).
fn psd_sqrt(m: &DMatrix<C64>) -> DMatrix<C64> {
    let (vals, v) = hermitian_eigen(m);
    let mut d = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        d[(i, i)] = C64::new(vals[i].max(0.0).sqrt(), 0.0);
    }
    &v * d * v.adjoint()
}

/// Wootters concurrence of a two-qubit density matrix.
pub fn concurrence(rho: &DMatrix<C64>) -> Result<f64> {
    if rho.nrows() != 4 || rho.ncols() != 4 {
        return Err(QubusError::DimensionMismatch { expected: 4, got: rho.nrows() });
    }
    check_density(rho)?;

    // sigma_y (x) sigma_y in the computational basis
    let mut yy = DMatrix::zeros(4, 4);
    yy[(0, 3)] = C64::new(-1.0, 0.0);
    yy[(1, 2)] = C64::new(1.0, 0.0);
    yy[(2, 1)] = C64::new(1.0, 0.0);
    yy[(3, 0)] = C64::new(-1.0, 0.0);

    // A rank-one rho loses ~1e-8 to spurious sqrt eigenvalues in the general
    // path, so pure states take the spin-flip overlap |<psi*| yy |psi>|
    // instead; the crossover error is bounded by the residual mixedness.
    let (rho_vals, rho_vecs) = hermitian_eigen(rho);
    let (top, _) = rho_vals
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
    if rho_vals[top] >= 1.0 - 1e-12 {
        let psi = rho_vecs.column(top);
        let mut overlap = C64::new(0.0, 0.0);
        for i in 0..4 {
            for j in 0..4 {
                overlap += psi[i].conj() * yy[(i, j)] * psi[j].conj();
            }
        }
        return Ok(overlap.norm());
    }

    let rho_conj = rho.map(|z| z.conj());
    let rho_tilde = &yy * rho_conj * &yy;
    let sqrt_rho = psd_sqrt(rho);
    let m = &sqrt_rho * rho_tilde * &sqrt_rho;
    let herm = (&m + m.adjoint()).scale(0.5);
    let (vals, _) = hermitian_eigen(&herm);
    let mut lambdas: Vec<f64> = vals.into_iter().map(|l| l.max(0.0).sqrt()).collect();
    lambdas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok((lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3]).max(0.0))
}

/// `<target| rho |target>` for a pure target state.
pub fn fidelity_to_pure(rho: &DMatrix<C64>, target: &[C64]) -> Result<f64> {
    if target.len() != rho.nrows() {
        return Err(QubusError::DimensionMismatch { expected: rho.nrows(), got: target.len() });
    }
    let mut f = C64::new(0.0, 0.0);
    for (i, &ti) in target.iter().enumerate() {
        for (j, &tj) in target.iter().enumerate() {
            f += ti.conj() * rho[(i, j)] * tj;
        }
    }
    Ok(f.re)
}

/// Dense density matrix of a pure state vector.
pub fn pure_density(psi: &[C64]) -> DMatrix<C64> {
    let n = psi.len();
    DMatrix::from_fn(n, n, |i, j| psi[i] * psi[j].conj())
}

//! Perturbation check on the mean-product factor `Phi` of `Ψ' = alpha * Phi ∘ Ψ`.
//!
//! `Phi` is split as `(eps I + delta 11ᵀ) + Phi_delta` with `delta` the mean
//! entry. When `‖Phi_delta‖ / ‖Phi_c‖ <= 1 / cond(Phi_c)` the perturbation
//! cannot push an eigenvalue of `Phi_c` below zero, so `Phi` is PSD and, by
//! the Schur product theorem, so is `Ψ'`.

use nalgebra::DMatrix;

use super::CanonicalQP;
use crate::error::{Error, Result};
use crate::psd;

/// Relative slack on `lhs <= rhs`; the two sides coincide analytically when
/// `Phi` is a constant matrix.
const HOLDS_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub phi: DMatrix<f64>,
    pub epsilon_tilde: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub psi_prime_min_eig: f64,
    pub psi_prime_is_psd: bool,
}

/// `1e-6 * mean |Phi|`, or `1e-6` when `Phi` vanishes.
pub fn default_epsilon_tilde(qp: &CanonicalQP) -> f64 {
    let phi = phi_matrix(qp);
    let mean = phi.iter().map(|v| v.abs()).sum::<f64>() / phi.len().max(1) as f64;
    if mean > 0.0 {
        1e-6 * mean
    } else {
        1e-6
    }
}

fn phi_matrix(qp: &CanonicalQP) -> DMatrix<f64> {
    let d = &qp.gamma1 - &qp.gamma0;
    &d * d.transpose()
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    psd::sym_eigenvalues(m).iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn check_assumption(qp: &CanonicalQP, epsilon_tilde: f64) -> Result<AssumptionReport> {
    if !(epsilon_tilde.is_finite() && epsilon_tilde > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon_tilde must be > 0, got {epsilon_tilde}")));
    }
    let phi = phi_matrix(qp);
    let k = phi.nrows();
    let delta = phi.sum() / (k * k) as f64;
    let phi_c = DMatrix::from_fn(k, k, |i, j| if i == j { epsilon_tilde + delta } else { delta });
    let phi_delta = &phi - &phi_c;

    let ev = psd::sym_eigenvalues(&phi_c);
    let smallest = ev.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    let largest = ev.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if !(smallest > f64::EPSILON * largest) {
        return Err(Error::SingularPhiC(epsilon_tilde));
    }
    let lhs = spectral_norm(&phi_delta) / largest;
    let rhs = smallest / largest;
    let report = psd::psd_check(&qp.psi_prime, 1e-9)?;
    Ok(AssumptionReport {
        phi,
        epsilon_tilde,
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + HOLDS_RTOL),
        psi_prime_min_eig: report.min_eigenvalue,
        psi_prime_is_psd: report.is_psd,
    })
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::super::{build_canonical, ContinuousSuite, StepMoments};
    use super::*;

    fn constant_phi_suite(gamma: f64, h: usize, p: usize) -> ContinuousSuite {
        ContinuousSuite::time_invariant(
            1.0,
            StepMoments {
                mean: vec![gamma; p],
                variance: vec![0.1; p],
            },
            StepMoments {
                mean: vec![-gamma; p],
                variance: vec![0.0; p],
            },
            h,
        )
        .unwrap()
    }

    #[test]
    fn constant_phi_is_the_equality_case() {
        let (bm, _) = random_instance(1, 3, 2);
        let cs = constant_phi_suite(0.5, 3, 2);
        let qp = build_canonical(&bm, &cs, 1.0, 1.0).unwrap();
        let eps = 1e-3;
        let r = check_assumption(&qp, eps).unwrap();
        assert!(r.phi.iter().all(|v| (v - 1.0).abs() < 1e-15));
        // Phi_delta = -eps I, so both sides equal eps / (eps + 6).
        let expect = eps / (eps + 6.0);
        assert!((r.lhs - expect).abs() < 1e-12);
        assert!((r.rhs - expect).abs() < 1e-12);
        assert!(r.holds);
        assert!(r.psi_prime_is_psd);
    }

    #[test]
    fn holds_implies_psd_psi_prime() {
        for seed in 0..60 {
            let (bm, cs) = if seed % 2 == 0 {
                random_instance(seed, 2 + (seed % 3) as usize, 1 + (seed % 2) as usize)
            } else {
                let (bm, _) = random_instance(seed, 3, 1);
                (bm, constant_phi_suite(0.1 * seed as f64, 3, 1))
            };
            let qp = build_canonical(&bm, &cs, 1.0, 0.5).unwrap();
            let r = check_assumption(&qp, default_epsilon_tilde(&qp)).unwrap();
            if r.holds {
                let norm = spectral_norm(&qp.psi_prime);
                assert!(r.psi_prime_min_eig >= -1e-9 * norm.max(1.0));
            }
            assert!(r.psi_prime_is_psd);
        }
    }

    #[test]
    fn random_suites_usually_fail_the_assumption() {
        let (bm, cs) = random_instance(11, 4, 1);
        let qp = build_canonical(&bm, &cs, 1.0, 1.0).unwrap();
        let r = check_assumption(&qp, default_epsilon_tilde(&qp)).unwrap();
        assert!(!r.holds);
        assert!(r.lhs > r.rhs);
    }

    #[test]
    fn rejects_nonpositive_epsilon() {
        let (bm, cs) = random_instance(2, 2, 1);
        let qp = build_canonical(&bm, &cs, 1.0, 1.0).unwrap();
        assert!(check_assumption(&qp, 0.0).is_err());
        assert!(check_assumption(&qp, -1.0).is_err());
    }

    #[test]
    fn tiny_epsilon_against_large_phi_is_singular() {
        let (bm, _) = random_instance(1, 2, 1);
        let cs = constant_phi_suite(1e6, 2, 1);
        let qp = build_canonical(&bm, &cs, 1.0, 1.0).unwrap();
        assert!(matches!(check_assumption(&qp, 1e-300), Err(Error::SingularPhiC(_))));
    }
}

//! Box-constrained convex QP over one quality per step.
//!
//! Projected gradient with Barzilai-Borwein steps gets close to the optimal
//! face; projected Newton steps on the free variables then finish it.

use nalgebra::{DMatrix, DVector};

use super::CanonicalQP;
use crate::discrete::ChoiceSequence;
use crate::error::{Error, Result};
use crate::psd;

pub const QP_TOL: f64 = 1e-8;
const MAX_ROUNDS: usize = 200;
const GRADIENT_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub c: Vec<f64>,
    pub objective: f64,
    /// `‖c - clamp(c - ∇f)‖∞` at the returned point.
    pub kkt_residual: f64,
    pub iterations: usize,
}

struct BoxQp {
    q: DMatrix<f64>,
    v: DVector<f64>,
}

impl BoxQp {
    fn value(&self, c: &DVector<f64>) -> f64 {
        c.dot(&(&self.q * c)) + self.v.dot(c)
    }

    fn gradient(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.q * c * 2.0 + &self.v
    }

    fn kkt(c: &DVector<f64>, g: &DVector<f64>) -> f64 {
        c.iter()
            .zip(g.iter())
            .map(|(x, d)| (x - (x - d).clamp(0.0, 1.0)).abs())
            .fold(0.0, f64::max)
    }

    /// Best point on the projected path `clamp(c + tau * d)`, halving `tau`.
    fn projected_search(&self, c: &DVector<f64>, d: &DVector<f64>, tau0: f64) -> Option<DVector<f64>> {
        let f0 = self.value(c);
        let mut tau = tau0;
        for _ in 0..60 {
            let trial = (c + d * tau).map(|x| x.clamp(0.0, 1.0));
            if self.value(&trial) < f0 {
                return Some(trial);
            }
            tau *= 0.5;
        }
        None
    }

    fn gradient_phase(&self, c: &mut DVector<f64>, steps: usize, tol: f64) -> usize {
        let mut g = self.gradient(c);
        let mut step = {
            let norm = self.q.iter().map(|v| v.abs()).fold(0.0, f64::max) * self.q.nrows() as f64;
            if norm > 0.0 {
                0.5 / norm
            } else {
                1.0
            }
        };
        for it in 0..steps {
            if Self::kkt(c, &g) <= tol {
                return it;
            }
            let next = (c.clone() - &g * step).map(|x| x.clamp(0.0, 1.0));
            let d = &next - &*c;
            // Exact minimizer of the quadratic along d, capped at the projected point.
            let curv = d.dot(&(&self.q * &d));
            let slope = g.dot(&d);
            let t = if curv > 0.0 { (-slope / (2.0 * curv)).min(1.0) } else { 1.0 };
            if !(t > 0.0) || slope >= 0.0 {
                return it;
            }
            let s = &d * t;
            *c += &s;
            let g_new = self.gradient(c);
            let y = &g_new - &g;
            let sy = s.dot(&y);
            step = if sy > 0.0 { (s.dot(&s) / sy).clamp(1e-14, 1e14) } else { step * 2.0 };
            g = g_new;
        }
        steps
    }

    /// Newton step on variables not held at a bound by the gradient.
    fn newton_step(&self, c: &DVector<f64>) -> Option<DVector<f64>> {
        let g = self.gradient(c);
        let free: Vec<usize> = (0..c.len())
            .filter(|&i| !((c[i] <= 0.0 && g[i] >= 0.0) || (c[i] >= 1.0 && g[i] <= 0.0)))
            .collect();
        if free.is_empty() {
            return None;
        }
        let hff = DMatrix::from_fn(free.len(), free.len(), |a, b| 2.0 * self.q[(free[a], free[b])]);
        let gf = DVector::from_iterator(free.len(), free.iter().map(|&i| -g[i]));
        let scale = hff.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let step = hff.clone().svd(true, true).solve(&gf, 1e-12 * scale.max(f64::MIN_POSITIVE)).ok()?;
        let mut d = DVector::zeros(c.len());
        for (a, &i) in free.iter().enumerate() {
            d[i] = step[a];
        }
        // Along directions of zero curvature the pseudo-inverse leaves the
        // gradient untouched; add it so that those coordinates also move.
        let residual = &gf - &hff * &step;
        for (a, &i) in free.iter().enumerate() {
            d[i] += residual[a];
        }
        self.projected_search(c, &d, 1.0)
    }
}

/// Minimizes the canonical program over `[0, 1]^H`.
pub fn solve_qp(qp: &CanonicalQP, tol: f64) -> Result<QpSolution> {
    let report = psd::psd_check(&qp.psi_prime, 1e-9)?;
    if !report.is_psd {
        return Err(Error::NotConvex {
            min_eigenvalue: report.min_eigenvalue,
        });
    }
    let (q, v) = qp.reduced();
    let problem = BoxQp { q, v };
    let h = qp.horizon;
    let mut c = DVector::from_element(h, 0.5);
    let mut iterations = 0;
    let mut kkt = f64::INFINITY;
    for _ in 0..MAX_ROUNDS {
        iterations += problem.gradient_phase(&mut c, GRADIENT_STEPS, tol);
        kkt = BoxQp::kkt(&c, &problem.gradient(&c));
        if kkt <= tol {
            break;
        }
        while let Some(next) = problem.newton_step(&c) {
            iterations += 1;
            c = next;
            kkt = BoxQp::kkt(&c, &problem.gradient(&c));
            if kkt <= tol {
                break;
            }
        }
        if kkt <= tol {
            break;
        }
    }
    if kkt > tol {
        return Err(Error::ConvergenceFailure(format!("box QP stopped with KKT residual {kkt:e}")));
    }
    let c: Vec<f64> = c.iter().copied().collect();
    let objective = qp.evaluate(&qp.expand(&c))?;
    Ok(QpSolution {
        c,
        objective,
        kkt_residual: kkt,
        iterations,
    })
}

/// Thresholds qualities at 0.5 into a two-model schedule (ties go to 0).
pub fn round_to_discrete(c: &[f64]) -> ChoiceSequence {
    ChoiceSequence::new(c.iter().map(|&v| usize::from(v > 0.5)).collect())
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::super::{build_canonical, ContinuousSuite};
    use super::*;
    use crate::discrete::{encode, objective_value, relax_lower_bound, solve_exhaustive, Mode};
    use crate::perception::{ErrorModel, PerceptionSuite};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_example_interior_optimum() {
        let (bm, cs) = scalar_instance(0.5, 2.0, 0.0, 1.0);
        let qp = build_canonical(&bm, &cs, 1.0, 1.0).unwrap();
        let sol = solve_qp(&qp, QP_TOL).unwrap();
        assert!((sol.c[0] - 0.75).abs() < 1e-6);
        assert!(sol.kkt_residual <= QP_TOL);
        // f(0.75) = 2 * 0.25^2 + 0.75
        assert!((sol.objective - 0.875).abs() < 1e-10);
    }

    #[test]
    fn expensive_perception_clamps_to_zero() {
        // beta * upsilon = 3 >= 2 psi mu0^2 + psi v0 = 2.5
        let (bm, cs) = scalar_instance(0.5, 1.0, 1.0, 3.0);
        let qp = build_canonical(&bm, &cs, 1.0, 1.0).unwrap();
        assert_eq!(solve_qp(&qp, QP_TOL).unwrap().c, vec![0.0]);
    }

    #[test]
    fn boundary_cases() {
        let (bm, cs) = random_instance(3, 5, 2);
        let qp = build_canonical(&bm, &cs, 0.0, 1.0).unwrap();
        assert!(solve_qp(&qp, QP_TOL).unwrap().c.iter().all(|v| *v == 0.0));

        let (bm, _) = random_instance(4, 4, 1);
        let worst = super::super::StepMoments {
            mean: vec![1.0],
            variance: vec![0.5],
        };
        let best = super::super::StepMoments {
            mean: vec![0.0],
            variance: vec![0.0],
        };
        let cs = ContinuousSuite::time_invariant(1.0, worst, best, 4).unwrap();
        let qp = build_canonical(&bm, &cs, 1.0, 0.0).unwrap();
        let sol = solve_qp(&qp, QP_TOL).unwrap();
        assert!(sol.c.iter().all(|v| (v - 1.0).abs() < 1e-9), "{:?}", sol.c);
    }

    #[test]
    fn kkt_and_optimality_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for seed in 0..40 {
            let (bm, cs) = random_instance(seed, 2 + (seed % 6) as usize, 1 + (seed % 3) as usize);
            let qp = build_canonical(&bm, &cs, rng.random_range(0.1..2.0), rng.random_range(0.0..2.0)).unwrap();
            let sol = solve_qp(&qp, QP_TOL).unwrap();
            assert!(sol.kkt_residual <= QP_TOL);
            assert!(sol.c.iter().all(|v| (0.0..=1.0).contains(v)));
            for _ in 0..50 {
                let c: Vec<f64> = (0..qp.horizon).map(|_| rng.random_range(0.0..=1.0)).collect();
                let f = qp.evaluate(&qp.expand(&c)).unwrap();
                assert!(sol.objective <= f + 1e-9 * (1.0 + f.abs()));
            }
        }
    }

    fn two_model_suite(rng: &mut ChaCha8Rng, h: usize) -> PerceptionSuite {
        let mut model = |scale: f64| ErrorModel::Normal {
            mean: vec![scale * rng.random_range(-1.0..1.0)],
            variance: vec![scale * rng.random_range(0.0..1.0)],
        };
        let models = vec![(0..h).map(|_| model(2.0)).collect(), (0..h).map(|_| model(0.3)).collect()];
        PerceptionSuite::new(rng.random_range(0.05..1.0), models).unwrap()
    }

    #[test]
    fn lower_bounds_the_two_model_discrete_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for seed in 0..100 {
            let h = 2 + (seed % 6) as usize;
            let (bm, _) = random_instance(seed, h, 1);
            let suite = two_model_suite(&mut rng, h);
            let (alpha, beta) = (rng.random_range(0.1..2.0), rng.random_range(0.0..2.0));
            let dq = encode(&bm, &suite, alpha, beta, Mode::Expected, None).unwrap();
            let exact = solve_exhaustive(&dq).unwrap();
            let cs = ContinuousSuite::from_discrete(&suite).unwrap();
            let qp = build_canonical(&bm, &cs, alpha, beta).unwrap();
            let sol = solve_qp(&qp, QP_TOL).unwrap();
            let tol = 1e-9 * (1.0 + exact.objective.abs());
            assert!(sol.objective <= exact.objective + tol);
            // Rounded schedule is feasible, so it sits above the optimum.
            let rounded = objective_value(&dq, &round_to_discrete(&sol.c)).unwrap();
            assert!(rounded + tol >= exact.objective);
            assert!(rounded + tol >= sol.objective);
            let relaxed = relax_lower_bound(&dq, &vec![None; h]).unwrap();
            assert!(relaxed <= exact.objective + tol);
        }
    }

    #[test]
    fn endpoints_match_discrete_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (bm, _) = random_instance(2, 4, 1);
        let suite = two_model_suite(&mut rng, 4);
        let dq = encode(&bm, &suite, 0.7, 1.3, Mode::Expected, None).unwrap();
        let cs = ContinuousSuite::from_discrete(&suite).unwrap();
        let qp = build_canonical(&bm, &cs, 0.7, 1.3).unwrap();
        let seq = ChoiceSequence::new(vec![0, 1, 1, 0]);
        let c = [0.0, 1.0, 1.0, 0.0];
        let a = objective_value(&dq, &seq).unwrap();
        let b = qp.evaluate(&qp.expand(&c)).unwrap();
        assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(round_to_discrete(&[0.75]).as_slice(), &[1]);
        assert_eq!(round_to_discrete(&[0.5]).as_slice(), &[0]);
        assert_eq!(round_to_discrete(&[0.0, 0.51, 1.0]).as_slice(), &[0, 1, 1]);
    }

    #[test]
    fn rejects_indefinite_quadratic() {
        let (bm, cs) = scalar_instance(0.5, 2.0, 0.0, 1.0);
        let mut qp = build_canonical(&bm, &cs, 1.0, 1.0).unwrap();
        qp.psi_prime[(0, 0)] = -1.0;
        assert!(matches!(solve_qp(&qp, QP_TOL), Err(Error::NotConvex { .. })));
    }
}

//! Self-checks of the library's core identities on random instances.
//!
//! Each check returns a pass/fail line. `Quick` uses small sample counts and
//! finishes in seconds; `Full` uses the sizes of the acceptance suite.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::batch_lqr::{build_batch, cost_gap, simulated_gap, BatchMatrices, CostSpec, Dynamics};
use crate::continuous::{build_canonical, check_assumption, default_epsilon_tilde, export_sdp, solve_qp,
    ContinuousSuite, SdpProblem, StepMoments};
use crate::discrete::{encode, objective_value, solve_bnb, solve_exhaustive, BnbOptions, BooleanQp, ChoiceSequence, Mode, SolverKind};
use crate::evaluation::{grid, landing_scenario, monotonicity_violations, pareto_sweep};
use crate::perception::{ErrorModel, PerceptionSuite};
use crate::psd::{psd_check, symmetrize};
use crate::scenario::{CostFile, DiscreteSuiteSpec, DynamicsSpec, Matrix, ModelSpec, Override, Scenario, SuiteSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

/// Deliberate corruption used to confirm that checks can fail.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FaultInjection {
    /// Added to `Psi[0][1]` only, breaking symmetry.
    pub psi_asymmetry: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

/// Random plant and cost with `n, m, p` in `1..=4`.
pub fn random_system(rng: &mut ChaCha8Rng) -> (Dynamics, CostSpec) {
    let (n, m, p) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
    let a = random_matrix(rng, n, n, 0.7);
    let dynamics = Dynamics::new(a, random_matrix(rng, n, m, 1.0), random_matrix(rng, n, p, 1.0)).expect("shapes");
    let q = random_matrix(rng, n, n, 1.0);
    let r = random_matrix(rng, m, m, 1.0);
    let qf = random_matrix(rng, n, n, 1.0);
    let cost = CostSpec::new(
        symmetrize(&(&q * q.transpose())),
        symmetrize(&(&r * r.transpose() + DMatrix::identity(m, m) * 0.3)),
        symmetrize(&(&qf * qf.transpose())),
    )
    .expect("valid cost");
    (dynamics, cost)
}

/// Normal models with spreads shrinking in the model index.
pub fn random_suite(rng: &mut ChaCha8Rng, models: usize, horizon: usize, p: usize) -> PerceptionSuite {
    let rows = (0..models)
        .map(|w| {
            let scale = 1.0 / (1.0 + w as f64);
            (0..horizon)
                .map(|_| ErrorModel::Normal {
                    mean: (0..p).map(|_| scale * rng.random_range(-1.0..1.0)).collect(),
                    variance: (0..p).map(|_| scale * rng.random_range(0.0..1.0)).collect(),
                })
                .collect()
        })
        .collect();
    PerceptionSuite::new(rng.random_range(0.05..0.5), rows).expect("rectangular")
}

fn outcome(name: &'static str, failures: usize, total: usize, extra: String) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: failures == 0,
        detail: format!("{}/{} ok{}", total - failures, total, extra),
    }
}

fn cost_gap_identity(rng: &mut ChaCha8Rng, instances: usize, samples: usize) -> CheckOutcome {
    let mut failures = 0;
    let mut worst = 0.0_f64;
    for _ in 0..instances {
        let (d, c) = random_system(rng);
        let h = rng.random_range(1..=10);
        let bm = build_batch(&d, &c, h).expect("batch");
        let k = bm.perception_len();
        let mut ok = true;
        for _ in 0..samples {
            let s = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
            let s_hat = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
            let x0 = DVector::from_fn(bm.n, |_, _| rng.random_range(-1.0..1.0));
            let analytic = cost_gap(&bm, &s_hat, &s).expect("gap");
            let simulated = simulated_gap(&d, &c, &bm, &s_hat, &s, &x0).expect("gap");
            let err = (analytic - simulated).abs() / (1.0 + analytic.abs());
            worst = worst.max(err);
            ok &= err <= 1e-8;
        }
        failures += usize::from(!ok);
    }
    outcome("cost_gap_identity", failures, instances, format!(", worst relative error {worst:.2e}"))
}

fn x0_independence(rng: &mut ChaCha8Rng, instances: usize) -> CheckOutcome {
    let mut failures = 0;
    for _ in 0..instances {
        let (d, c) = random_system(rng);
        let bm = build_batch(&d, &c, rng.random_range(1..=10)).expect("batch");
        let k = bm.perception_len();
        let s = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
        let s_hat = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
        let gaps: Vec<f64> = (0..5)
            .map(|_| {
                let x0 = DVector::from_fn(bm.n, |_, _| rng.random_range(-3.0..3.0));
                simulated_gap(&d, &c, &bm, &s_hat, &s, &x0).expect("gap")
            })
            .collect();
        let lo = gaps.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        failures += usize::from(hi - lo > 1e-8 * (1.0 + hi.abs()));
    }
    outcome("x0_independence", failures, instances, String::new())
}

fn psi_psd(rng: &mut ChaCha8Rng, instances: usize, scenario: Option<&BatchMatrices>, fault: &FaultInjection) -> CheckOutcome {
    let mut failures = 0;
    let mut total = 0;
    let mut check = |mut psi: DMatrix<f64>| {
        if let Some(delta) = fault.psi_asymmetry {
            if psi.ncols() > 1 {
                psi[(0, 1)] += delta;
            } else {
                psi[(0, 0)] = -delta.abs();
            }
        }
        total += 1;
        let ok = matches!(psd_check(&psi, 1e-10), Ok(r) if r.is_psd);
        failures += usize::from(!ok);
    };
    for _ in 0..instances {
        let (d, c) = random_system(rng);
        check(build_batch(&d, &c, rng.random_range(1..=10)).expect("batch").psi);
    }
    if let Some(bm) = scenario {
        check(bm.psi.clone());
    }
    outcome("psi_psd", failures, total, String::new())
}

fn random_qp(rng: &mut ChaCha8Rng, mode: Mode, max_space: f64) -> (BooleanQp, BatchMatrices, PerceptionSuite) {
    loop {
        let (d, c) = random_system(rng);
        let h = rng.random_range(1..=7);
        let w = rng.random_range(2..=4);
        if (w as f64).powi(h as i32) > max_space {
            continue;
        }
        let bm = build_batch(&d, &c, h).expect("batch");
        let suite = random_suite(rng, w, h, bm.p);
        let realized = suite.sample_realized(rng.random()).expect("sample");
        let (alpha, beta) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
        let qp = encode(&bm, &suite, alpha, beta, mode, Some(&realized)).expect("encode");
        return (qp, bm, suite);
    }
}

fn oracle_equivalence(rng: &mut ChaCha8Rng, instances: usize) -> CheckOutcome {
    let mut failures = 0;
    for i in 0..instances {
        let mode = if i % 2 == 0 { Mode::Expected } else { Mode::Exact };
        let (qp, _, _) = random_qp(rng, mode, 1e4);
        let ex = solve_exhaustive(&qp).expect("exhaustive");
        let ok = match solve_bnb(&qp, &BnbOptions::default()) {
            Ok(bb) => (bb.objective - ex.objective).abs() <= 1e-9 * (1.0 + ex.objective.abs()) && bb.sequence == ex.sequence,
            Err(_) => false,
        };
        failures += usize::from(!ok);
    }
    outcome("oracle_equivalence", failures, instances, String::new())
}

fn decomposition(rng: &mut ChaCha8Rng, pairs: usize, draws: usize) -> CheckOutcome {
    let mut inside = 0;
    for _ in 0..pairs {
        let (qp, bm, suite) = random_qp(rng, Mode::Expected, 1e4);
        let seq = ChoiceSequence::new((0..suite.horizon()).map(|_| rng.random_range(0..suite.models())).collect());
        let expected = objective_value(&qp, &seq).expect("objective");
        let jper = suite.perception_cost(seq.as_slice());
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..draws {
            let realized = suite.sample_realized(rng.random()).expect("sample");
            let e = DVector::from_vec(realized.stacked(seq.as_slice()));
            let v = qp.alpha * e.dot(&(&bm.psi * &e)) + qp.beta * jper;
            sum += v;
            sum2 += v * v;
        }
        let n = draws as f64;
        let mean = sum / n;
        let se = ((sum2 / n - mean * mean).max(0.0) * n / (n - 1.0) / n).sqrt();
        inside += usize::from((mean - expected).abs() <= 3.0 * se + 1e-12 * (1.0 + expected.abs()));
    }
    let needed = pairs - pairs / 20;
    CheckOutcome {
        name: "expectation_decomposition",
        passed: inside >= needed,
        detail: format!("{inside}/{pairs} within 3 standard errors (need {needed})"),
    }
}

fn random_continuous(rng: &mut ChaCha8Rng) -> (BatchMatrices, ContinuousSuite) {
    let (d, c) = random_system(rng);
    let h = rng.random_range(1..=6);
    let bm = build_batch(&d, &c, h).expect("batch");
    let p = bm.p;
    let mut steps = |scale: f64| -> Vec<StepMoments> {
        (0..h)
            .map(|_| StepMoments {
                mean: (0..p).map(|_| scale * rng.random_range(-1.0..1.0)).collect(),
                variance: (0..p).map(|_| scale * rng.random_range(0.0..1.0)).collect(),
            })
            .collect()
    };
    let worst = steps(1.0);
    let best = steps(0.2);
    let cs = ContinuousSuite::new(rng.random_range(0.05..1.0), worst, best).expect("suite");
    (bm, cs)
}

fn convexity_chain(rng: &mut ChaCha8Rng, instances: usize) -> CheckOutcome {
    let mut failures = 0;
    let mut held = 0;
    for _ in 0..instances {
        let (bm, cs) = random_continuous(rng);
        let qp = build_canonical(&bm, &cs, rng.random_range(0.1..2.0), rng.random_range(0.0..2.0)).expect("canonical");
        let psi_ok = matches!(psd_check(&bm.psi, 1e-10), Ok(r) if r.is_psd);
        let ok = match check_assumption(&qp, default_epsilon_tilde(&qp)) {
            Ok(r) => {
                held += usize::from(r.holds);
                let norm = psd_check(&qp.psi_prime, 0.0).map(|r| r.norm).unwrap_or(f64::INFINITY);
                !r.holds || r.psi_prime_min_eig >= -1e-9 * norm
            }
            Err(_) => false,
        };
        failures += usize::from(!(ok && psi_ok));
    }
    outcome("convexity_chain", failures, instances, format!(", assumption held on {held}"))
}

fn continuous_qp(rng: &mut ChaCha8Rng, instances: usize, tol: f64) -> CheckOutcome {
    let mut failures = 0;
    for _ in 0..instances {
        let (bm, cs) = random_continuous(rng);
        let qp = build_canonical(&bm, &cs, rng.random_range(0.1..2.0), rng.random_range(0.0..2.0)).expect("canonical");
        let ok = match (solve_qp(&qp, tol), export_sdp(&qp)) {
            (Ok(sol), Ok(sdp)) => {
                let x = SdpProblem::point_for(&qp, &sol.c, sol.objective);
                sol.kkt_residual <= tol && sdp.is_feasible(&x, 1e-8).unwrap_or(false)
            }
            _ => false,
        };
        failures += usize::from(!ok);
    }
    outcome("continuous_kkt_and_sdp", failures, instances, String::new())
}

fn pareto(rng: &mut ChaCha8Rng, instances: usize) -> CheckOutcome {
    let mut failures = 0;
    let levels = [0.1, 0.3, 0.6, 1.0, 2.0];
    for _ in 0..instances {
        let (d, c) = random_system(rng);
        let h = rng.random_range(2..=5);
        let bm = build_batch(&d, &c, h).expect("batch");
        let suite = random_suite(rng, 3, h, bm.p);
        let scenario = landing_scenario();
        let scenario = Scenario {
            dynamics: DynamicsSpec {
                a: Matrix::from_dmatrix(d.a()),
                b: Matrix::from_dmatrix(d.b()),
                c: Matrix::from_dmatrix(d.c()),
            },
            cost: CostFile {
                q: Matrix::from_dmatrix(c.q()),
                r: Matrix::from_dmatrix(c.r()),
                qf: Matrix::from_dmatrix(c.qf()),
            },
            horizon: h,
            suite: SuiteSpec::Discrete(DiscreteSuiteSpec {
                models: (0..3)
                    .map(|w| {
                        let mut spec = ModelSpec::from(suite.error_model(w, 0).expect("model").clone());
                        for t in 1..h {
                            spec.overrides.push(Override {
                                step: t,
                                model: suite.error_model(w, t).expect("model").clone(),
                            });
                        }
                        spec
                    })
                    .collect(),
            }),
            upsilon: suite.upsilon(),
            ..scenario
        };
        let ok = match pareto_sweep(&scenario, &grid(&levels, &levels), SolverKind::Exhaustive) {
            Ok(points) => monotonicity_violations(&points, 1e-9).is_empty(),
            Err(_) => false,
        };
        failures += usize::from(!ok);
    }
    outcome("pareto_monotonicity", failures, instances, String::new())
}

/// Runs every check. With a scenario, its `Psi` joins the PSD check.
pub fn run_checks(level: Level, scenario: Option<&Scenario>, fault: &FaultInjection) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let full = level == Level::Full;
    let pick = |quick: usize, full_n: usize| if full { full_n } else { quick };
    let scenario_bm = scenario.and_then(|s| s.batch().ok());
    vec![
        cost_gap_identity(&mut rng, pick(40, 200), pick(3, 10)),
        x0_independence(&mut rng, pick(40, 200)),
        psi_psd(&mut rng, pick(40, 200), scenario_bm.as_ref(), fault),
        oracle_equivalence(&mut rng, pick(40, 200)),
        decomposition(&mut rng, 20, pick(1000, 10_000)),
        convexity_chain(&mut rng, pick(30, 100)),
        continuous_qp(&mut rng, pick(30, 100), scenario.map_or(1e-8, |s| s.solver.qp_tol)),
        pareto(&mut rng, pick(2, 10)),
    ]
}

//! Optimal schedules across a grid of `(alpha, beta)` weights.

use serde::Serialize;

use crate::discrete::{encode, solve, BnbOptions, ChoiceSequence, Mode, SolverKind};
use crate::error::{Error, Result};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoPoint {
    pub alpha: f64,
    pub beta: f64,
    pub sequence: ChoiceSequence,
    /// Expected control term `E[gap]` of the schedule, without `alpha`.
    pub control_term: f64,
    pub perception_cost: f64,
}

/// Cartesian grid, alpha-major.
pub fn grid(alphas: &[f64], betas: &[f64]) -> Vec<(f64, f64)> {
    alphas.iter().flat_map(|&a| betas.iter().map(move |&b| (a, b))).collect()
}

/// Expected-mode optimum for every weight pair.
pub fn pareto_sweep(scenario: &Scenario, weights: &[(f64, f64)], kind: SolverKind) -> Result<Vec<ParetoPoint>> {
    if weights.is_empty() {
        return Err(Error::InvalidArgument("weight grid is empty".into()));
    }
    if let Some((a, b)) = weights
        .iter()
        .find(|(a, b)| !(a.is_finite() && b.is_finite() && *a >= 0.0 && *b >= 0.0) || a + b == 0.0)
    {
        return Err(Error::InvalidArgument(format!("invalid weights ({a}, {b})")));
    }
    let bm = scenario.batch()?;
    let suite = scenario.perception_suite()?;
    let opts = BnbOptions {
        gap_tol: scenario.solver.gap_tol,
        node_limit: scenario.solver.node_limit,
        ..BnbOptions::default()
    };
    weights
        .iter()
        .map(|&(alpha, beta)| {
            let qp = encode(&bm, &suite, alpha, beta, Mode::Expected, None)?;
            let r = solve(&qp, kind, &opts)?;
            Ok(ParetoPoint {
                alpha,
                beta,
                control_term: qp.control_term(&r.sequence)?,
                perception_cost: suite.perception_cost(r.sequence.as_slice()),
                sequence: r.sequence,
            })
        })
        .collect()
}

/// Lists every grid line along which perception cost increases with `beta`
/// or the control term increases with `alpha`, beyond a relative `tol`.
pub fn monotonicity_violations(points: &[ParetoPoint], tol: f64) -> Vec<String> {
    let mut out = Vec::new();
    let worse = |prev: f64, next: f64| next > prev + tol * (1.0 + prev.abs());
    let mut alphas: Vec<f64> = points.iter().map(|p| p.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    for a in alphas {
        let mut line: Vec<&ParetoPoint> = points.iter().filter(|p| p.alpha == a).collect();
        line.sort_by(|x, y| x.beta.total_cmp(&y.beta));
        for w in line.windows(2) {
            if worse(w[0].perception_cost, w[1].perception_cost) {
                out.push(format!(
                    "alpha = {a}: perception cost rises from {} to {} as beta goes {} -> {}",
                    w[0].perception_cost, w[1].perception_cost, w[0].beta, w[1].beta
                ));
            }
        }
    }
    let mut betas: Vec<f64> = points.iter().map(|p| p.beta).collect();
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    for b in betas {
        let mut line: Vec<&ParetoPoint> = points.iter().filter(|p| p.beta == b).collect();
        line.sort_by(|x, y| x.alpha.total_cmp(&y.alpha));
        for w in line.windows(2) {
            if worse(w[0].control_term, w[1].control_term) {
                out.push(format!(
                    "beta = {b}: control term rises from {} to {} as alpha goes {} -> {}",
                    w[0].control_term, w[1].control_term, w[0].alpha, w[1].alpha
                ));
            }
        }
    }
    out
}

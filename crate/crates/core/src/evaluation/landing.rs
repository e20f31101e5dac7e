//! Synthetic drone-landing benchmark.
//!
//! Longitudinal model sampled at 0.1 s with state (altitude, climb rate,
//! pitch, pitch rate) and elevator input. The perception input is an
//! altitude offset read from a camera, entering the altitude channel.
//! Eight detectors trade accuracy for compute: model `w` has a bias and a
//! spread that both shrink with `w`.

use crate::perception::ErrorModel;
use crate::scenario::{
    CostFile, DiscreteSuiteSpec, DynamicsSpec, Matrix, ModelSpec, Scenario, Seeds, SolverOptions, SuiteSpec, Weights,
    SCENARIO_VERSION,
};

const DT: f64 = 0.1;
pub(crate) const HORIZON: usize = 150;
const MODELS: usize = 8;
const UPSILON: f64 = 0.25;
/// Variance of the cheapest model; each step up the ladder scales it by `RATIO`.
const VARIANCE: f64 = 4.0;
const RATIO: f64 = 0.55;
/// Bias as a fraction of the standard deviation.
const BIAS: f64 = 0.02;

fn m(rows: &[&[f64]]) -> Matrix {
    Matrix::try_from(rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).expect("rectangular")
}

pub fn landing_scenario() -> Scenario {
    let a = m(&[
        &[1.0, DT, 0.0, 0.0],
        &[0.0, 1.0 - 0.5 * DT, 2.0 * DT, 0.0],
        &[0.0, 0.0, 1.0, DT],
        &[0.0, 0.0, -2.0 * DT, 1.0 - 1.5 * DT],
    ]);
    let b = m(&[&[0.0], &[0.0], &[0.0], &[3.0 * DT]]);
    let c = m(&[&[DT], &[0.0], &[0.0], &[0.0]]);
    let q = [1.0, 0.1, 0.1, 0.01];
    let diag = |scale: f64| {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| if i == j { scale * q[i] } else { 0.0 }).collect())
            .collect();
        Matrix::try_from(rows).expect("square")
    };
    let models = (0..MODELS)
        .map(|w| {
            let variance = VARIANCE * RATIO.powi(w as i32);
            ModelSpec::from(ErrorModel::Normal {
                mean: vec![BIAS * variance.sqrt()],
                variance: vec![variance],
            })
        })
        .collect();
    Scenario {
        version: SCENARIO_VERSION,
        dynamics: DynamicsSpec { a, b, c },
        cost: CostFile {
            q: diag(1.0),
            r: m(&[&[0.1]]),
            qf: diag(10.0),
        },
        horizon: HORIZON,
        suite: SuiteSpec::Discrete(DiscreteSuiteSpec { models }),
        weights: Weights { alpha: 0.6, beta: 0.4 },
        upsilon: UPSILON,
        seeds: Seeds {
            realized: 2024,
            evaluation: 7,
        },
        solver: SolverOptions {
            oracle_node_limit: 2,
            ..SolverOptions::default()
        },
    }
}

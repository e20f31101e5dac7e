//! Scenario files: one JSON document describing the plant, cost, perception
//! suite, weights, seeds and solver options of an experiment.
//!
//! Every key except `solver` is required. A discrete suite lists models in
//! increasing quality; each entry is an error model with optional per-step
//! overrides. A continuous suite gives worst/best moments either once
//! (applied to every step) or once per step.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::batch_lqr::{build_batch, BatchMatrices, CostSpec, Dynamics};
use crate::continuous::{ContinuousSuite, StepMoments};
use crate::error::{Error, Result};
use crate::perception::{validate_suite, ErrorModel, PerceptionSuite};

pub const SCENARIO_VERSION: u32 = 1;

/// Dense matrix written as a list of equal-length rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix(Vec<Vec<f64>>);

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = String;

    fn try_from(rows: Vec<Vec<f64>>) -> std::result::Result<Self, String> {
        let width = rows.first().map_or(0, Vec::len);
        if width == 0 {
            return Err("matrix must have at least one row and one column".into());
        }
        if let Some(i) = rows.iter().position(|r| r.len() != width) {
            return Err(format!("matrix row {i} has {} entries, expected {width}", rows[i].len()));
        }
        Ok(Matrix(rows))
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.0
    }
}

impl Matrix {
    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        let (r, c) = (self.0.len(), self.0[0].len());
        DMatrix::from_fn(r, c, |i, j| self.0[i][j])
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        Matrix((0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostFile {
    pub q: Matrix,
    pub r: Matrix,
    pub qf: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Override {
    pub step: usize,
    pub model: ErrorModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub model: ErrorModel,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<Override>,
}

impl From<ErrorModel> for ModelSpec {
    fn from(model: ErrorModel) -> Self {
        ModelSpec {
            model,
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteSuiteSpec {
    pub models: Vec<ModelSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousSuiteSpec {
    pub worst: Vec<StepMoments>,
    pub best: Vec<StepMoments>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SuiteSpec {
    Discrete(DiscreteSuiteSpec),
    Continuous(ContinuousSuiteSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Realized errors used by exact-mode planning.
    pub realized: u64,
    /// Master seed of Monte-Carlo evaluation.
    pub evaluation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub gap_tol: f64,
    pub node_limit: usize,
    /// Node limit of the per-trial clairvoyant solve during evaluation.
    pub oracle_node_limit: usize,
    pub qp_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gap_tol: 0.0,
            node_limit: 200_000,
            oracle_node_limit: 40,
            qp_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(skip_serializing_if = "Option::is_none")]
    version: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dynamics: Option<DynamicsSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cost: Option<CostFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    suite: Option<DiscreteSuiteSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    continuous_suite: Option<ContinuousSuiteSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Weights>,
    #[serde(skip_serializing_if = "Option::is_none")]
    upsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seeds: Option<Seeds>,
    #[serde(skip_serializing_if = "Option::is_none")]
    solver: Option<SolverOptions>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub version: u32,
    pub dynamics: DynamicsSpec,
    pub cost: CostFile,
    pub horizon: usize,
    pub suite: SuiteSpec,
    pub weights: Weights,
    pub upsilon: f64,
    pub seeds: Seeds,
    pub solver: SolverOptions,
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawScenario = serde_json::from_str(text).map_err(parse_error)?;
        let mut missing = Vec::new();
        macro_rules! need {
            ($field:ident) => {
                match raw.$field {
                    Some(v) => Some(v),
                    None => {
                        missing.push(format!("missing key `{}`", stringify!($field)));
                        None
                    }
                }
            };
        }
        let version = need!(version);
        let dynamics = need!(dynamics);
        let cost = need!(cost);
        let horizon = need!(horizon);
        let weights = need!(weights);
        let upsilon = need!(upsilon);
        let seeds = need!(seeds);
        let suite = match (raw.suite, raw.continuous_suite) {
            (Some(s), None) => Some(SuiteSpec::Discrete(s)),
            (None, Some(c)) => Some(SuiteSpec::Continuous(c)),
            (None, None) => {
                missing.push("missing key `suite` (or `continuous_suite`)".into());
                None
            }
            (Some(_), Some(_)) => {
                missing.push("only one of `suite` and `continuous_suite` may be given".into());
                None
            }
        };
        if !missing.is_empty() {
            return Err(Error::Validation(missing));
        }
        let scenario = Scenario {
            version: version.unwrap(),
            dynamics: dynamics.unwrap(),
            cost: cost.unwrap(),
            horizon: horizon.unwrap(),
            suite: suite.unwrap(),
            weights: weights.unwrap(),
            upsilon: upsilon.unwrap(),
            seeds: seeds.unwrap(),
            solver: raw.solver.unwrap_or_default(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let (suite, continuous_suite) = match &self.suite {
            SuiteSpec::Discrete(s) => (Some(s.clone()), None),
            SuiteSpec::Continuous(c) => (None, Some(c.clone())),
        };
        let raw = RawScenario {
            version: Some(self.version),
            dynamics: Some(self.dynamics.clone()),
            cost: Some(self.cost.clone()),
            horizon: Some(self.horizon),
            suite,
            continuous_suite,
            weights: Some(self.weights),
            upsilon: Some(self.upsilon),
            seeds: Some(self.seeds),
            solver: Some(self.solver),
        };
        let mut text = serde_json::to_string_pretty(&raw).expect("scenario serializes");
        text.push('\n');
        text
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// Collects every violated invariant.
    pub fn validate(&self) -> Result<()> {
        let mut out = Vec::new();
        if self.version != SCENARIO_VERSION {
            out.push(format!("version: unsupported value {}, expected {SCENARIO_VERSION}", self.version));
        }
        if self.horizon == 0 {
            out.push("horizon: must be at least 1".into());
        }
        let Weights { alpha, beta } = self.weights;
        if !(alpha.is_finite() && beta.is_finite() && alpha >= 0.0 && beta >= 0.0) || alpha + beta == 0.0 {
            out.push(format!("weights: alpha, beta must be >= 0 and not both zero (got {alpha}, {beta})"));
        }
        if !(self.upsilon.is_finite() && self.upsilon > 0.0) {
            out.push(format!("upsilon: must be finite and > 0, got {}", self.upsilon));
        }
        let s = &self.solver;
        if !(s.gap_tol.is_finite() && s.gap_tol >= 0.0) || s.node_limit == 0 || s.oracle_node_limit == 0 {
            out.push("solver: gap_tol must be >= 0 and node limits positive".into());
        }
        if !(s.qp_tol.is_finite() && s.qp_tol > 0.0) {
            out.push("solver: qp_tol must be > 0".into());
        }
        let dynamics = self.dynamics().map_err(|e| out.push(format!("dynamics: {e}"))).ok();
        if let Err(e) = self.cost_spec() {
            out.push(format!("cost: {e}"));
        }
        if let (Some(d), Ok(c)) = (&dynamics, self.cost_spec()) {
            if c.q().nrows() != d.state_dim() || c.r().nrows() != d.input_dim() {
                out.push(format!(
                    "cost: Q is {0}x{0} and R is {1}x{1}, dynamics need n = {2}, m = {3}",
                    c.q().nrows(),
                    c.r().nrows(),
                    d.state_dim(),
                    d.input_dim()
                ));
            }
        }
        let p = dynamics.as_ref().map(Dynamics::perception_dim);
        match &self.suite {
            SuiteSpec::Discrete(_) => match self.perception_suite() {
                Ok(suite) => {
                    out.extend(validate_suite(&suite).iter().map(|v| format!("suite: {v}")));
                    if let Some(p) = p {
                        if suite.perception_dim() != p {
                            out.push(format!("suite: models have dimension {}, C has {p} columns", suite.perception_dim()));
                        }
                    }
                }
                Err(e) => out.push(format!("suite: {e}")),
            },
            SuiteSpec::Continuous(_) => match self.continuous_suite() {
                Ok(cs) => {
                    if let Some(p) = p {
                        if cs.perception_dim() != p {
                            out.push(format!(
                                "continuous_suite: moments have dimension {}, C has {p} columns",
                                cs.perception_dim()
                            ));
                        }
                    }
                }
                Err(e) => out.push(format!("continuous_suite: {e}")),
            },
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(out))
        }
    }

    pub fn dynamics(&self) -> Result<Dynamics> {
        let d = &self.dynamics;
        Dynamics::new(d.a.to_dmatrix(), d.b.to_dmatrix(), d.c.to_dmatrix())
    }

    pub fn cost_spec(&self) -> Result<CostSpec> {
        let c = &self.cost;
        CostSpec::new(c.q.to_dmatrix(), c.r.to_dmatrix(), c.qf.to_dmatrix())
    }

    pub fn batch(&self) -> Result<BatchMatrices> {
        build_batch(&self.dynamics()?, &self.cost_spec()?, self.horizon)
    }

    /// Expands the discrete suite (with overrides) to per-step models.
    pub fn perception_suite(&self) -> Result<PerceptionSuite> {
        let SuiteSpec::Discrete(spec) = &self.suite else {
            return Err(Error::InvalidArgument("scenario has a continuous suite".into()));
        };
        let mut models = Vec::with_capacity(spec.models.len());
        for (w, m) in spec.models.iter().enumerate() {
            let mut row = vec![m.model.clone(); self.horizon];
            for o in &m.overrides {
                if o.step >= self.horizon {
                    return Err(Error::IndexOutOfRange(format!(
                        "model {w} overrides step {} but horizon is {}",
                        o.step, self.horizon
                    )));
                }
                row[o.step] = o.model.clone();
            }
            models.push(row);
        }
        PerceptionSuite::new(self.upsilon, models)
    }

    pub fn continuous_suite(&self) -> Result<ContinuousSuite> {
        let SuiteSpec::Continuous(spec) = &self.suite else {
            return Err(Error::InvalidArgument("scenario has a discrete suite".into()));
        };
        let expand = |v: &Vec<StepMoments>, name: &str| -> Result<Vec<StepMoments>> {
            match v.len() {
                1 => Ok(vec![v[0].clone(); self.horizon]),
                n if n == self.horizon => Ok(v.clone()),
                n => Err(Error::DimensionMismatch(format!(
                    "`{name}` has {n} entries, expected 1 or {}",
                    self.horizon
                ))),
            }
        };
        ContinuousSuite::new(self.upsilon, expand(&spec.worst, "worst")?, expand(&spec.best, "best")?)
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.suite, SuiteSpec::Continuous(_))
    }
}

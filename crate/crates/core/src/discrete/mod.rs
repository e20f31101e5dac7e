//! Boolean model-selection programs.
//!
//! A schedule picks one model `w_t` per step. With `m(c)` the stacked vector of
//! chosen error centers (realized errors in [`Mode::Exact`], error means in
//! [`Mode::Expected`]) the objective is
//!
//! ```text
//! alpha * m' Psi m + alpha * sum_i Psi[i,i] * var_i(c) + beta * sum_t w_t * upsilon
//! ```
//!
//! where `var(c)` stacks the chosen error variances (all zero in exact mode).
//! The problem carries no initial state: the optimal schedule depends only on
//! `Psi`, the suite and the weights.

mod bnb;
mod exhaustive;
mod relax;
mod search;

pub use bnb::{solve_bnb, solve_bnb_seeded, solve_bnb_traced, BnbOptions, NodeRecord};
pub use exhaustive::{solve_exhaustive, EXHAUSTIVE_LIMIT};
pub use relax::{relax_lower_bound, Relaxation, RELAX_TOL};
pub use search::{greedy_sequence, local_search};

use nalgebra::DMatrix;

use crate::batch_lqr::BatchMatrices;
use crate::error::{dims, Error, Result};
use crate::perception::{PerceptionSuite, RealizedErrors};

/// Which information about perception errors the program uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Realized errors are known.
    Exact,
    /// Only error means and variances are known.
    Expected,
}

/// One model index per time step.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct ChoiceSequence(Vec<usize>);

impl ChoiceSequence {
    pub fn new(choices: Vec<usize>) -> Self {
        Self(choices)
    }

    pub fn constant(model: usize, horizon: usize) -> Self {
        Self(vec![model; horizon])
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    /// One-hot encoding `b[t * W + w]`, exactly one `true` per step.
    pub fn to_booleans(&self, models: usize) -> Vec<bool> {
        let mut b = vec![false; self.0.len() * models];
        for (t, &w) in self.0.iter().enumerate() {
            b[t * models + w] = true;
        }
        b
    }

    /// Inverse of [`Self::to_booleans`]; fails unless each step has exactly one `true`.
    pub fn from_booleans(b: &[bool], models: usize) -> Result<Self> {
        if models == 0 || b.len() % models != 0 {
            return Err(dims("boolean vector length is not a multiple of W"));
        }
        b.chunks(models)
            .enumerate()
            .map(|(t, row)| {
                let mut ones = row.iter().enumerate().filter(|(_, v)| **v).map(|(w, _)| w);
                match (ones.next(), ones.next()) {
                    (Some(w), None) => Ok(w),
                    _ => Err(Error::InvalidArgument(format!("step {t} does not select exactly one model"))),
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

impl From<Vec<usize>> for ChoiceSequence {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// Outcome classification of a solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    /// Search stopped early; the value is `objective - lower_bound`.
    BoundGap(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub sequence: ChoiceSequence,
    pub objective: f64,
    pub lower_bound: f64,
    pub nodes_explored: usize,
    pub status: SolveStatus,
}

/// Encoded Boolean quadratic program.
#[derive(Debug, Clone)]
pub struct BooleanQp {
    pub mode: Mode,
    pub alpha: f64,
    pub beta: f64,
    pub upsilon: f64,
    pub psi: DMatrix<f64>,
    /// Diagonal of `Psi`.
    pub vrow: Vec<f64>,
    horizon: usize,
    models: usize,
    p: usize,
    /// `centers[((t * W) + w) * p + r]`
    centers: Vec<f64>,
    variances: Vec<f64>,
    /// `linear[t * W + w] = alpha * sum_r vrow[pt+r] var[t,w,r] + beta * w * upsilon`
    linear: Vec<f64>,
    psi_norm: f64,
}

impl BooleanQp {
    /// Builds a program from per-step, per-model center and variance vectors
    /// (`centers[t][w]` is a `p`-vector).
    pub fn from_parts(
        mode: Mode,
        psi: DMatrix<f64>,
        centers: &[Vec<Vec<f64>>],
        variances: &[Vec<Vec<f64>>],
        alpha: f64,
        beta: f64,
        upsilon: f64,
    ) -> Result<Self> {
        let horizon = centers.len();
        if horizon == 0 || variances.len() != horizon {
            return Err(dims("centers and variances must cover the same non-empty horizon"));
        }
        let models = centers[0].len();
        if models == 0 {
            return Err(dims("at least one model is required"));
        }
        let p = centers[0][0].len();
        if p == 0 || !psi.is_square() || psi.nrows() != p * horizon {
            return Err(dims(format!(
                "Psi is {}x{}, expected pH = {}",
                psi.nrows(),
                psi.ncols(),
                p * horizon
            )));
        }
        if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::InvalidArgument("alpha and beta must be finite and >= 0".into()));
        }
        let mut flat_c = Vec::with_capacity(horizon * models * p);
        let mut flat_v = Vec::with_capacity(horizon * models * p);
        for t in 0..horizon {
            if centers[t].len() != models || variances[t].len() != models {
                return Err(dims(format!("step {t} lists a different number of models")));
            }
            for w in 0..models {
                if centers[t][w].len() != p || variances[t][w].len() != p {
                    return Err(dims(format!("model {w} at step {t} has the wrong dimension")));
                }
                flat_c.extend_from_slice(&centers[t][w]);
                flat_v.extend_from_slice(&variances[t][w]);
            }
        }
        let vrow: Vec<f64> = psi.diagonal().iter().copied().collect();
        let mut linear = Vec::with_capacity(horizon * models);
        for t in 0..horizon {
            for w in 0..models {
                let base = (t * models + w) * p;
                let var_term: f64 = (0..p).map(|r| vrow[p * t + r] * flat_v[base + r]).sum();
                linear.push(alpha * var_term + beta * (w as f64 * upsilon));
            }
        }
        let psi_norm = crate::psd::sym_eigenvalues(&psi)
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()));
        Ok(Self {
            mode,
            alpha,
            beta,
            upsilon,
            psi,
            vrow,
            horizon,
            models,
            p,
            centers: flat_c,
            variances: flat_v,
            linear,
            psi_norm,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn models(&self) -> usize {
        self.models
    }

    pub fn perception_dim(&self) -> usize {
        self.p
    }

    pub fn center(&self, t: usize, w: usize) -> &[f64] {
        let base = (t * self.models + w) * self.p;
        &self.centers[base..base + self.p]
    }

    pub fn variance(&self, t: usize, w: usize) -> &[f64] {
        let base = (t * self.models + w) * self.p;
        &self.variances[base..base + self.p]
    }

    pub(crate) fn linear(&self, t: usize, w: usize) -> f64 {
        self.linear[t * self.models + w]
    }

    pub(crate) fn psi_norm(&self) -> f64 {
        self.psi_norm
    }

    pub fn check_sequence(&self, c: &ChoiceSequence) -> Result<()> {
        if c.len() != self.horizon {
            return Err(dims(format!("sequence has {} steps, expected {}", c.len(), self.horizon)));
        }
        if let Some(t) = c.as_slice().iter().position(|&w| w >= self.models) {
            return Err(Error::IndexOutOfRange(format!("model {} at step {t}", c.as_slice()[t])));
        }
        Ok(())
    }

    /// Stacked centers selected by `c`.
    pub fn stacked_centers(&self, c: &[usize]) -> Vec<f64> {
        c.iter().enumerate().flat_map(|(t, &w)| self.center(t, w).iter().copied()).collect()
    }

    fn quadratic(&self, v: &[f64]) -> f64 {
        let n = v.len();
        let mut total = 0.0;
        for j in 0..n {
            let col = self.psi.column(j);
            let mut acc = 0.0;
            for i in 0..n {
                acc += col[i] * v[i];
            }
            total += acc * v[j];
        }
        total
    }

    /// `m' Psi m + vrow . var(c)`: the expected excess control cost of `c`
    /// (the realized excess in exact mode).
    pub fn control_term(&self, c: &ChoiceSequence) -> Result<f64> {
        self.check_sequence(c)?;
        Ok(self.control_term_unchecked(c.as_slice()))
    }

    fn control_term_unchecked(&self, c: &[usize]) -> f64 {
        let m = self.stacked_centers(c);
        let var_term: f64 = c
            .iter()
            .enumerate()
            .map(|(t, &w)| {
                self.variance(t, w)
                    .iter()
                    .enumerate()
                    .map(|(r, v)| self.vrow[self.p * t + r] * v)
                    .sum::<f64>()
            })
            .sum();
        self.quadratic(&m) + var_term
    }

    /// `sum_t w_t * upsilon`
    pub fn perception_cost(&self, c: &[usize]) -> f64 {
        c.iter().map(|&w| w as f64 * self.upsilon).sum()
    }

    pub(crate) fn objective_unchecked(&self, c: &[usize]) -> f64 {
        self.alpha * self.control_term_unchecked(c) + self.beta * self.perception_cost(c)
    }
}

/// Encodes the selection program for a batch model and suite.
pub fn encode(
    bm: &BatchMatrices,
    suite: &PerceptionSuite,
    alpha: f64,
    beta: f64,
    mode: Mode,
    realized: Option<&RealizedErrors>,
) -> Result<BooleanQp> {
    if suite.horizon() != bm.horizon || suite.perception_dim() != bm.p {
        return Err(dims(format!(
            "suite is H={} p={}, batch is H={} p={}",
            suite.horizon(),
            suite.perception_dim(),
            bm.horizon,
            bm.p
        )));
    }
    let (h, models, p) = (bm.horizon, suite.models(), bm.p);
    let mut centers = vec![vec![Vec::new(); models]; h];
    let mut variances = vec![vec![Vec::new(); models]; h];
    match mode {
        Mode::Expected => {
            for t in 0..h {
                for w in 0..models {
                    let (mean, var) = suite.moments(w, t)?;
                    centers[t][w] = mean.to_vec();
                    variances[t][w] = var.to_vec();
                }
            }
        }
        Mode::Exact => {
            let realized = realized.ok_or(Error::MissingRealizedErrors)?;
            suite.check_realized(realized)?;
            for t in 0..h {
                for w in 0..models {
                    centers[t][w] = realized.get(w, t).to_vec();
                    variances[t][w] = vec![0.0; p];
                }
            }
        }
    }
    BooleanQp::from_parts(mode, bm.psi.clone(), &centers, &variances, alpha, beta, suite.upsilon())
}

/// Objective of `c` under `qp`.
pub fn objective_value(qp: &BooleanQp, c: &ChoiceSequence) -> Result<f64> {
    qp.check_sequence(c)?;
    Ok(qp.objective_unchecked(c.as_slice()))
}

/// Exact search strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    #[default]
    Bnb,
    Exhaustive,
}

/// Dispatches to [`solve_bnb`] or [`solve_exhaustive`].
pub fn solve(qp: &BooleanQp, kind: SolverKind, opts: &BnbOptions) -> Result<SolveResult> {
    match kind {
        SolverKind::Bnb => solve_bnb(qp, opts),
        SolverKind::Exhaustive => solve_exhaustive(qp),
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random PSD `Psi` of size `k` with occasional rank deficiency.
    pub fn random_psi(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
        let rank = rng.random_range(1..=k);
        let f = DMatrix::from_fn(rank, k, |_, _| rng.random_range(-1.0..1.0));
        crate::psd::symmetrize(&(f.transpose() * f))
    }

    pub fn random_qp(seed: u64, horizon: usize, models: usize, p: usize, mode: Mode) -> BooleanQp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi = random_psi(&mut rng, p * horizon);
        let centers: Vec<Vec<Vec<f64>>> = (0..horizon)
            .map(|_| (0..models).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
            .collect();
        let variances: Vec<Vec<Vec<f64>>> = (0..horizon)
            .map(|_| {
                (0..models)
                    .map(|_| {
                        (0..p)
                            .map(|_| if mode == Mode::Exact { 0.0 } else { rng.random_range(0.0..0.5) })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let alpha = rng.random_range(0.1..1.0);
        let beta = rng.random_range(0.0..1.0);
        let upsilon = rng.random_range(0.01..0.3);
        BooleanQp::from_parts(mode, psi, &centers, &variances, alpha, beta, upsilon).unwrap()
    }

    /// The `H=1, p=1, Psi=0.5` two-model example.
    pub fn scalar_qp() -> BooleanQp {
        BooleanQp::from_parts(
            Mode::Expected,
            DMatrix::from_element(1, 1, 0.5),
            &[vec![vec![2.0], vec![0.0]]],
            &[vec![vec![0.0], vec![0.0]]],
            1.0,
            1.0,
            1.0,
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use crate::batch_lqr::{build_batch, cost_gap, CostSpec, Dynamics};
    use crate::perception::ErrorModel;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_objectives() {
        let qp = scalar_qp();
        assert_eq!(objective_value(&qp, &vec![0].into()).unwrap(), 2.0);
        assert_eq!(objective_value(&qp, &vec![1].into()).unwrap(), 1.0);
    }

    #[test]
    fn zero_moments_and_beta_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let psi = random_psi(&mut rng, 3);
        let zeros = vec![vec![vec![0.0]; 4]; 3];
        let qp = BooleanQp::from_parts(Mode::Expected, psi, &zeros, &zeros, 0.7, 0.0, 1.0).unwrap();
        for c in [vec![0, 1, 2], vec![3, 3, 3], vec![1, 0, 0]] {
            assert_eq!(objective_value(&qp, &c.into()).unwrap(), 0.0);
        }
    }

    #[test]
    fn boolean_encoding_round_trip() {
        let c = ChoiceSequence::new(vec![2, 0, 1, 2]);
        let b = c.to_booleans(3);
        assert_eq!(b.iter().filter(|v| **v).count(), 4);
        assert_eq!(ChoiceSequence::from_booleans(&b, 3).unwrap(), c);
        let mut bad = b.clone();
        bad[1] = true;
        assert!(ChoiceSequence::from_booleans(&bad, 3).is_err());
    }

    fn small_batch(c: f64) -> BatchMatrices {
        let d = Dynamics::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 0.9]),
            DMatrix::from_row_slice(2, 1, &[0.0, 0.1]),
            DMatrix::from_row_slice(2, 1, &[c, 0.0]),
        )
        .unwrap();
        let cost = CostSpec::new(
            DMatrix::identity(2, 2),
            DMatrix::from_element(1, 1, 0.1),
            DMatrix::identity(2, 2) * 5.0,
        )
        .unwrap();
        build_batch(&d, &cost, 2).unwrap()
    }

    fn small_suite() -> PerceptionSuite {
        PerceptionSuite::time_invariant(
            0.5,
            vec![
                ErrorModel::Normal {
                    mean: vec![0.4],
                    variance: vec![0.3],
                },
                ErrorModel::Uniform {
                    low: vec![-0.2],
                    high: vec![0.4],
                },
                ErrorModel::Degenerate { value: vec![0.0] },
            ],
            2,
        )
        .unwrap()
    }

    #[test]
    fn encode_vrow_is_psi_diagonal() {
        let bm = small_batch(1.0);
        let qp = encode(&bm, &small_suite(), 1.0, 1.0, Mode::Expected, None).unwrap();
        assert_eq!(qp.vrow, vec![bm.psi[(0, 0)], bm.psi[(1, 1)]]);
    }

    #[test]
    fn zero_perception_map_leaves_only_perception_cost() {
        let bm = small_batch(0.0);
        let qp = encode(&bm, &small_suite(), 0.8, 0.3, Mode::Expected, None).unwrap();
        for c in [vec![0, 0], vec![1, 2], vec![2, 2]] {
            let want = 0.3 * qp.perception_cost(&c);
            assert_eq!(objective_value(&qp, &c.into()).unwrap(), want);
        }
    }

    #[test]
    fn exact_mode_requires_realized() {
        let bm = small_batch(1.0);
        assert!(matches!(
            encode(&bm, &small_suite(), 1.0, 1.0, Mode::Exact, None),
            Err(Error::MissingRealizedErrors)
        ));
    }

    #[test]
    fn exact_objective_matches_cost_gap() {
        let bm = small_batch(1.0);
        let suite = small_suite();
        let realized = suite.sample_realized(3).unwrap();
        let (alpha, beta) = (0.7, 0.4);
        let qp = encode(&bm, &suite, alpha, beta, Mode::Exact, Some(&realized)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
        for c in [vec![0, 0], vec![0, 2], vec![1, 2], vec![2, 1]] {
            let s_hat = &s + DVector::from_vec(realized.stacked(&c));
            let want = alpha * cost_gap(&bm, &s_hat, &s).unwrap() + beta * suite.perception_cost(&c);
            let got = objective_value(&qp, &c.into()).unwrap();
            assert!((got - want).abs() <= 1e-10 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn rejects_bad_sequences() {
        let qp = scalar_qp();
        assert!(matches!(objective_value(&qp, &vec![0, 0].into()), Err(Error::DimensionMismatch(_))));
        assert!(matches!(objective_value(&qp, &vec![2].into()), Err(Error::IndexOutOfRange(_))));
    }
}

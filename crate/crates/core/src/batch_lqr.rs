//! Batch (stacked-over-horizon) LQR representation.
//!
//! Stacking the dynamics `x_{t+1} = A x_t + B u_t + C s_t` over a horizon `H`
//! gives `X = F x0 + G u + Hs s`, where `X = [x_0; ...; x_H]`. With the cost
//! `sum_t (x_t' Q x_t + u_t' R u_t) + x_H' Qf x_H` this becomes
//!
//! ```text
//! J(u, s, x0) = X' Qbar X + u' Rbar u
//! ```
//!
//! which is quadratic in `u` with Hessian `2K`, `K = G' Qbar G + Rbar`. The
//! minimizer for a perception vector `s` is `u*(s) = -K^-1 (G' Qbar F x0 + L s)`
//! with `L = G' Qbar Hs`. Running the controller on an estimate `s_hat` while
//! the world evolves with `s` costs exactly `(s_hat - s)' Psi (s_hat - s)` more,
//! where `Psi = L' K^-1 L`, independently of `x0`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{dims, Error, Result};
use crate::psd::{self, max_abs, symmetrize};

/// Relative symmetry tolerance for cost matrices.
const COST_SYMMETRY_TOL: f64 = 1e-12;
/// Relative eigenvalue tolerance for the PSD cost weights.
const COST_PSD_TOL: f64 = 1e-10;

/// Linear dynamics `x_{t+1} = A x_t + B u_t + C s_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl Dynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(dims(format!("A must be square and non-empty, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(dims(format!("B must be {n}xm with m >= 1, got {}x{}", b.nrows(), b.ncols())));
        }
        if c.nrows() != n || c.ncols() == 0 {
            return Err(dims(format!("C must be {n}xp with p >= 1, got {}x{}", c.nrows(), c.ncols())));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} has non-finite entries")));
            }
        }
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    pub fn perception_dim(&self) -> usize {
        self.c.ncols()
    }
}

/// Quadratic stage weight `Q`, input weight `R` and terminal weight `Qf`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    qf: DMatrix<f64>,
}

impl CostSpec {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, qf: DMatrix<f64>) -> Result<Self> {
        for (name, m) in [("Q", &q), ("R", &r), ("Qf", &qf)] {
            if !m.is_square() || m.nrows() == 0 {
                return Err(dims(format!("{name} must be square and non-empty")));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} has non-finite entries")));
            }
            let asym = psd::asymmetry(m);
            if asym > COST_SYMMETRY_TOL * max_abs(m).max(f64::MIN_POSITIVE) {
                return Err(Error::NotSymmetric(asym));
            }
        }
        if q.nrows() != qf.nrows() {
            return Err(dims("Q and Qf must have the same size"));
        }
        for (name, m) in [("Q", &q), ("Qf", &qf)] {
            let report = psd::psd_check(m, COST_PSD_TOL)?;
            if !report.is_psd {
                return Err(Error::NotPositiveDefinite(format!(
                    "{name} is not PSD (min eigenvalue {:e})",
                    report.min_eigenvalue
                )));
            }
        }
        if symmetrize(&r).cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("R".into()));
        }
        Ok(Self { q, r, qf })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn qf(&self) -> &DMatrix<f64> {
        &self.qf
    }
}

/// Stacked matrices for a fixed horizon.
#[derive(Debug, Clone)]
pub struct BatchMatrices {
    pub horizon: usize,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// `(n(H+1)) x n`
    pub f: DMatrix<f64>,
    /// `(n(H+1)) x (mH)`
    pub g: DMatrix<f64>,
    /// `(n(H+1)) x (pH)`
    pub hs: DMatrix<f64>,
    pub qbar: DMatrix<f64>,
    pub rbar: DMatrix<f64>,
    /// `G' Qbar G + Rbar`
    pub k: DMatrix<f64>,
    /// `G' Qbar Hs`
    pub l: DMatrix<f64>,
    /// `G' Qbar F`, the initial-state coupling of the input gradient.
    pub gqf: DMatrix<f64>,
    /// `L' K^-1 L`
    pub psi: DMatrix<f64>,
    k_chol: Cholesky<f64, Dyn>,
}

/// Stacks `blocks` on the diagonal.
fn block_diag(block: &DMatrix<f64>, count: usize, last: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    let b = block.nrows();
    let total = b * count + last.map_or(0, |l| l.nrows());
    let mut out = DMatrix::zeros(total, total);
    for k in 0..count {
        out.view_mut((k * b, k * b), (b, b)).copy_from(block);
    }
    if let Some(l) = last {
        let off = b * count;
        out.view_mut((off, off), (l.nrows(), l.nrows())).copy_from(l);
    }
    out
}

/// Stacked map from per-step inputs (`width` columns each) to `X`.
fn stacked_input_map(a: &DMatrix<f64>, input: &DMatrix<f64>, horizon: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let w = input.ncols();
    let mut out = DMatrix::zeros(n * (horizon + 1), w * horizon);
    for k in 1..=horizon {
        let prev = out.view(((k - 1) * n, 0), (n, w * horizon)).into_owned();
        let mut row = a * prev;
        row.view_mut((0, (k - 1) * w), (n, w)).copy_from(input);
        out.view_mut((k * n, 0), (n, w * horizon)).copy_from(&row);
    }
    out
}

/// Builds the stacked representation and the sensitivity matrix `Psi`.
pub fn build_batch(dynamics: &Dynamics, cost: &CostSpec, horizon: usize) -> Result<BatchMatrices> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let (n, m, p) = (dynamics.state_dim(), dynamics.input_dim(), dynamics.perception_dim());
    if cost.q.nrows() != n || cost.r.nrows() != m {
        return Err(dims(format!(
            "cost sizes (Q {}, R {}) do not match dynamics (n {n}, m {m})",
            cost.q.nrows(),
            cost.r.nrows()
        )));
    }
    let a = &dynamics.a;

    let mut f = DMatrix::zeros(n * (horizon + 1), n);
    let mut power = DMatrix::identity(n, n);
    for k in 0..=horizon {
        f.view_mut((k * n, 0), (n, n)).copy_from(&power);
        power = a * power;
    }
    let g = stacked_input_map(a, &dynamics.b, horizon);
    let hs = stacked_input_map(a, &dynamics.c, horizon);

    let qbar = block_diag(&cost.q, horizon, Some(&cost.qf));
    let rbar = block_diag(&cost.r, horizon, None);

    let qg = &qbar * &g;
    let k = symmetrize(&(g.transpose() * &qg + &rbar));
    let l = qg.transpose() * &hs;
    let gqf = qg.transpose() * &f;

    let k_chol = k
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("K = G'QG + R".into()))?;
    // Psi = L' K^-1 L = Y'Y with Y = chol(K)^-1 L.
    let y = k_chol
        .l()
        .solve_lower_triangular(&l)
        .ok_or_else(|| Error::NotPositiveDefinite("K factor is singular".into()))?;
    let psi = symmetrize(&(y.transpose() * &y));

    Ok(BatchMatrices {
        horizon,
        n,
        m,
        p,
        f,
        g,
        hs,
        qbar,
        rbar,
        k,
        l,
        gqf,
        psi,
        k_chol,
    })
}

impl BatchMatrices {
    /// Length of a stacked perception vector (`p * H`).
    pub fn perception_len(&self) -> usize {
        self.p * self.horizon
    }

    /// Length of a stacked input vector (`m * H`).
    pub fn input_len(&self) -> usize {
        self.m * self.horizon
    }

    fn check_s(&self, s: &DVector<f64>, what: &str) -> Result<()> {
        if s.len() != self.perception_len() {
            return Err(dims(format!("{what} has length {}, expected {}", s.len(), self.perception_len())));
        }
        Ok(())
    }

    fn check_x0(&self, x0: &DVector<f64>) -> Result<()> {
        if x0.len() != self.n {
            return Err(dims(format!("x0 has length {}, expected {}", x0.len(), self.n)));
        }
        Ok(())
    }

    /// Stacked state `F x0 + G u + Hs s`.
    pub fn stacked_states(&self, u: &DVector<f64>, s: &DVector<f64>, x0: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_s(s, "s")?;
        self.check_x0(x0)?;
        if u.len() != self.input_len() {
            return Err(dims(format!("u has length {}, expected {}", u.len(), self.input_len())));
        }
        Ok(&self.f * x0 + &self.g * u + &self.hs * s)
    }

    /// Batch quadratic cost `X' Qbar X + u' Rbar u`.
    pub fn batch_cost(&self, u: &DVector<f64>, s: &DVector<f64>, x0: &DVector<f64>) -> Result<f64> {
        let x = self.stacked_states(u, s, x0)?;
        Ok(x.dot(&(&self.qbar * &x)) + u.dot(&(&self.rbar * u)))
    }

    /// Gradient of [`Self::batch_cost`] with respect to `u`.
    pub fn batch_cost_gradient(&self, u: &DVector<f64>, s: &DVector<f64>, x0: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_s(s, "s")?;
        self.check_x0(x0)?;
        if u.len() != self.input_len() {
            return Err(dims("u length"));
        }
        Ok((&self.k * u + &self.gqf * x0 + &self.l * s) * 2.0)
    }
}

/// Open-loop optimal inputs `u* = -K^-1 (G' Qbar F x0 + L s)`.
pub fn optimal_controls(bm: &BatchMatrices, s: &DVector<f64>, x0: &DVector<f64>) -> Result<DVector<f64>> {
    bm.check_s(s, "s")?;
    bm.check_x0(x0)?;
    let rhs = &bm.gqf * x0 + &bm.l * s;
    Ok(-bm.k_chol.solve(&rhs))
}

/// States `x_0..x_H` and inputs `u_0..u_{H-1}` of a simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

/// Simulates the recursion step by step.
pub fn rollout(dynamics: &Dynamics, u: &DVector<f64>, s: &DVector<f64>, x0: &DVector<f64>) -> Result<Trajectory> {
    let (n, m, p) = (dynamics.state_dim(), dynamics.input_dim(), dynamics.perception_dim());
    if x0.len() != n {
        return Err(dims(format!("x0 has length {}, expected {n}", x0.len())));
    }
    if u.len() % m != 0 {
        return Err(dims("stacked input length is not a multiple of m"));
    }
    let horizon = u.len() / m;
    if s.len() != p * horizon {
        return Err(dims(format!("s has length {}, expected {}", s.len(), p * horizon)));
    }
    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    states.push(x0.clone());
    for t in 0..horizon {
        let ut = u.rows(t * m, m).into_owned();
        let st = s.rows(t * p, p);
        let next = &dynamics.a * &states[t] + &dynamics.b * &ut + &dynamics.c * st;
        inputs.push(ut);
        states.push(next);
    }
    Ok(Trajectory { states, inputs })
}

/// `sum_{t<H} (x_t' Q x_t + u_t' R u_t) + x_H' Qf x_H`.
pub fn control_cost(traj: &Trajectory, cost: &CostSpec) -> Result<f64> {
    let h = traj.inputs.len();
    if traj.states.len() != h + 1 {
        return Err(dims(format!("trajectory has {} states for {h} inputs", traj.states.len())));
    }
    let n = cost.q.nrows();
    let m = cost.r.nrows();
    let mut total = 0.0;
    for t in 0..h {
        let (x, u) = (&traj.states[t], &traj.inputs[t]);
        if x.len() != n || u.len() != m {
            return Err(dims(format!("step {t} has wrong state/input size")));
        }
        total += x.dot(&(&cost.q * x)) + u.dot(&(&cost.r * u));
    }
    let xh = &traj.states[h];
    if xh.len() != n {
        return Err(dims("terminal state size"));
    }
    Ok(total + xh.dot(&(&cost.qf * xh)))
}

/// Excess control cost `(s_hat - s)' Psi (s_hat - s)`.
pub fn cost_gap(bm: &BatchMatrices, s_hat: &DVector<f64>, s: &DVector<f64>) -> Result<f64> {
    bm.check_s(s_hat, "s_hat")?;
    bm.check_s(s, "s")?;
    let d = s_hat - s;
    Ok(d.dot(&(&bm.psi * &d)))
}

/// Excess cost measured by simulation: run the controller planned from
/// `s_hat` and the clairvoyant controller planned from `s`, both in a world
/// driven by `s`, and subtract their costs.
pub fn simulated_gap(
    dynamics: &Dynamics,
    cost: &CostSpec,
    bm: &BatchMatrices,
    s_hat: &DVector<f64>,
    s: &DVector<f64>,
    x0: &DVector<f64>,
) -> Result<f64> {
    let u_hat = optimal_controls(bm, s_hat, x0)?;
    let u_star = optimal_controls(bm, s, x0)?;
    let j_hat = control_cost(&rollout(dynamics, &u_hat, s, x0)?, cost)?;
    let j_star = control_cost(&rollout(dynamics, &u_star, s, x0)?, cost)?;
    Ok(j_hat - j_star)
}

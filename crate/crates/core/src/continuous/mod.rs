//! Continuous model quality: each step picks `c` in `[0, 1]`, interpolating
//! the error moments of the worst (`c = 0`) and best (`c = 1`) models at a
//! perception cost of `c * upsilon`.
//!
//! The scheduling problem becomes a convex box-constrained QP. The canonical
//! form works over one copy of `c_t` per perception coordinate, so that the
//! quadratic matrix is a Hadamard product `Phi ∘ Psi`.

mod assumption;
mod qp;
pub mod sdp;

pub use assumption::{check_assumption, default_epsilon_tilde, AssumptionReport};
pub use qp::{round_to_discrete, solve_qp, QpSolution, QP_TOL};
pub use sdp::{export_sdp, SdpProblem};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::batch_lqr::BatchMatrices;
use crate::error::{dims, Error, Result};
use crate::perception::PerceptionSuite;

/// Mean and variance of one error distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMoments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawContinuousSuite {
    upsilon: f64,
    worst: Vec<StepMoments>,
    best: Vec<StepMoments>,
}

/// Worst and best error moments per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawContinuousSuite", into = "RawContinuousSuite")]
pub struct ContinuousSuite {
    upsilon: f64,
    worst: Vec<StepMoments>,
    best: Vec<StepMoments>,
    p: usize,
}

impl TryFrom<RawContinuousSuite> for ContinuousSuite {
    type Error = Error;

    fn try_from(raw: RawContinuousSuite) -> Result<Self> {
        ContinuousSuite::new(raw.upsilon, raw.worst, raw.best)
    }
}

impl From<ContinuousSuite> for RawContinuousSuite {
    fn from(s: ContinuousSuite) -> Self {
        RawContinuousSuite {
            upsilon: s.upsilon,
            worst: s.worst,
            best: s.best,
        }
    }
}

impl ContinuousSuite {
    pub fn new(upsilon: f64, worst: Vec<StepMoments>, best: Vec<StepMoments>) -> Result<Self> {
        if !(upsilon.is_finite() && upsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!("upsilon must be finite and >= 0, got {upsilon}")));
        }
        if worst.is_empty() || worst.len() != best.len() {
            return Err(dims(format!(
                "worst and best need the same nonzero number of steps ({} vs {})",
                worst.len(),
                best.len()
            )));
        }
        let p = worst[0].mean.len();
        if p == 0 {
            return Err(dims("perception dimension must be positive"));
        }
        for (t, m) in worst.iter().chain(&best).enumerate() {
            if m.mean.len() != p || m.variance.len() != p {
                return Err(dims(format!("moments entry {t} does not have dimension {p}")));
            }
            if m.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("moments entry {t} has a non-finite mean")));
            }
            if m.variance.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidArgument(format!("moments entry {t} has a negative variance")));
            }
        }
        Ok(Self { upsilon, worst, best, p })
    }

    /// Same worst/best pair at every step.
    pub fn time_invariant(upsilon: f64, worst: StepMoments, best: StepMoments, horizon: usize) -> Result<Self> {
        Self::new(upsilon, vec![worst; horizon], vec![best; horizon])
    }

    /// Takes model `0` as worst and model `W - 1` as best, so that with two
    /// models the endpoints `c = 0, 1` coincide with the discrete choices.
    pub fn from_discrete(suite: &PerceptionSuite) -> Result<Self> {
        let top = suite.models() - 1;
        let (mut worst, mut best) = (Vec::new(), Vec::new());
        for t in 0..suite.horizon() {
            for (w, out) in [(0, &mut worst), (top, &mut best)] {
                let (mean, variance) = suite.moments(w, t)?;
                out.push(StepMoments {
                    mean: mean.to_vec(),
                    variance: variance.to_vec(),
                });
            }
        }
        Self::new(suite.upsilon() * top as f64, worst, best)
    }

    pub fn upsilon(&self) -> f64 {
        self.upsilon
    }

    pub fn horizon(&self) -> usize {
        self.worst.len()
    }

    pub fn perception_dim(&self) -> usize {
        self.p
    }

    pub fn worst(&self) -> &[StepMoments] {
        &self.worst
    }

    pub fn best(&self) -> &[StepMoments] {
        &self.best
    }

    /// Interpolated `(mean, variance)` at step `t` and quality `c`.
    pub fn moments_at(&self, t: usize, c: f64) -> (Vec<f64>, Vec<f64>) {
        let (w, b) = (&self.worst[t], &self.best[t]);
        let lerp = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| (1.0 - c) * a + c * b).collect();
        (lerp(&w.mean, &b.mean), lerp(&w.variance, &b.variance))
    }

    fn check_point(&self, c: &[f64]) -> Result<()> {
        if c.len() != self.horizon() {
            return Err(dims(format!("expected {} qualities, got {}", self.horizon(), c.len())));
        }
        if let Some(v) = c.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("quality {v} outside [0, 1]")));
        }
        Ok(())
    }

    /// Expected scalarized cost at `c`, evaluated directly from the
    /// interpolated moments.
    pub fn objective(&self, bm: &BatchMatrices, alpha: f64, beta: f64, c: &[f64]) -> Result<f64> {
        self.check_point(c)?;
        self.check_batch(bm)?;
        let (mut mean, mut var) = (Vec::with_capacity(bm.perception_len()), Vec::new());
        for (t, &ct) in c.iter().enumerate() {
            let (m, v) = self.moments_at(t, ct);
            mean.extend(m);
            var.extend(v);
        }
        let m = DVector::from_vec(mean);
        let quad = m.dot(&(&bm.psi * &m));
        let spread: f64 = var.iter().enumerate().map(|(i, v)| bm.psi[(i, i)] * v).sum();
        let jper: f64 = c.iter().map(|v| v * self.upsilon).sum();
        Ok(alpha * (quad + spread) + beta * jper)
    }

    fn check_batch(&self, bm: &BatchMatrices) -> Result<()> {
        if bm.horizon != self.horizon() || bm.p != self.p {
            return Err(dims(format!(
                "suite is {}x{} (horizon x p) but batch matrices are {}x{}",
                self.horizon(),
                self.p,
                bm.horizon,
                bm.p
            )));
        }
        Ok(())
    }
}

/// Canonical quadratic program over the duplicated variables `c'`:
/// `c'ᵀ Ψ' c' + (l + r + beta * im) c' + k + k2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalQP {
    pub horizon: usize,
    pub p: usize,
    pub alpha: f64,
    pub beta: f64,
    pub psi_prime: DMatrix<f64>,
    pub l: DVector<f64>,
    pub r: DVector<f64>,
    pub im: DVector<f64>,
    pub k: f64,
    pub k2: f64,
    /// Stacked worst-model means.
    pub gamma0: DVector<f64>,
    /// Stacked best-model means.
    pub gamma1: DVector<f64>,
}

/// Builds the canonical form. With `d = gamma1 - gamma0` the expected error
/// is `gamma0 + d ∘ c'`, which gives `Ψ' = alpha * (d dᵀ) ∘ Ψ`.
pub fn build_canonical(bm: &BatchMatrices, cs: &ContinuousSuite, alpha: f64, beta: f64) -> Result<CanonicalQP> {
    cs.check_batch(bm)?;
    if !(alpha.is_finite() && alpha >= 0.0 && beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidArgument("alpha and beta must be finite and >= 0".into()));
    }
    let (h, p) = (cs.horizon(), cs.p);
    let k = h * p;
    let stack = |steps: &[StepMoments], pick: fn(&StepMoments) -> &Vec<f64>| {
        DVector::from_iterator(k, steps.iter().flat_map(|s| pick(s).iter().copied()))
    };
    let gamma0 = stack(&cs.worst, |s| &s.mean);
    let gamma1 = stack(&cs.best, |s| &s.mean);
    let v0 = stack(&cs.worst, |s| &s.variance);
    let v1 = stack(&cs.best, |s| &s.variance);
    let d = &gamma1 - &gamma0;
    let psi = &bm.psi;

    let psi_prime = DMatrix::from_fn(k, k, |i, j| alpha * d[i] * d[j] * psi[(i, j)]);
    let psi_g0 = psi * &gamma0;
    let l = DVector::from_fn(k, |j, _| 2.0 * alpha * psi_g0[j] * d[j]);
    let r = DVector::from_fn(k, |i, _| alpha * psi[(i, i)] * (v1[i] - v0[i]));
    let im = DVector::from_fn(k, |i, _| if i % p == 0 { cs.upsilon } else { 0.0 });
    let kc = alpha * gamma0.dot(&psi_g0);
    let k2 = alpha * (0..k).map(|i| psi[(i, i)] * v0[i]).sum::<f64>();
    Ok(CanonicalQP {
        horizon: h,
        p,
        alpha,
        beta,
        psi_prime,
        l,
        r,
        im,
        k: kc,
        k2,
        gamma0,
        gamma1,
    })
}

impl CanonicalQP {
    /// Full linear row `l + r + beta * im`.
    pub fn linear(&self) -> DVector<f64> {
        &self.l + &self.r + &self.im * self.beta
    }

    pub fn constant(&self) -> f64 {
        self.k + self.k2
    }

    /// Copies each `c_t` into its `p` duplicated slots.
    pub fn expand(&self, c: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.horizon * self.p, c.iter().flat_map(|&v| std::iter::repeat_n(v, self.p)))
    }

    /// Canonical objective at a duplicated vector.
    pub fn evaluate(&self, c_dup: &DVector<f64>) -> Result<f64> {
        if c_dup.len() != self.horizon * self.p {
            return Err(dims(format!("expected {} entries, got {}", self.horizon * self.p, c_dup.len())));
        }
        Ok(c_dup.dot(&(&self.psi_prime * c_dup)) + self.linear().dot(c_dup) + self.constant())
    }

    /// Whether `c_dup` satisfies the duplication constraints exactly.
    pub fn is_consistent(&self, c_dup: &DVector<f64>) -> bool {
        c_dup.len() == self.horizon * self.p
            && (0..self.horizon).all(|t| (1..self.p).all(|r| c_dup[self.p * t + r] == c_dup[self.p * t]))
    }

    /// Reduced program over one variable per step: `cᵀ Q c + qᵀ c + const`.
    pub fn reduced(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (h, p) = (self.horizon, self.p);
        let lin = self.linear();
        let q = DMatrix::from_fn(h, h, |t, s| {
            let mut acc = 0.0;
            for a in 0..p {
                for b in 0..p {
                    acc += self.psi_prime[(p * t + a, p * s + b)];
                }
            }
            acc
        });
        let v = DVector::from_fn(h, |t, _| (0..p).map(|a| lin[p * t + a]).sum());
        (q, v)
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use crate::batch_lqr::{build_batch, CostSpec, Dynamics};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Random stable-ish system with a random continuous suite.
    pub fn random_instance(seed: u64, h: usize, p: usize) -> (BatchMatrices, ContinuousSuite) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1 + (seed % 3) as usize;
        let m = 1 + (seed % 2) as usize;
        let a = random_matrix(&mut rng, n, n) * 0.6;
        let dynamics = Dynamics::new(a, random_matrix(&mut rng, n, m), random_matrix(&mut rng, n, p)).unwrap();
        let cost = CostSpec::new(
            DMatrix::identity(n, n),
            DMatrix::identity(m, m) * 0.5,
            DMatrix::identity(n, n) * 2.0,
        )
        .unwrap();
        let bm = build_batch(&dynamics, &cost, h).unwrap();
        let mut moments = |scale: f64| {
            (0..h)
                .map(|_| StepMoments {
                    mean: (0..p).map(|_| scale * rng.random_range(-1.0..1.0)).collect(),
                    variance: (0..p).map(|_| scale * rng.random_range(0.0..1.0)).collect(),
                })
                .collect::<Vec<_>>()
        };
        let worst = moments(2.0);
        let best = moments(0.3);
        let cs = ContinuousSuite::new(rng.random_range(0.05..1.0), worst, best).unwrap();
        (bm, cs)
    }

    pub fn scalar_instance(psi: f64, mu0: f64, v0: f64, upsilon: f64) -> (BatchMatrices, ContinuousSuite) {
        // x' = u + s, Q = 0, Qf = 2 psi, R = 2 psi gives Ψ = psi.
        let dynamics = Dynamics::new(
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let cost = CostSpec::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 2.0 * psi),
            DMatrix::from_element(1, 1, 2.0 * psi),
        )
        .unwrap();
        let bm = build_batch(&dynamics, &cost, 1).unwrap();
        assert!((bm.psi[(0, 0)] - psi).abs() < 1e-14);
        let cs = ContinuousSuite::time_invariant(
            upsilon,
            StepMoments {
                mean: vec![mu0],
                variance: vec![v0],
            },
            StepMoments {
                mean: vec![0.0],
                variance: vec![0.0],
            },
            1,
        )
        .unwrap();
        (bm, cs)
    }
}

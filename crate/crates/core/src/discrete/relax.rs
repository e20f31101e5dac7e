//! Continuous relaxation over the product of per-step simplices.
//!
//! Relaxing `b[t,w] in {0,1}` to `[0,1]` with `sum_w b[t,w] = 1` gives a convex
//! problem because `Psi` is PSD. The bound returned is the Frank-Wolfe bound
//! `f(x) + min_{y in S} grad f(x) . (y - x)`, which is a valid lower bound at any
//! feasible `x`, converged or not.

use super::BooleanQp;
use crate::error::{Error, Result};

/// Relative Frank-Wolfe gap at which the relaxation counts as solved.
pub const RELAX_TOL: f64 = 1e-8;
const MAX_ITER: usize = 200_000;
const REFRESH_EVERY: usize = 64;

/// Relaxation state and certificate.
#[derive(Debug, Clone)]
pub struct Relaxation {
    /// Best Frank-Wolfe lower bound seen.
    pub bound: f64,
    /// Objective at `x`.
    pub value: f64,
    /// `x[t * W + w]`
    pub x: Vec<f64>,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Euclidean projection of `v` onto the probability simplex, in place.
pub(crate) fn project_simplex(v: &mut [f64], scratch: &mut Vec<f64>) {
    scratch.clear();
    scratch.extend_from_slice(v);
    scratch.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, u) in scratch.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
}

pub(crate) struct RelaxWork<'a> {
    qp: &'a BooleanQp,
    free: Vec<usize>,
    x: Vec<f64>,
    m: Vec<f64>,
    psim: Vec<f64>,
    grad: Vec<f64>,
}

impl<'a> RelaxWork<'a> {
    pub(crate) fn new(qp: &'a BooleanQp, fixed: &[Option<usize>], warm: Option<&[f64]>) -> Self {
        let (h, nw) = (qp.horizon(), qp.models());
        let mut x = vec![0.0; h * nw];
        let mut free = Vec::new();
        for t in 0..h {
            match fixed[t] {
                Some(w) => x[t * nw + w] = 1.0,
                None => {
                    free.push(t);
                    let row = &mut x[t * nw..(t + 1) * nw];
                    match warm {
                        Some(wx) => {
                            row.copy_from_slice(&wx[t * nw..(t + 1) * nw]);
                            let s: f64 = row.iter().sum();
                            if !(s > 0.0) || row.iter().any(|v| *v < 0.0) {
                                row.iter_mut().for_each(|v| *v = 1.0 / nw as f64);
                            } else {
                                row.iter_mut().for_each(|v| *v /= s);
                            }
                        }
                        None => {
                            let best = (0..nw)
                                .min_by(|&a, &b| qp.linear(t, a).total_cmp(&qp.linear(t, b)))
                                .unwrap_or(0);
                            row[best] = 1.0;
                        }
                    }
                }
            }
        }
        let k = h * qp.perception_dim();
        let mut work = Self {
            qp,
            free,
            x,
            m: vec![0.0; k],
            psim: vec![0.0; k],
            grad: vec![0.0; h * nw],
        };
        work.refresh();
        work
    }

    fn stack(&self, x: &[f64], out: &mut [f64]) {
        let (nw, p) = (self.qp.models(), self.qp.perception_dim());
        out.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..self.qp.horizon() {
            for w in 0..nw {
                let xv = x[t * nw + w];
                if xv != 0.0 {
                    let c = self.qp.center(t, w);
                    for r in 0..p {
                        out[t * p + r] += xv * c[r];
                    }
                }
            }
        }
    }

    fn psi_mul(&self, v: &[f64], out: &mut [f64]) {
        let k = v.len();
        let psi = &self.qp.psi;
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..k {
                acc += psi[(i, j)] * v[j];
            }
            *o = acc;
        }
    }

    fn refresh(&mut self) {
        let mut m = std::mem::take(&mut self.m);
        self.stack(&self.x, &mut m);
        let mut psim = std::mem::take(&mut self.psim);
        self.psi_mul(&m, &mut psim);
        self.m = m;
        self.psim = psim;
    }

    pub(crate) fn value(&self) -> f64 {
        let (h, nw) = (self.qp.horizon(), self.qp.models());
        let quad: f64 = self.m.iter().zip(&self.psim).map(|(a, b)| a * b).sum();
        let mut lin = 0.0;
        for t in 0..h {
            for w in 0..nw {
                lin += self.qp.linear(t, w) * self.x[t * nw + w];
            }
        }
        self.qp.alpha * quad + lin
    }

    fn compute_grad(&mut self) {
        let (nw, p) = (self.qp.models(), self.qp.perception_dim());
        let two_alpha = 2.0 * self.qp.alpha;
        for &t in &self.free {
            let ps = &self.psim[t * p..(t + 1) * p];
            for w in 0..nw {
                let c = self.qp.center(t, w);
                let dot: f64 = c.iter().zip(ps).map(|(a, b)| a * b).sum();
                self.grad[t * nw + w] = two_alpha * dot + self.qp.linear(t, w);
            }
        }
    }

    /// Frank-Wolfe gap over the free steps (gradient must be current).
    fn fw_gap(&self) -> f64 {
        let nw = self.qp.models();
        let mut gap = 0.0;
        for &t in &self.free {
            let g = &self.grad[t * nw..(t + 1) * nw];
            let xs = &self.x[t * nw..(t + 1) * nw];
            let min = g.iter().copied().fold(f64::INFINITY, f64::min);
            let dot: f64 = g.iter().zip(xs).map(|(a, b)| a * b).sum();
            gap += (dot - min).max(0.0);
        }
        gap
    }

    /// Runs projected gradient with Barzilai-Borwein steps and exact line
    /// search. Stops once the gap is within `tol`, the bound exceeds `cutoff`,
    /// or `max_iter` is reached.
    pub(crate) fn solve(mut self, tol: f64, cutoff: f64, max_iter: usize) -> Relaxation {
        let (nw, k) = (self.qp.models(), self.m.len());
        let alpha = self.qp.alpha;
        let mut value = self.value();
        let mut best_bound = f64::NEG_INFINITY;
        let mut gap;
        let mut converged = false;
        let mut iterations = 0;
        if self.free.is_empty() {
            return Relaxation {
                bound: value,
                value,
                x: self.x,
                gap: 0.0,
                iterations: 0,
                converged: true,
            };
        }
        // Initial step from a curvature bound.
        let mut max_c2 = 0.0_f64;
        for &t in &self.free {
            let s: f64 = (0..nw).map(|w| self.qp.center(t, w).iter().map(|c| c * c).sum::<f64>()).sum();
            max_c2 = max_c2.max(s);
        }
        let lipschitz = 2.0 * alpha * self.qp.psi_norm() * max_c2;
        let mut step = if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 };
        let step_max = 1e12;
        let step_min = 1e-14;

        let mut d = vec![0.0; nw * self.qp.horizon()];
        let mut md = vec![0.0; k];
        let mut psimd = vec![0.0; k];
        let mut scratch = Vec::with_capacity(nw);
        let mut row = vec![0.0; nw];

        loop {
            self.compute_grad();
            gap = self.fw_gap();
            best_bound = best_bound.max(value - gap);
            if gap <= tol * (1.0 + value.abs()) {
                converged = true;
                break;
            }
            if best_bound > cutoff || iterations >= max_iter {
                break;
            }
            iterations += 1;

            let mut slope = 0.0;
            let mut dnorm2 = 0.0;
            d.iter_mut().for_each(|v| *v = 0.0);
            for &t in &self.free {
                let base = t * nw;
                for w in 0..nw {
                    row[w] = self.x[base + w] - step * self.grad[base + w];
                }
                project_simplex(&mut row, &mut scratch);
                for w in 0..nw {
                    let dv = row[w] - self.x[base + w];
                    d[base + w] = dv;
                    slope += self.grad[base + w] * dv;
                    dnorm2 += dv * dv;
                }
            }
            if dnorm2 == 0.0 || slope >= 0.0 {
                // Projected step made no progress: the step is too small or
                // round-off dominates. Fall back to a Frank-Wolfe direction.
                slope = 0.0;
                dnorm2 = 0.0;
                d.iter_mut().for_each(|v| *v = 0.0);
                for &t in &self.free {
                    let base = t * nw;
                    let g = &self.grad[base..base + nw];
                    let best = (0..nw).min_by(|&a, &b| g[a].total_cmp(&g[b])).unwrap_or(0);
                    for w in 0..nw {
                        let target = if w == best { 1.0 } else { 0.0 };
                        let dv = target - self.x[base + w];
                        d[base + w] = dv;
                        slope += g[w] * dv;
                        dnorm2 += dv * dv;
                    }
                }
                if slope >= 0.0 || dnorm2 == 0.0 {
                    break;
                }
            }
            self.stack(&d, &mut md);
            self.psi_mul(&md, &mut psimd);
            let curv = alpha * md.iter().zip(&psimd).map(|(a, b)| a * b).sum::<f64>();
            let a = if curv > 0.0 { (-slope / (2.0 * curv)).min(1.0) } else { 1.0 };
            for &t in &self.free {
                let base = t * nw;
                for w in 0..nw {
                    self.x[base + w] = (self.x[base + w] + a * d[base + w]).max(0.0);
                }
            }
            for i in 0..k {
                self.m[i] += a * md[i];
                self.psim[i] += a * psimd[i];
            }
            step = if curv > 0.0 {
                (dnorm2 / (2.0 * curv)).clamp(step_min, step_max)
            } else {
                step_max
            };
            if iterations % REFRESH_EVERY == 0 {
                self.refresh();
                value = self.value();
            } else {
                value += a * slope + a * a * curv;
            }
        }
        Relaxation {
            bound: best_bound,
            value,
            x: self.x,
            gap,
            iterations,
            converged,
        }
    }
}

/// Lower bound on every completion of a partial assignment (`fixed[t]` is
/// `Some(w)` for assigned steps).
pub fn relax_lower_bound(qp: &BooleanQp, fixed: &[Option<usize>]) -> Result<f64> {
    if fixed.len() != qp.horizon() {
        return Err(Error::DimensionMismatch(format!(
            "assignment covers {} steps, expected {}",
            fixed.len(),
            qp.horizon()
        )));
    }
    if let Some(w) = fixed.iter().flatten().find(|w| **w >= qp.models()) {
        return Err(Error::IndexOutOfRange(format!("model {w}")));
    }
    if fixed.iter().all(Option::is_some) {
        let c: Vec<usize> = fixed.iter().map(|w| w.unwrap_or(0)).collect();
        return Ok(qp.objective_unchecked(&c));
    }
    let relax = RelaxWork::new(qp, fixed, None).solve(RELAX_TOL, f64::INFINITY, MAX_ITER);
    if !relax.converged {
        return Err(Error::ConvergenceFailure(format!(
            "relaxation gap {:e} after {} iterations",
            relax.gap, relax.iterations
        )));
    }
    Ok(relax.bound)
}

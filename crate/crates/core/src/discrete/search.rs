//! Primal heuristics: per-step greedy start and 1-opt local search.

use super::BooleanQp;

const MAX_PASSES: usize = 100;

struct Incremental<'a> {
    qp: &'a BooleanQp,
    c: Vec<usize>,
    psim: Vec<f64>,
}

impl<'a> Incremental<'a> {
    fn new(qp: &'a BooleanQp, c: Vec<usize>) -> Self {
        let m = qp.stacked_centers(&c);
        let k = m.len();
        let mut psim = vec![0.0; k];
        for (i, o) in psim.iter_mut().enumerate() {
            *o = (0..k).map(|j| qp.psi[(i, j)] * m[j]).sum();
        }
        Self { qp, c, psim }
    }

    /// Objective change from switching step `t` to model `w`.
    fn delta(&self, t: usize, w: usize) -> f64 {
        let qp = self.qp;
        let p = qp.perception_dim();
        let cur = self.c[t];
        if cur == w {
            return 0.0;
        }
        let (a, b) = (qp.center(t, w), qp.center(t, cur));
        let mut quad = 0.0;
        for r in 0..p {
            let dr = a[r] - b[r];
            quad += 2.0 * dr * self.psim[p * t + r];
            for s in 0..p {
                quad += dr * qp.psi[(p * t + r, p * t + s)] * (a[s] - b[s]);
            }
        }
        qp.alpha * quad + qp.linear(t, w) - qp.linear(t, cur)
    }

    fn apply(&mut self, t: usize, w: usize) {
        let qp = self.qp;
        let p = qp.perception_dim();
        let d: Vec<f64> = qp.center(t, w).iter().zip(qp.center(t, self.c[t])).map(|(a, b)| a - b).collect();
        for (i, o) in self.psim.iter_mut().enumerate() {
            for r in 0..p {
                *o += qp.psi[(i, p * t + r)] * d[r];
            }
        }
        self.c[t] = w;
    }
}

/// Improves `start` by single-step model swaps until no swap lowers the
/// objective. Deterministic: scans steps in order and takes the best model
/// per step, lowest index on ties.
pub fn local_search(qp: &BooleanQp, start: Vec<usize>) -> Vec<usize> {
    let mut inc = Incremental::new(qp, start);
    let scale = 1e-13 * (1.0 + qp.objective_unchecked(&inc.c).abs());
    for _ in 0..MAX_PASSES {
        let mut improved = false;
        for t in 0..qp.horizon() {
            let mut best = (0.0, inc.c[t]);
            for w in 0..qp.models() {
                let d = inc.delta(t, w);
                if d < best.0 - scale {
                    best = (d, w);
                }
            }
            if best.1 != inc.c[t] {
                inc.apply(t, best.1);
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    inc.c
}

/// Per-step minimizer of the diagonal contribution, refined by [`local_search`].
pub fn greedy_sequence(qp: &BooleanQp) -> Vec<usize> {
    let p = qp.perception_dim();
    let start: Vec<usize> = (0..qp.horizon())
        .map(|t| {
            let score = |w: usize| {
                let c = qp.center(t, w);
                let mut quad = 0.0;
                for r in 0..p {
                    for s in 0..p {
                        quad += c[r] * qp.psi[(p * t + r, p * t + s)] * c[s];
                    }
                }
                qp.alpha * quad + qp.linear(t, w)
            };
            (0..qp.models()).min_by(|&a, &b| score(a).total_cmp(&score(b))).unwrap_or(0)
        })
        .collect();
    local_search(qp, start)
}

#[cfg(test)]
mod tests {
    use super::super::testing::random_qp;
    use super::super::Mode;
    use super::*;

    #[test]
    fn incremental_delta_matches_full_evaluation() {
        let qp = random_qp(5, 5, 3, 2, Mode::Expected);
        let c = vec![0, 2, 1, 1, 0];
        let inc = Incremental::new(&qp, c.clone());
        let base = qp.objective_unchecked(&c);
        for t in 0..5 {
            for w in 0..3 {
                let mut c2 = c.clone();
                c2[t] = w;
                let want = qp.objective_unchecked(&c2) - base;
                assert!((inc.delta(t, w) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn local_search_never_worsens() {
        for seed in 0..30 {
            let qp = random_qp(seed, 6, 3, 1, Mode::Exact);
            let start = vec![1; 6];
            let out = local_search(&qp, start.clone());
            assert!(qp.objective_unchecked(&out) <= qp.objective_unchecked(&start));
            let g = greedy_sequence(&qp);
            assert_eq!(g.len(), 6);
        }
    }
}

//! Best-first branch-and-bound over whole time steps.
//!
//! Each node fixes the model at a subset of steps. Nodes are bounded by the
//! simplex relaxation (see [`super::relax`]) and expanded on the free step
//! whose relaxed assignment is most fractional, one child per model. A node
//! whose rounded relaxation satisfies a strict first-order condition is
//! closed without branching: for a convex objective that rounded schedule is
//! the unique minimizer of the relaxation, hence of the subtree.
//!
//! Incumbents are compared on `(objective, schedule)` so that exact ties
//! resolve to the lexicographically smallest schedule, matching
//! [`super::solve_exhaustive`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::relax::RelaxWork;
use super::search::{greedy_sequence, local_search};
use super::{BooleanQp, ChoiceSequence, SolveResult, SolveStatus};
use crate::error::{Error, Result};
use crate::psd;

const FREE: u16 = u16::MAX;
/// Relative slack below which two objective values are treated as tied.
const TIE_EPS: f64 = 1e-12;
/// Relative first-order margin required to close a node without branching.
const CERT_MARGIN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnbOptions {
    /// Relative optimality gap at which nodes are pruned.
    pub gap_tol: f64,
    /// Maximum number of evaluated nodes.
    pub node_limit: usize,
    /// Iteration cap of the per-node relaxation solve.
    pub relax_iterations: usize,
}

impl Default for BnbOptions {
    fn default() -> Self {
        Self {
            gap_tol: 0.0,
            node_limit: 200_000,
            relax_iterations: 5_000,
        }
    }
}

/// One evaluated node, for inspecting bound monotonicity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub bound: f64,
}

struct Open {
    bound: f64,
    id: usize,
    fixed: Vec<u16>,
    /// Nonzero relaxed entries `(t * W + w, value)`.
    x: Vec<(u32, f64)>,
    branch_step: usize,
}

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Open {}
impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Open {
    // Reversed so that BinaryHeap pops the smallest (bound, id).
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then_with(|| other.id.cmp(&self.id))
    }
}

struct Search<'a> {
    qp: &'a BooleanQp,
    opts: BnbOptions,
    best: Vec<usize>,
    best_obj: f64,
    pruned_min: f64,
    evaluated: usize,
    next_id: usize,
    tree: Option<Vec<NodeRecord>>,
}

enum Outcome {
    Closed,
    Branch(Open),
}

impl<'a> Search<'a> {
    fn offer(&mut self, c: &[usize]) {
        let obj = self.qp.objective_unchecked(c);
        if obj < self.best_obj || (obj == self.best_obj && c < self.best.as_slice()) {
            self.best_obj = obj;
            self.best.clear();
            self.best.extend_from_slice(c);
        }
    }

    fn threshold(&self) -> f64 {
        let scale = 1.0 + self.best_obj.abs();
        self.best_obj - self.opts.gap_tol * scale + TIE_EPS * scale
    }

    fn prune(&mut self, bound: f64) {
        self.pruned_min = self.pruned_min.min(bound);
    }

    /// Rounded schedule is the unique relaxed minimizer over the free steps.
    fn certified(&self, rounded: &[usize], free: &[usize]) -> bool {
        let qp = self.qp;
        let (nw, p) = (qp.models(), qp.perception_dim());
        let m = qp.stacked_centers(rounded);
        let k = m.len();
        let value = qp.objective_unchecked(rounded);
        let margin = CERT_MARGIN * (1.0 + value.abs());
        for &t in free {
            let mut psim_t = vec![0.0; p];
            for (r, o) in psim_t.iter_mut().enumerate() {
                *o = (0..k).map(|j| qp.psi[(p * t + r, j)] * m[j]).sum();
            }
            let grad = |w: usize| {
                let c = qp.center(t, w);
                2.0 * qp.alpha * c.iter().zip(&psim_t).map(|(a, b)| a * b).sum::<f64>() + qp.linear(t, w)
            };
            let g0 = grad(rounded[t]);
            if (0..nw).any(|w| w != rounded[t] && grad(w) - g0 <= margin) {
                return false;
            }
        }
        true
    }

    fn evaluate(&mut self, fixed: Vec<u16>, warm: Option<&[f64]>, parent_bound: f64, parent: Option<usize>) -> Outcome {
        let qp = self.qp;
        let (h, nw) = (qp.horizon(), qp.models());
        let id = self.next_id;
        self.next_id += 1;
        self.evaluated += 1;

        let assignment: Vec<Option<usize>> =
            fixed.iter().map(|&w| if w == FREE { None } else { Some(w as usize) }).collect();
        let free: Vec<usize> = (0..h).filter(|&t| assignment[t].is_none()).collect();
        if free.is_empty() {
            let c: Vec<usize> = assignment.iter().map(|w| w.unwrap_or(0)).collect();
            let bound = qp.objective_unchecked(&c).max(parent_bound);
            self.record(id, parent, bound);
            self.offer(&c);
            return Outcome::Closed;
        }

        let relax = RelaxWork::new(qp, &assignment, warm).solve(
            super::RELAX_TOL,
            self.threshold(),
            self.opts.relax_iterations,
        );
        let bound = relax.bound.max(parent_bound);
        self.record(id, parent, bound);

        let rounded: Vec<usize> = (0..h)
            .map(|t| match assignment[t] {
                Some(w) => w,
                None => {
                    let row = &relax.x[t * nw..(t + 1) * nw];
                    (0..nw).fold(0, |best, w| if row[w] > row[best] { w } else { best })
                }
            })
            .collect();
        self.offer(&rounded);
        let improved = local_search(qp, rounded.clone());
        self.offer(&improved);

        if bound > self.threshold() {
            self.prune(bound);
            return Outcome::Closed;
        }
        if self.certified(&rounded, &free) {
            return Outcome::Closed;
        }
        let mut branch_step = free[0];
        let mut most = -1.0;
        for &t in &free {
            let top = relax.x[t * nw..(t + 1) * nw].iter().copied().fold(0.0, f64::max);
            let frac = 1.0 - top;
            if frac > most + 1e-12 {
                most = frac;
                branch_step = t;
            }
        }
        let x = relax
            .x
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, v)| (i as u32, *v))
            .collect();
        Outcome::Branch(Open {
            bound,
            id,
            fixed,
            x,
            branch_step,
        })
    }

    fn record(&mut self, id: usize, parent: Option<usize>, bound: f64) {
        if let Some(tree) = self.tree.as_mut() {
            tree.push(NodeRecord { id, parent, bound });
        }
    }
}

fn run(qp: &BooleanQp, opts: &BnbOptions, hints: &[ChoiceSequence], trace: bool) -> Result<(SolveResult, Vec<NodeRecord>)> {
    if qp.models() > FREE as usize {
        return Err(Error::InvalidArgument(format!("at most {} models supported", FREE)));
    }
    let report = psd::psd_check(&qp.psi, 1e-9)?;
    if !report.is_psd {
        return Err(Error::NotConvex {
            min_eigenvalue: report.min_eigenvalue,
        });
    }
    if !(opts.gap_tol >= 0.0) {
        return Err(Error::InvalidArgument("gap_tol must be >= 0".into()));
    }
    let (h, nw) = (qp.horizon(), qp.models());
    let greedy = greedy_sequence(qp);
    let mut search = Search {
        qp,
        opts: *opts,
        best_obj: qp.objective_unchecked(&greedy),
        best: greedy,
        pruned_min: f64::INFINITY,
        evaluated: 0,
        next_id: 0,
        tree: trace.then(Vec::new),
    };
    for hint in hints {
        qp.check_sequence(hint)?;
        search.offer(hint.as_slice());
        let improved = local_search(qp, hint.as_slice().to_vec());
        search.offer(&improved);
    }

    let mut heap = BinaryHeap::new();
    if let Outcome::Branch(node) = search.evaluate(vec![FREE; h], None, f64::NEG_INFINITY, None) {
        heap.push(node);
    }
    let mut dense = vec![0.0; h * nw];
    let mut completed = true;
    while let Some(node) = heap.pop() {
        if node.bound > search.threshold() {
            search.prune(node.bound);
            continue;
        }
        if search.evaluated >= opts.node_limit {
            search.prune(node.bound);
            completed = false;
            break;
        }
        dense.iter_mut().for_each(|v| *v = 0.0);
        for &(i, v) in &node.x {
            dense[i as usize] = v;
        }
        for w in 0..nw {
            let mut fixed = node.fixed.clone();
            fixed[node.branch_step] = w as u16;
            if let Outcome::Branch(child) = search.evaluate(fixed, Some(&dense), node.bound, Some(node.id)) {
                heap.push(child);
            }
        }
    }
    let open_min = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let lower_bound = search.best_obj.min(search.pruned_min).min(open_min);
    let status = if completed {
        SolveStatus::Optimal
    } else {
        SolveStatus::BoundGap(search.best_obj - lower_bound)
    };
    let result = SolveResult {
        sequence: ChoiceSequence::new(search.best),
        objective: search.best_obj,
        lower_bound,
        nodes_explored: search.evaluated,
        status,
    };
    Ok((result, search.tree.unwrap_or_default()))
}

/// Solves the program to optimality (within `gap_tol`) or until the node
/// limit, returning the best schedule found.
pub fn solve_bnb(qp: &BooleanQp, opts: &BnbOptions) -> Result<SolveResult> {
    run(qp, opts, &[], false).map(|(r, _)| r)
}

/// [`solve_bnb`] with extra starting incumbents.
pub fn solve_bnb_seeded(qp: &BooleanQp, opts: &BnbOptions, hints: &[ChoiceSequence]) -> Result<SolveResult> {
    run(qp, opts, hints, false).map(|(r, _)| r)
}

/// [`solve_bnb`] that also returns every evaluated node.
pub fn solve_bnb_traced(qp: &BooleanQp, opts: &BnbOptions) -> Result<(SolveResult, Vec<NodeRecord>)> {
    run(qp, opts, &[], true)
}

use super::{BooleanQp, ChoiceSequence, SolveResult, SolveStatus};
use crate::error::{Error, Result};

/// Largest search space [`solve_exhaustive`] accepts.
pub const EXHAUSTIVE_LIMIT: f64 = 1e6;

/// Enumerates all `W^H` schedules in lexicographic order and keeps the first
/// strict minimum, so ties resolve to the lexicographically smallest schedule.
pub fn solve_exhaustive(qp: &BooleanQp) -> Result<SolveResult> {
    let (h, nw) = (qp.horizon(), qp.models());
    let size = (nw as f64).powi(h as i32);
    if size > EXHAUSTIVE_LIMIT {
        return Err(Error::TooLarge(size));
    }
    let mut c = vec![0usize; h];
    let mut best = c.clone();
    let mut best_obj = qp.objective_unchecked(&c);
    let mut count = 1usize;
    'outer: loop {
        // Odometer increment, last step fastest.
        let mut t = h;
        loop {
            if t == 0 {
                break 'outer;
            }
            t -= 1;
            c[t] += 1;
            if c[t] < nw {
                break;
            }
            c[t] = 0;
        }
        count += 1;
        let obj = qp.objective_unchecked(&c);
        if obj < best_obj {
            best_obj = obj;
            best.copy_from_slice(&c);
        }
    }
    Ok(SolveResult {
        sequence: ChoiceSequence::new(best),
        objective: best_obj,
        lower_bound: best_obj,
        nodes_explored: count,
        status: SolveStatus::Optimal,
    })
}

//! Exhaustive grid search over the allocation box.

use std::cmp::Ordering;

use super::{finish, Evaluator, HCSolution, IterationCounts, Method, SolverError, SolverOptions};
use crate::formulation::HCProblem;

pub const MAX_ORACLE_LOADS: usize = 3;

/// Best feasible point of a `grid_steps^|D|` grid over the box (a 1-D grid
/// for tied problems).
///
/// Grid points are visited in order of decreasing objective, so the first
/// feasible one is the grid optimum; ties go to the lowest grid index.
pub fn brute_force_oracle(
    problem: &HCProblem,
    grid_steps: usize,
    opts: &SolverOptions,
) -> Result<HCSolution, SolverError> {
    let n = problem.n_loads();
    if n > MAX_ORACLE_LOADS {
        return Err(SolverError::TooManyLoads {
            max: MAX_ORACLE_LOADS,
            got: n,
        });
    }
    let steps = grid_steps.max(2);
    let dims = if problem.tie { 1 } else { n };
    let coord = |d: usize, i: usize| {
        let (lo, hi) = (problem.lower[d], problem.upper[d]);
        lo + (hi - lo) * i as f64 / (steps - 1) as f64
    };
    let point = |mut index: usize| -> Vec<f64> {
        if problem.tie {
            return (0..n).map(|d| coord(d, index)).collect();
        }
        (0..n)
            .map(|d| {
                let i = index % steps;
                index /= steps;
                coord(d, i)
            })
            .collect()
    };

    let total = steps.pow(dims as u32);
    let mut ranked: Vec<(f64, usize)> = (0..total).map(|i| (problem.objective_value(&point(i)), i)).collect();
    ranked.sort_by(|a, b| match b.0.total_cmp(&a.0) {
        Ordering::Equal => a.1.cmp(&b.1),
        o => o,
    });

    let ev = Evaluator::new(&problem.feeder, opts);
    if !ev.feasible(&problem.lower) {
        return Err(SolverError::Infeasible(
            "the lower-bound allocation already violates the network limits".into(),
        ));
    }
    for (_, index) in ranked {
        let p = point(index);
        if ev.feasible(&p) {
            return Ok(finish(problem, &ev, p, Method::Grid, IterationCounts::default(), 0.0, true));
        }
    }
    Err(SolverError::Infeasible("no grid point satisfies the network limits".into()))
}

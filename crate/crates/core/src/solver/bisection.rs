//! Bisection along a segment of allocations.

use super::{Evaluator, SolverError, SolverOptions};

/// Points probed before bisecting, used to detect non-monotone feasibility.
const SCAN_POINTS: usize = 16;

fn point(lo: &[f64], hi: &[f64], t: f64) -> Vec<f64> {
    lo.iter().zip(hi).map(|(l, h)| l + t * (h - l)).collect()
}

/// Largest `t ∈ [0, 1]` with `lo + t·(hi − lo)` feasible, returned as the
/// allocation. `None` when feasibility along the segment is not monotone
/// (a feasible probe above an infeasible one).
pub(crate) fn segment_bisection(
    ev: &Evaluator<'_>,
    lo: &[f64],
    hi: &[f64],
    opts: &SolverOptions,
) -> Result<Option<Vec<f64>>, SolverError> {
    if !ev.feasible(lo) {
        return Err(SolverError::Infeasible(
            "zero DG already violates the network limits".into(),
        ));
    }
    let span = lo
        .iter()
        .zip(hi)
        .map(|(l, h)| h - l)
        .fold(0.0, f64::max);
    if span <= 0.0 {
        return Ok(Some(lo.to_vec()));
    }

    let probes: Vec<bool> = (1..=SCAN_POINTS)
        .map(|i| ev.strictly_feasible(&point(lo, hi, i as f64 / SCAN_POINTS as f64)))
        .collect();
    let Some(first_bad) = probes.iter().position(|ok| !ok) else {
        return Ok(Some(hi.to_vec()));
    };
    if probes[first_bad..].iter().any(|ok| *ok) {
        return Ok(None);
    }

    let mut t_ok = first_bad as f64 / SCAN_POINTS as f64;
    let mut t_bad = (first_bad + 1) as f64 / SCAN_POINTS as f64;
    while (t_bad - t_ok) * span >= opts.bisection_tol {
        let mid = 0.5 * (t_ok + t_bad);
        if ev.strictly_feasible(&point(lo, hi, mid)) {
            t_ok = mid;
        } else {
            t_bad = mid;
        }
    }
    let best = point(lo, hi, t_ok);
    if !ev.feasible(&best) {
        return Err(SolverError::NonConvergence(
            "bisection end point failed re-verification".into(),
        ));
    }
    Ok(Some(best))
}

//! Augmented-Lagrangian method over the reduced space of DG injections.
//!
//! Inequalities `c(z) ≥ 0` enter the merit function through the
//! Powell-Hestenes-Rockafellar term
//! `(max(0, λ − μc)² − λ²) / 2μ`; the bound-constrained subproblems are solved
//! by [`super::projected::minimize_box`] with gradients from the power-flow
//! adjoint.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bisection::segment_bisection;
use super::projected::minimize_box;
use super::{finish, Evaluator, HCSolution, IterationCounts, Method, SolverError, SolverOptions};
use crate::formulation::{max_deviation, HCProblem, Objective};
use crate::netmodel::NormalizedFeeder;
use crate::powerflow::{constraint_residuals, residual_ids, ResidualId, SolvedFlow};

const MAX_PENALTY: f64 = 1e10;
/// Penalty grows unless the violation shrinks at least this much per outer step.
const REQUIRED_SHRINK: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Layout {
    /// One variable per load.
    Direct,
    /// A single variable shared by every load.
    Tied,
    /// One variable per load plus the disparity bound `ΔP_max`.
    Disparity,
}

/// Divisor that brings a raw residual to a dimensionless margin.
pub(crate) fn residual_scale(nf: &NormalizedFeeder, id: &ResidualId) -> f64 {
    match *id {
        ResidualId::ThermalFrom(l) | ResidualId::ThermalTo(l) => nf.s_rated[l].powi(2),
        ResidualId::SlackPUpper | ResidualId::SlackPLower => nf.p_exchange_max,
        ResidualId::SlackQUpper | ResidualId::SlackQLower => nf.q_exchange_max,
        _ => 1.0,
    }
}

struct Model<'p, 'e> {
    problem: &'p HCProblem,
    ev: &'p Evaluator<'e>,
    layout: Layout,
    scale: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    n: usize,
}

impl<'p, 'e> Model<'p, 'e> {
    fn new(problem: &'p HCProblem, ev: &'p Evaluator<'e>, layout: Layout) -> Self {
        let nf = &problem.feeder;
        let scale = residual_ids(nf).iter().map(|id| residual_scale(nf, id)).collect();
        let n = problem.n_loads();
        let (zl, zu) = match layout {
            Layout::Direct => (problem.lower.clone(), problem.upper.clone()),
            Layout::Tied => {
                let lo = problem.lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let hi = problem.upper.iter().copied().fold(f64::INFINITY, f64::min);
                (vec![lo], vec![hi])
            }
            Layout::Disparity => {
                let spread = problem
                    .upper
                    .iter()
                    .copied()
                    .fold(0.0, f64::max)
                    - problem.lower.iter().copied().fold(f64::INFINITY, f64::min);
                let mut zl = problem.lower.clone();
                let mut zu = problem.upper.clone();
                zl.push(0.0);
                zu.push(spread.max(0.0));
                (zl, zu)
            }
        };
        Self {
            problem,
            ev,
            layout,
            scale,
            zl,
            zu,
            n,
        }
    }

    fn z_to_p(&self, z: &[f64]) -> Vec<f64> {
        match self.layout {
            Layout::Direct => z.to_vec(),
            Layout::Tied => vec![z[0]; self.n],
            Layout::Disparity => z[..self.n].to_vec(),
        }
    }

    fn p_to_z(&self, p: &[f64]) -> Vec<f64> {
        match self.layout {
            Layout::Direct => p.to_vec(),
            Layout::Tied => vec![p.iter().sum::<f64>() / p.len() as f64],
            Layout::Disparity => {
                let mut z = p.to_vec();
                z.push(max_deviation(p));
                z
            }
        }
    }

    /// Minimisation-form objective and its gradient.
    fn objective(&self, z: &[f64]) -> (f64, Vec<f64>) {
        match (self.layout, self.problem.objective) {
            (Layout::Disparity, Objective::Bargaining { k }) => {
                let total: f64 = z[..self.n].iter().sum();
                let mut g = vec![-k; self.n + 1];
                g[self.n] = 1.0 - k;
                (-(k * total - (1.0 - k) * z[self.n]), g)
            }
            (Layout::Tied, _) => {
                let p = self.z_to_p(z);
                let k = match self.problem.objective {
                    Objective::Sum => 1.0,
                    Objective::Bargaining { k } => k,
                };
                (-self.problem.objective_value(&p), vec![-k * self.n as f64])
            }
            _ => (-z.iter().sum::<f64>(), vec![-1.0; z.len()]),
        }
    }

    /// Scaled network residuals followed by the disparity epigraph rows.
    fn constraints(&self, z: &[f64]) -> Option<(Vec<f64>, SolvedFlow)> {
        let p = self.z_to_p(z);
        let flow = self.ev.flow(&p)?;
        let raw = constraint_residuals(&flow.state, self.ev.nf).to_vec();
        let mut c: Vec<f64> = raw.iter().zip(&self.scale).map(|(r, s)| r / s).collect();
        if self.layout == Layout::Disparity {
            let avg = p.iter().sum::<f64>() / self.n as f64;
            let delta = z[self.n];
            for x in &p {
                c.push(delta - (x - avg));
                c.push(delta + (x - avg));
            }
        }
        Some((c, flow))
    }

    fn n_constraints(&self) -> usize {
        self.scale.len() + if self.layout == Layout::Disparity { 2 * self.n } else { 0 }
    }

    fn merit(&self, z: &[f64], lambda: &[f64], mu: f64) -> Option<(f64, Vec<f64>)> {
        let (f, mut grad) = self.objective(z);
        let (c, flow) = self.constraints(z)?;
        let w: Vec<f64> = lambda
            .iter()
            .zip(&c)
            .map(|(l, ci)| (l - mu * ci).max(0.0))
            .collect();
        let phi = f + w
            .iter()
            .zip(lambda)
            .map(|(wi, li)| (wi * wi - li * li) / (2.0 * mu))
            .sum::<f64>();

        let n_net = self.scale.len();
        let raw_weights: Vec<f64> = w[..n_net].iter().zip(&self.scale).map(|(wi, s)| wi / s).collect();
        let gp = flow
            .residual_gradient(self.ev.nf, &raw_weights, self.ev.q_per_p)
            .ok()?;
        match self.layout {
            Layout::Tied => grad[0] -= gp.iter().sum::<f64>(),
            Layout::Direct | Layout::Disparity => {
                for (g, d) in grad.iter_mut().zip(&gp) {
                    *g -= d;
                }
            }
        }
        if self.layout == Layout::Disparity {
            let lin = &w[n_net..];
            let a: Vec<f64> = (0..self.n).map(|d| lin[2 * d + 1] - lin[2 * d]).collect();
            let a_mean = a.iter().sum::<f64>() / self.n as f64;
            for k in 0..self.n {
                grad[k] -= a[k] - a_mean;
            }
            grad[self.n] -= lin.iter().sum::<f64>();
        }
        Some((phi, grad))
    }
}

struct Run {
    p: Vec<f64>,
    converged: bool,
    kkt: f64,
    outer: usize,
    inner: usize,
}

fn run_from(model: &Model<'_, '_>, z0: Vec<f64>, opts: &SolverOptions) -> Option<Run> {
    let m = model.n_constraints();
    let mut lambda = vec![0.0; m];
    let mut mu = opts.initial_penalty;
    let mut z = z0;
    let mut prev_violation = f64::INFINITY;
    let mut run = Run {
        p: Vec::new(),
        converged: false,
        kkt: f64::INFINITY,
        outer: 0,
        inner: 0,
    };
    let inner_tol = 0.5 * opts.opt_tol;

    for _ in 0..opts.max_outer {
        run.outer += 1;
        let Some(res) = minimize_box(
            |z| model.merit(z, &lambda, mu),
            &z,
            &model.zl,
            &model.zu,
            inner_tol,
            opts.max_inner,
        ) else {
            break;
        };
        run.inner += res.iterations;
        z = res.x;
        let Some((c, _)) = model.constraints(&z) else {
            break;
        };
        // infeasibility and complementarity in one measure: |min(c, λ/μ)|
        let violation = c
            .iter()
            .zip(&lambda)
            .fold(0.0_f64, |acc, (ci, li)| acc.max(ci.min(li / mu).abs()));
        for (l, ci) in lambda.iter_mut().zip(&c) {
            *l = (*l - mu * ci).max(0.0);
        }
        run.kkt = violation.max(res.projected_gradient);
        log::trace!(
            "outer {}: violation {:.3e}, projected gradient {:.3e}, penalty {:.1e}",
            run.outer,
            violation,
            res.projected_gradient,
            mu
        );
        if violation <= opts.tol && res.projected_gradient <= opts.opt_tol {
            run.converged = true;
            break;
        }
        if violation > REQUIRED_SHRINK * prev_violation {
            mu = (mu * opts.penalty_growth).min(MAX_PENALTY);
        }
        prev_violation = violation;
    }
    run.p = model.z_to_p(&z);
    Some(run)
}

/// Moves `p` toward the feasible `anchor` until every limit holds.
fn restore(ev: &Evaluator<'_>, anchor: &[f64], p: &[f64]) -> Vec<f64> {
    let at = |t: f64| -> Vec<f64> { anchor.iter().zip(p).map(|(a, x)| a + t * (x - a)).collect() };
    let (mut ok, mut bad) = (0.0, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (ok + bad);
        if ev.feasible(&at(mid)) {
            ok = mid;
        } else {
            bad = mid;
        }
    }
    at(ok)
}

fn starting_points(problem: &HCProblem, ev: &Evaluator<'_>, opts: &SolverOptions) -> Result<Vec<Vec<f64>>, SolverError> {
    let (lo, hi) = (&problem.lower, &problem.upper);
    let mut starts = vec![lo.clone()];
    let egal = match problem.reference_egal {
        Some(pe) => Some(lo.iter().zip(hi).map(|(l, h)| pe.clamp(*l, *h)).collect()),
        None => segment_bisection(ev, lo, hi, opts)?,
    };
    let mid: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
    starts.push(egal.unwrap_or_else(|| mid.clone()));
    starts.push(mid);
    // random directions from the lower bound, cut back to the feasibility
    // boundary so that every extra start is a distinct boundary point
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    while starts.len() < opts.starts {
        let far: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| if h > l { rng.gen_range(*l..=*h) } else { *l }).collect();
        let start = match segment_bisection(ev, lo, &far, opts) {
            Ok(Some(p)) => p,
            _ => far,
        };
        starts.push(start);
    }
    starts.truncate(opts.starts.max(1));
    // single-load boundary points: one load pushed to its limit, the rest at
    // their lower bound
    for i in 0..lo.len() {
        if hi[i] <= lo[i] {
            continue;
        }
        let mut far = lo.clone();
        far[i] = hi[i];
        if let Ok(Some(p)) = segment_bisection(ev, lo, &far, opts) {
            starts.push(p);
        }
    }
    Ok(starts)
}

pub(crate) fn solve(
    problem: &HCProblem,
    ev: &Evaluator<'_>,
    opts: &SolverOptions,
    layout: Layout,
) -> Result<HCSolution, SolverError> {
    let model = Model::new(problem, ev, layout);
    let starts = starting_points(problem, ev, opts)?;

    // (allocation, objective, converged, kkt)
    let mut best: Option<(Vec<f64>, f64, bool, f64)> = None;
    let mut consider = |p: Vec<f64>, converged: bool, kkt: f64| {
        let obj = problem.objective_value(&p);
        let better = match &best {
            None => true,
            Some((_, b, bc, _)) => {
                // objectives this close count as ties, settled by convergence
                let tie = opts.tol * b.abs().max(1.0);
                if converged != *bc && (obj - b).abs() <= tie {
                    converged
                } else {
                    obj > b + 1e-12
                }
            }
        };
        if better {
            best = Some((p, obj, converged, kkt));
        }
    };

    let mut counts = IterationCounts::default();
    for p0 in starts {
        let p0 = model.z_to_p(&model.p_to_z(&p0));
        let feasible_start = ev.feasible(&p0);
        if feasible_start {
            consider(p0.clone(), false, f64::INFINITY);
        }
        let Some(run) = run_from(&model, model.p_to_z(&p0), opts) else {
            continue;
        };
        counts.outer += run.outer;
        counts.inner += run.inner;
        let p = if ev.feasible(&run.p) {
            run.p
        } else {
            let anchor = if feasible_start { &p0 } else { &problem.lower };
            restore(ev, anchor, &run.p)
        };
        if ev.feasible(&p) {
            consider(p, run.converged, run.kkt);
        }
    }

    let (p, _, converged, kkt) = best.ok_or_else(|| {
        SolverError::NonConvergence("no feasible point found from any start".into())
    })?;
    Ok(finish(problem, ev, p, Method::AugmentedLagrangian, counts, kkt, converged))
}

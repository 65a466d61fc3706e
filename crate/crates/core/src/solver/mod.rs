//! Hosting-capacity solvers.
//!
//! The network equations are embedded as an implicit map from DG injections
//! to operating point, so every solver works in the reduced space of one
//! variable per load (plus the disparity variable for bargaining):
//!
//! * egalitarian problems (and any one-load problem) are solved by bisection
//!   on the uniform injection;
//! * everything else goes through an augmented-Lagrangian method whose inner
//!   problem is a bound-constrained quasi-Newton solve driven by adjoint
//!   gradients;
//! * [`brute_force_oracle`] enumerates a grid for small feeders and is used to
//!   cross-check the other two.

mod al;
mod bisection;
mod oracle;
mod projected;

use std::cell::Cell;

use serde::Serialize;
use thiserror::Error;

use crate::formulation::{build_problem, max_deviation, FairnessPolicy, FormulationError, HCProblem, Objective};
use crate::netmodel::NormalizedFeeder;
use crate::powerflow::{
    constraint_residuals, residual_ids, solve_power_flow_with, PowerFlowError, PowerFlowOptions, SolvedFlow,
};

pub use oracle::{brute_force_oracle, MAX_ORACLE_LOADS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("brute-force oracle supports at most {max} loads, got {got}")]
    TooManyLoads { max: usize, got: usize },
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Largest accepted constraint violation (scaled residuals).
    pub tol: f64,
    /// Stationarity tolerance on the projected gradient of the Lagrangian.
    pub opt_tol: f64,
    /// Raw residual slack tolerated when certifying feasibility, pu.
    pub feas_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Number of starting points; the first three are deterministic. One
    /// single-load boundary start per load is always added on top.
    pub starts: usize,
    /// Seed for starting points beyond the third.
    pub seed: u64,
    /// Grid points per dimension of the brute-force oracle.
    pub grid_steps: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    /// Bisection stops once the bracket is narrower than this, pu.
    pub bisection_tol: f64,
    /// DG reactive output per unit of active output (0 = unity power factor).
    pub dg_q_per_p: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            opt_tol: 1e-5,
            feas_tol: 1e-6,
            max_outer: 50,
            max_inner: 200,
            starts: 3,
            seed: 0,
            grid_steps: 201,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            bisection_tol: 1e-6,
            dg_q_per_p: 0.0,
        }
    }
}

impl SolverOptions {
    /// Reactive-per-active ratio for a fixed absorbing power factor.
    pub fn q_per_p_for_power_factor(pf: f64) -> f64 {
        -(1.0 - pf * pf).sqrt() / pf
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
    Failed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IterationCounts {
    pub outer: usize,
    pub inner: usize,
    pub power_flows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bisection,
    AugmentedLagrangian,
    FixedPoint,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HCSolution {
    /// Per-load DG allocation, kW.
    pub allocation: Vec<f64>,
    #[serde(skip)]
    pub allocation_pu: Vec<f64>,
    /// Σ allocation, kW.
    pub hc_total: f64,
    pub policy: FairnessPolicy,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    pub binding: Vec<String>,
    pub iterations: IterationCounts,
    /// Largest deviation from the mean allocation, kW (bargaining only).
    pub disparity: Option<f64>,
    /// Objective value in per-unit.
    pub objective: f64,
    pub method: Method,
}

impl HCSolution {
    pub fn hc_total_pu(&self) -> f64 {
        self.allocation_pu.iter().sum()
    }
}

/// Embedded power flow plus bookkeeping shared by every solver.
pub(crate) struct Evaluator<'a> {
    pub nf: &'a NormalizedFeeder,
    pub q_per_p: f64,
    pub feas_tol: f64,
    pf_opts: PowerFlowOptions,
    pub count: Cell<usize>,
}

impl<'a> Evaluator<'a> {
    pub fn new(nf: &'a NormalizedFeeder, opts: &SolverOptions) -> Self {
        Self {
            nf,
            q_per_p: opts.dg_q_per_p,
            feas_tol: opts.feas_tol,
            pf_opts: PowerFlowOptions::default(),
            count: Cell::new(0),
        }
    }

    pub fn flow(&self, p: &[f64]) -> Option<SolvedFlow> {
        self.count.set(self.count.get() + 1);
        let q: Vec<f64> = p.iter().map(|x| x * self.q_per_p).collect();
        solve_power_flow_with(self.nf, p, &q, &self.pf_opts).ok()
    }

    pub fn residuals(&self, p: &[f64]) -> Option<Vec<f64>> {
        self.flow(p)
            .map(|s| constraint_residuals(&s.state, self.nf).to_vec())
    }

    pub fn feasible(&self, p: &[f64]) -> bool {
        self.residuals(p)
            .is_some_and(|r| r.iter().all(|x| *x >= -self.feas_tol))
    }

    /// Feasibility without any slack on the residuals.
    pub fn strictly_feasible(&self, p: &[f64]) -> bool {
        self.residuals(p).is_some_and(|r| r.iter().all(|x| *x >= 0.0))
    }
}

/// Solves `problem`, dispatching on its structure.
pub fn solve_hc(problem: &HCProblem, opts: &SolverOptions) -> Result<HCSolution, SolverError> {
    let ev = Evaluator::new(&problem.feeder, opts);
    let n = problem.n_loads();
    if n == 0 {
        return Err(FormulationError::NoLoads.into());
    }
    if !ev.feasible(&problem.lower) {
        return Err(SolverError::Infeasible(
            "the lower-bound allocation already violates the network limits".into(),
        ));
    }

    let degenerate_bargain = matches!(problem.objective, Objective::Bargaining { k } if k == 0.0);
    if problem.tie || degenerate_bargain {
        // K = 0 is optimised by any uniform allocation; report the largest one
        return match bisection::segment_bisection(&ev, &problem.lower, &problem.upper, opts)? {
            Some(point) => Ok(finish(problem, &ev, point, Method::Bisection, IterationCounts::default(), 0.0, true)),
            None => {
                log::warn!("uniform injection is not monotone in feasibility; falling back to the augmented Lagrangian");
                al::solve(problem, &ev, opts, al::Layout::Tied)
            }
        };
    }

    if problem.lower.iter().zip(&problem.upper).all(|(l, u)| l == u) {
        let p = problem.lower.clone();
        return Ok(finish(problem, &ev, p, Method::FixedPoint, IterationCounts::default(), 0.0, true));
    }

    let monotone_objective = match problem.objective {
        Objective::Sum => true,
        Objective::Bargaining { k } => k > 0.0,
    };
    if n == 1 && monotone_objective {
        if let Some(point) = bisection::segment_bisection(&ev, &problem.lower, &problem.upper, opts)? {
            return Ok(finish(problem, &ev, point, Method::Bisection, IterationCounts::default(), 0.0, true));
        }
    }

    let layout = match problem.objective {
        Objective::Sum => al::Layout::Direct,
        Objective::Bargaining { .. } => al::Layout::Disparity,
    };
    al::solve(problem, &ev, opts, layout)
}

/// Largest uniform per-load injection that keeps every limit satisfied.
pub fn solve_egalitarian_bisection(feeder: &NormalizedFeeder, opts: &SolverOptions) -> Result<HCSolution, SolverError> {
    let problem = build_problem(feeder, FairnessPolicy::Egalitarian, None)?;
    solve_hc(&problem, opts)
}

/// Augmented-Lagrangian solve regardless of the problem's structure.
pub fn solve_nlp_al(problem: &HCProblem, opts: &SolverOptions) -> Result<HCSolution, SolverError> {
    let ev = Evaluator::new(&problem.feeder, opts);
    if !ev.feasible(&problem.lower) {
        return Err(SolverError::Infeasible(
            "the lower-bound allocation already violates the network limits".into(),
        ));
    }
    let layout = if problem.tie {
        al::Layout::Tied
    } else {
        match problem.objective {
            Objective::Sum => al::Layout::Direct,
            Objective::Bargaining { .. } => al::Layout::Disparity,
        }
    };
    al::solve(problem, &ev, opts, layout)
}

/// Residual ids within this scaled margin of their limit are reported as binding.
const BINDING_MARGIN: f64 = 1e-4;

pub(crate) fn finish(
    problem: &HCProblem,
    ev: &Evaluator<'_>,
    p: Vec<f64>,
    method: Method,
    mut iterations: IterationCounts,
    kkt_residual: f64,
    converged: bool,
) -> HCSolution {
    let nf = &problem.feeder;
    let s_base = nf.s_base();
    let mut binding = Vec::new();
    if let Some(res) = ev.residuals(&p) {
        for (id, r) in residual_ids(nf).iter().zip(res) {
            let scale = al::residual_scale(nf, id);
            if r / scale <= BINDING_MARGIN {
                binding.push(id.label(nf));
            }
        }
    }
    let feeder = nf.feeder();
    for (d, &x) in p.iter().enumerate() {
        let bus = &feeder.buses()[nf.load_bus[d]].id;
        if problem.lower[d] < problem.upper[d] {
            if x >= problem.upper[d] - 1e-7 {
                binding.push(format!("dg_upper[{bus}]"));
            } else if x <= problem.lower[d] + 1e-7 {
                binding.push(format!("dg_lower[{bus}]"));
            }
        }
    }
    iterations.power_flows = ev.count.get();
    let allocation: Vec<f64> = p.iter().map(|x| x * s_base).collect();
    let disparity = matches!(problem.objective, Objective::Bargaining { .. }).then(|| max_deviation(&p) * s_base);
    HCSolution {
        hc_total: allocation.iter().sum(),
        allocation,
        objective: problem.objective_value(&p),
        allocation_pu: p,
        policy: problem.policy,
        status: if converged {
            SolveStatus::Optimal
        } else {
            SolveStatus::MaxIter
        },
        kkt_residual,
        binding,
        iterations,
        disparity,
        method,
    }
}

#[cfg(test)]
mod tests;

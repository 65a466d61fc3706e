//! Fairness policies and their mapping onto the hosting-capacity problem:
//! per-load DG bounds, the egalitarian tie and the objective.

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::netmodel::NormalizedFeeder;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormulationError {
    #[error("bounded policy needs the egalitarian and utilitarian reference solutions")]
    MissingReference,
    #[error("parameter `{name}` = {value} is outside [0, 1]")]
    ParameterOutOfRange { name: &'static str, value: f64 },
    #[error("invalid policy `{0}`")]
    Syntax(String),
    #[error("feeder has no loads to host DG")]
    NoLoads,
    #[error("reference allocation has {got} entries, feeder has {expected} loads")]
    ReferenceLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FairnessPolicy {
    Utilitarian,
    Egalitarian,
    /// Per-load box `[α·P_egal, P_egal + β·(max P_uti − P_egal)]`.
    Bounded { alpha: f64, beta: f64 },
    /// Maximise `K·ΣP − (1−K)·ΔP_max`.
    Bargaining { k: f64 },
}

impl FairnessPolicy {
    pub fn validate(&self) -> Result<(), FormulationError> {
        let check = |name, value: f64| {
            if (0.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(FormulationError::ParameterOutOfRange { name, value })
            }
        };
        match *self {
            FairnessPolicy::Bounded { alpha, beta } => {
                check("alpha", alpha)?;
                check("beta", beta)
            }
            FairnessPolicy::Bargaining { k } => check("k", k),
            _ => Ok(()),
        }
    }

    pub fn needs_references(&self) -> bool {
        matches!(self, FairnessPolicy::Bounded { .. })
    }
}

impl fmt::Display for FairnessPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FairnessPolicy::Utilitarian => write!(f, "utilitarian"),
            FairnessPolicy::Egalitarian => write!(f, "egalitarian"),
            FairnessPolicy::Bounded { alpha, beta } => write!(f, "bounded:alpha={alpha},beta={beta}"),
            FairnessPolicy::Bargaining { k } => write!(f, "bargaining:k={k}"),
        }
    }
}

impl Serialize for FairnessPolicy {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl FromStr for FairnessPolicy {
    type Err = FormulationError;

    /// `utilitarian | egalitarian | bounded:alpha=A,beta=B | bargaining:k=K`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let syntax = || FormulationError::Syntax(s.to_owned());
        let (name, params) = match s.split_once(':') {
            Some((n, p)) => (n.trim(), Some(p)),
            None => (s.trim(), None),
        };
        let mut alpha = None;
        let mut beta = None;
        let mut k = None;
        for kv in params.into_iter().flat_map(|p| p.split(',')) {
            let (key, val) = kv.split_once('=').ok_or_else(syntax)?;
            let val: f64 = val.trim().parse().map_err(|_| syntax())?;
            let slot = match key.trim() {
                "alpha" => &mut alpha,
                "beta" => &mut beta,
                "k" | "K" => &mut k,
                _ => return Err(syntax()),
            };
            if slot.replace(val).is_some() {
                return Err(syntax());
            }
        }
        let policy = match (name, alpha, beta, k) {
            ("utilitarian", None, None, None) => FairnessPolicy::Utilitarian,
            ("egalitarian", None, None, None) => FairnessPolicy::Egalitarian,
            ("bounded", Some(alpha), Some(beta), None) => FairnessPolicy::Bounded { alpha, beta },
            ("bargaining", None, None, Some(k)) => FairnessPolicy::Bargaining { k },
            _ => return Err(syntax()),
        };
        policy.validate()?;
        Ok(policy)
    }
}

/// Solutions a bounded policy is defined relative to, in per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct References {
    /// Uniform per-load allocation of the egalitarian solution.
    pub p_egal: f64,
    /// Utilitarian allocation, one entry per load.
    pub uti_allocation: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// `ΣP_d`.
    Sum,
    /// `K·ΣP_d − (1−K)·ΔP_max` with `ΔP_max ≥ |P_d − P_avg|`.
    Bargaining { k: f64 },
}

#[derive(Debug, Clone)]
pub struct HCProblem {
    pub feeder: NormalizedFeeder,
    pub policy: FairnessPolicy,
    /// Per-load lower bound, pu.
    pub lower: Vec<f64>,
    /// Per-load upper bound, pu.
    pub upper: Vec<f64>,
    /// All loads share one DG value.
    pub tie: bool,
    pub objective: Objective,
    pub reference_egal: Option<f64>,
    pub reference_uti: Option<Vec<f64>>,
}

pub fn build_problem(
    feeder: &NormalizedFeeder,
    policy: FairnessPolicy,
    refs: Option<&References>,
) -> Result<HCProblem, FormulationError> {
    policy.validate()?;
    let n = feeder.n_loads();
    if n == 0 {
        return Err(FormulationError::NoLoads);
    }
    if let Some(r) = refs {
        if r.uti_allocation.len() != n {
            return Err(FormulationError::ReferenceLength {
                expected: n,
                got: r.uti_allocation.len(),
            });
        }
    }
    let cap = feeder.dg_cap;
    let mut problem = HCProblem {
        feeder: feeder.clone(),
        policy,
        lower: vec![0.0; n],
        upper: vec![cap; n],
        tie: false,
        objective: Objective::Sum,
        reference_egal: refs.map(|r| r.p_egal),
        reference_uti: refs.map(|r| r.uti_allocation.clone()),
    };
    match policy {
        FairnessPolicy::Utilitarian => {}
        FairnessPolicy::Egalitarian => problem.tie = true,
        FairnessPolicy::Bounded { alpha, beta } => {
            let r = refs.ok_or(FormulationError::MissingReference)?;
            // the egalitarian point must stay inside the box
            let max_uti = r.uti_allocation.iter().copied().fold(r.p_egal, f64::max);
            let lo = alpha * r.p_egal;
            let hi = r.p_egal + beta * (max_uti - r.p_egal);
            problem.lower = vec![lo; n];
            problem.upper = vec![hi; n];
        }
        FairnessPolicy::Bargaining { k } => problem.objective = Objective::Bargaining { k },
    }
    Ok(problem)
}

/// `max_d |p_d − mean(p)|`.
pub fn max_deviation(p: &[f64]) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    let avg = p.iter().sum::<f64>() / p.len() as f64;
    p.iter().fold(0.0, |acc, x| acc.max((x - avg).abs()))
}

impl HCProblem {
    pub fn n_loads(&self) -> usize {
        self.lower.len()
    }

    /// Objective at `p` with the disparity variable at its smallest feasible
    /// value.
    pub fn objective_value(&self, p: &[f64]) -> f64 {
        let total: f64 = p.iter().sum();
        match self.objective {
            Objective::Sum => total,
            Objective::Bargaining { k } => k * total - (1.0 - k) * max_deviation(p),
        }
    }

    pub fn in_box(&self, p: &[f64], tol: f64) -> bool {
        let inside = p
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (lo, hi))| *x >= lo - tol && *x <= hi + tol);
        let tied = !self.tie || p.iter().all(|x| (x - p[0]).abs() <= tol);
        inside && tied
    }
}

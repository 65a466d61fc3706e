//! Hosting capacity of radial low-voltage feeders under fairness policies.

// negated float comparisons double as NaN rejection
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod fixtures;
pub mod formulation;
pub mod kpi;
pub mod netmodel;
pub mod pareto;
pub mod powerflow;
pub mod solver;
pub mod synth;

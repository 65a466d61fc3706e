//! Polar-form AC power flow for radial feeders, operational-limit residuals
//! and their adjoint sensitivities with respect to DG injections.
//!
//! Line flows use the series admittance `y = g + jb` of each line:
//!
//! ```text
//! P_mn =  g V_m² - V_m V_n (g cos θ_mn + b sin θ_mn)
//! Q_mn = -b V_m² - V_m V_n (g sin θ_mn - b cos θ_mn)
//! ```
//!
//! and every non-slack bus balances `Σ_n P_mn = P_DG - P_D` (likewise for Q).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::netmodel::NormalizedFeeder;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e} pu)")]
    NonConvergence { iterations: usize, mismatch: f64 },
    #[error("singular power-flow jacobian")]
    SingularJacobian,
    #[error("expected {expected} injections, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("injections must be finite")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowOptions {
    /// Infinity-norm bound on the nodal power mismatch, pu.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iter: 50,
        }
    }
}

/// Converged operating point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerFlowState {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Sending-end flow measured at `from` toward `to`.
    pub p_flow: Vec<f64>,
    pub q_flow: Vec<f64>,
    /// Flow measured at `to` toward `from`.
    pub p_flow_rev: Vec<f64>,
    pub q_flow_rev: Vec<f64>,
    /// Exchange with the upstream grid, positive when importing.
    pub p_slack: f64,
    pub q_slack: f64,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowState {
    /// Active losses summed over all lines.
    pub fn losses(&self) -> f64 {
        self.p_flow.iter().zip(&self.p_flow_rev).map(|(a, b)| a + b).sum()
    }
}

/// Flow on one line end and its partial derivatives with respect to
/// `[V_m, V_n, θ_m, θ_n]`.
#[derive(Debug, Clone, Copy)]
struct BranchFlow {
    p: f64,
    q: f64,
    dp: [f64; 4],
    dq: [f64; 4],
}

fn branch_flow(g: f64, b: f64, vm: f64, vn: f64, tm: f64, tn: f64) -> BranchFlow {
    let (s, c) = (tm - tn).sin_cos();
    let gc_bs = g * c + b * s;
    let gs_bc = g * s - b * c;
    let vv = vm * vn;
    BranchFlow {
        p: g * vm * vm - vv * gc_bs,
        q: -b * vm * vm - vv * gs_bc,
        dp: [2.0 * g * vm - vn * gc_bs, -vm * gc_bs, vv * gs_bc, -vv * gs_bc],
        dq: [-2.0 * b * vm - vn * gs_bc, -vm * gs_bc, -vv * gc_bs, vv * gc_bs],
    }
}

/// Maps buses onto rows/columns of the reduced (non-slack) system.
struct Layout {
    /// Position of each bus among the unknowns, `None` for the slack.
    pos: Vec<Option<usize>>,
    m: usize,
}

impl Layout {
    fn new(nf: &NormalizedFeeder) -> Self {
        let mut pos = vec![None; nf.n_buses()];
        let mut m = 0;
        for (i, p) in pos.iter_mut().enumerate() {
            if i != nf.slack {
                *p = Some(m);
                m += 1;
            }
        }
        Self { pos, m }
    }

    /// Column of `[V_m, V_n, θ_m, θ_n]` for a line `m -> n`.
    fn cols(&self, m: usize, n: usize) -> [Option<usize>; 4] {
        let (pm, pn) = (self.pos[m], self.pos[n]);
        [
            pm.map(|k| self.m + k),
            pn.map(|k| self.m + k),
            pm,
            pn,
        ]
    }
}

fn net_injections(nf: &NormalizedFeeder, dg: &[f64], dg_q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut p = vec![0.0; nf.n_buses()];
    let mut q = vec![0.0; nf.n_buses()];
    for (d, &bus) in nf.load_bus.iter().enumerate() {
        p[bus] += dg[d] - nf.p_demand[d];
        q[bus] += dg_q[d] - nf.q_demand[d];
    }
    (p, q)
}

/// Nodal mismatch `F(x)`; with `jac` the jacobian is assembled as well.
fn mismatch(
    nf: &NormalizedFeeder,
    layout: &Layout,
    v: &[f64],
    theta: &[f64],
    inj_p: &[f64],
    inj_q: &[f64],
    mut jac: Option<&mut DMatrix<f64>>,
) -> DVector<f64> {
    let m = layout.m;
    let mut f = DVector::zeros(2 * m);
    for (i, pos) in layout.pos.iter().enumerate() {
        if let Some(k) = pos {
            f[*k] = -inj_p[i];
            f[m + k] = -inj_q[i];
        }
    }
    if let Some(j) = jac.as_deref_mut() {
        j.fill(0.0);
    }
    for l in 0..nf.n_lines() {
        let (a, c) = (nf.line_from[l], nf.line_to[l]);
        for (from, to) in [(a, c), (c, a)] {
            let Some(row) = layout.pos[from] else { continue };
            let fl = branch_flow(nf.g[l], nf.b[l], v[from], v[to], theta[from], theta[to]);
            f[row] += fl.p;
            f[m + row] += fl.q;
            if let Some(j) = jac.as_deref_mut() {
                for (k, col) in layout.cols(from, to).iter().enumerate() {
                    if let Some(col) = *col {
                        j[(row, col)] += fl.dp[k];
                        j[(m + row, col)] += fl.dq[k];
                    }
                }
            }
        }
    }
    f
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// A converged flow together with the jacobian factorization needed for
/// sensitivities.
pub struct SolvedFlow {
    pub state: PowerFlowState,
    layout: Layout,
    jacobian: DMatrix<f64>,
}

pub fn solve_power_flow(
    nf: &NormalizedFeeder,
    dg: &[f64],
    dg_q: &[f64],
) -> Result<PowerFlowState, PowerFlowError> {
    solve_power_flow_with(nf, dg, dg_q, &PowerFlowOptions::default()).map(|s| s.state)
}

/// Newton-Raphson from a flat start.
pub fn solve_power_flow_with(
    nf: &NormalizedFeeder,
    dg: &[f64],
    dg_q: &[f64],
    opts: &PowerFlowOptions,
) -> Result<SolvedFlow, PowerFlowError> {
    let n_loads = nf.n_loads();
    for len in [dg.len(), dg_q.len()] {
        if len != n_loads {
            return Err(PowerFlowError::DimensionMismatch {
                expected: n_loads,
                got: len,
            });
        }
    }
    if dg.iter().chain(dg_q).any(|x| !x.is_finite()) {
        return Err(PowerFlowError::NonFinite);
    }

    let layout = Layout::new(nf);
    let m = layout.m;
    let (inj_p, inj_q) = net_injections(nf, dg, dg_q);
    let mut v = vec![1.0; nf.n_buses()];
    let mut theta = vec![0.0; nf.n_buses()];
    let mut jac = DMatrix::zeros(2 * m, 2 * m);

    let mut iterations = 0;
    loop {
        let f = mismatch(nf, &layout, &v, &theta, &inj_p, &inj_q, Some(&mut jac));
        let norm = inf_norm(&f);
        if !norm.is_finite() {
            return Err(PowerFlowError::NonConvergence {
                iterations,
                mismatch: norm,
            });
        }
        if norm < opts.tolerance {
            // `jac` was assembled at the converged point
            let state = finish(nf, &layout, v, theta, &inj_p, &inj_q, iterations, norm);
            return Ok(SolvedFlow {
                state,
                layout,
                jacobian: jac,
            });
        }
        if iterations == opts.max_iter {
            return Err(PowerFlowError::NonConvergence {
                iterations,
                mismatch: norm,
            });
        }
        let dx = jac
            .clone()
            .lu()
            .solve(&(-f))
            .ok_or(PowerFlowError::SingularJacobian)?;
        for (i, pos) in layout.pos.iter().enumerate() {
            if let Some(k) = pos {
                theta[i] += dx[*k];
                v[i] += dx[m + k];
            }
        }
        iterations += 1;
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    nf: &NormalizedFeeder,
    layout: &Layout,
    v: Vec<f64>,
    theta: Vec<f64>,
    inj_p: &[f64],
    inj_q: &[f64],
    iterations: usize,
    norm: f64,
) -> PowerFlowState {
    let nl = nf.n_lines();
    let mut st = PowerFlowState {
        p_flow: Vec::with_capacity(nl),
        q_flow: Vec::with_capacity(nl),
        p_flow_rev: Vec::with_capacity(nl),
        q_flow_rev: Vec::with_capacity(nl),
        p_slack: -inj_p[nf.slack],
        q_slack: -inj_q[nf.slack],
        iterations,
        max_mismatch: norm,
        v: Vec::new(),
        theta: Vec::new(),
    };
    for l in 0..nl {
        let (a, c) = (nf.line_from[l], nf.line_to[l]);
        let fwd = branch_flow(nf.g[l], nf.b[l], v[a], v[c], theta[a], theta[c]);
        let rev = branch_flow(nf.g[l], nf.b[l], v[c], v[a], theta[c], theta[a]);
        st.p_flow.push(fwd.p);
        st.q_flow.push(fwd.q);
        st.p_flow_rev.push(rev.p);
        st.q_flow_rev.push(rev.q);
        if a == nf.slack {
            st.p_slack += fwd.p;
            st.q_slack += fwd.q;
        } else if c == nf.slack {
            st.p_slack += rev.p;
            st.q_slack += rev.q;
        }
    }
    debug_assert_eq!(layout.pos[nf.slack], None);
    st.v = v;
    st.theta = theta;
    st
}

// ---------------------------------------------------------------------------
// Residuals
// ---------------------------------------------------------------------------

/// Limit-minus-value margins; every entry is non-negative at a feasible point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintResiduals {
    pub v_upper: Vec<f64>,
    pub v_lower: Vec<f64>,
    /// `S_rated² - (P_mn² + Q_mn²)` at the `from` end.
    pub thermal_from: Vec<f64>,
    /// Same at the `to` end.
    pub thermal_to: Vec<f64>,
    /// `[P_max - P, P + P_max]`.
    pub slack_p: [f64; 2],
    pub slack_q: [f64; 2],
    /// `Δθ_max - (θ_from - θ_to)`.
    pub angle_upper: Vec<f64>,
    /// `(θ_from - θ_to) - Δθ_min`.
    pub angle_lower: Vec<f64>,
}

/// Identifies one entry of the flattened residual vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualId {
    VUpper(usize),
    VLower(usize),
    ThermalFrom(usize),
    ThermalTo(usize),
    SlackPUpper,
    SlackPLower,
    SlackQUpper,
    SlackQLower,
    AngleUpper(usize),
    AngleLower(usize),
}

impl ResidualId {
    pub fn label(&self, nf: &NormalizedFeeder) -> String {
        let bus = |i: usize| nf.feeder().buses()[i].id.clone();
        let line = |l: usize| {
            let ln = &nf.feeder().lines()[l];
            format!("{}-{}", ln.from_bus, ln.to_bus)
        };
        match *self {
            ResidualId::VUpper(i) => format!("v_upper[{}]", bus(i)),
            ResidualId::VLower(i) => format!("v_lower[{}]", bus(i)),
            ResidualId::ThermalFrom(l) => format!("thermal_from[{}]", line(l)),
            ResidualId::ThermalTo(l) => format!("thermal_to[{}]", line(l)),
            ResidualId::SlackPUpper => "slack_p_upper".into(),
            ResidualId::SlackPLower => "slack_p_lower".into(),
            ResidualId::SlackQUpper => "slack_q_upper".into(),
            ResidualId::SlackQLower => "slack_q_lower".into(),
            ResidualId::AngleUpper(l) => format!("angle_upper[{}]", line(l)),
            ResidualId::AngleLower(l) => format!("angle_lower[{}]", line(l)),
        }
    }
}

/// Ordered ids of the flattened residual vector for `nf`.
pub fn residual_ids(nf: &NormalizedFeeder) -> Vec<ResidualId> {
    let (n, l) = (nf.n_buses(), nf.n_lines());
    let mut ids = Vec::with_capacity(residual_count(nf));
    ids.extend((0..n).map(ResidualId::VUpper));
    ids.extend((0..n).map(ResidualId::VLower));
    ids.extend((0..l).map(ResidualId::ThermalFrom));
    ids.extend((0..l).map(ResidualId::ThermalTo));
    ids.extend([
        ResidualId::SlackPUpper,
        ResidualId::SlackPLower,
        ResidualId::SlackQUpper,
        ResidualId::SlackQLower,
    ]);
    ids.extend((0..l).map(ResidualId::AngleUpper));
    ids.extend((0..l).map(ResidualId::AngleLower));
    ids
}

pub fn residual_count(nf: &NormalizedFeeder) -> usize {
    2 * nf.n_buses() + 4 * nf.n_lines() + 4
}

impl ConstraintResiduals {
    /// Flattened in the order of [`residual_ids`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(&self.v_upper);
        out.extend(&self.v_lower);
        out.extend(&self.thermal_from);
        out.extend(&self.thermal_to);
        out.extend(self.slack_p);
        out.extend(self.slack_q);
        out.extend(&self.angle_upper);
        out.extend(&self.angle_lower);
        out
    }

    pub fn min(&self) -> f64 {
        self.to_vec().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.min() >= -tol
    }
}

pub fn constraint_residuals(state: &PowerFlowState, nf: &NormalizedFeeder) -> ConstraintResiduals {
    let s2 = |l: usize| nf.s_rated[l] * nf.s_rated[l];
    let nl = nf.n_lines();
    let dtheta = |l: usize| state.theta[nf.line_from[l]] - state.theta[nf.line_to[l]];
    ConstraintResiduals {
        v_upper: state.v.iter().zip(&nf.v_max).map(|(v, hi)| hi - v).collect(),
        v_lower: state.v.iter().zip(&nf.v_min).map(|(v, lo)| v - lo).collect(),
        thermal_from: (0..nl)
            .map(|l| s2(l) - state.p_flow[l].powi(2) - state.q_flow[l].powi(2))
            .collect(),
        thermal_to: (0..nl)
            .map(|l| s2(l) - state.p_flow_rev[l].powi(2) - state.q_flow_rev[l].powi(2))
            .collect(),
        slack_p: [
            nf.p_exchange_max - state.p_slack,
            state.p_slack + nf.p_exchange_max,
        ],
        slack_q: [
            nf.q_exchange_max - state.q_slack,
            state.q_slack + nf.q_exchange_max,
        ],
        angle_upper: (0..nl).map(|l| nf.dtheta_max[l] - dtheta(l)).collect(),
        angle_lower: (0..nl).map(|l| dtheta(l) - nf.dtheta_min[l]).collect(),
    }
}

// ---------------------------------------------------------------------------
// Adjoint sensitivities
// ---------------------------------------------------------------------------

impl SolvedFlow {
    /// `d(wᵀ c)/d p_DG` where the DG reactive output follows `q = q_per_p · p`.
    ///
    /// One transposed-jacobian solve regardless of the number of residuals.
    pub fn residual_gradient(
        &self,
        nf: &NormalizedFeeder,
        weights: &[f64],
        q_per_p: f64,
    ) -> Result<Vec<f64>, PowerFlowError> {
        let expected = residual_count(nf);
        if weights.len() != expected {
            return Err(PowerFlowError::DimensionMismatch {
                expected,
                got: weights.len(),
            });
        }
        if weights.iter().all(|w| *w == 0.0) {
            return Ok(vec![0.0; nf.n_loads()]);
        }
        let rhs = self.state_gradient(nf, weights);
        let mu = self
            .jacobian
            .transpose()
            .lu()
            .solve(&rhs)
            .ok_or(PowerFlowError::SingularJacobian)?;
        let m = self.layout.m;
        Ok(nf
            .load_bus
            .iter()
            .map(|&bus| {
                let k = self.layout.pos[bus].expect("loads never sit on the slack bus");
                mu[k] + q_per_p * mu[m + k]
            })
            .collect())
    }

    /// `∂(wᵀ c)/∂x` over the unknowns `x = [θ, V]` of the non-slack buses.
    fn state_gradient(&self, nf: &NormalizedFeeder, w: &[f64]) -> DVector<f64> {
        let st = &self.state;
        let lay = &self.layout;
        let (n, nl) = (nf.n_buses(), nf.n_lines());
        let m = lay.m;
        let mut grad = DVector::zeros(2 * m);
        let mut add = |col: Option<usize>, val: f64| {
            if let Some(c) = col {
                grad[c] += val;
            }
        };

        for i in 0..n {
            let col = lay.pos[i].map(|k| m + k);
            add(col, -w[i]);
            add(col, w[n + i]);
        }
        let off_thermal = 2 * n;
        let off_slack = off_thermal + 2 * nl;
        let off_angle = off_slack + 4;
        let (wp, wq) = (w[off_slack + 1] - w[off_slack], w[off_slack + 3] - w[off_slack + 2]);

        for l in 0..nl {
            let (a, c) = (nf.line_from[l], nf.line_to[l]);
            for (dir, (from, to)) in [(a, c), (c, a)].into_iter().enumerate() {
                let wt = w[off_thermal + dir * nl + l];
                let fl = branch_flow(nf.g[l], nf.b[l], st.v[from], st.v[to], st.theta[from], st.theta[to]);
                // slack exchange is the flow leaving the slack bus
                let (sp, sq) = if from == nf.slack { (wp, wq) } else { (0.0, 0.0) };
                if wt == 0.0 && sp == 0.0 && sq == 0.0 {
                    continue;
                }
                for (k, col) in lay.cols(from, to).into_iter().enumerate() {
                    let val = -2.0 * wt * (fl.p * fl.dp[k] + fl.q * fl.dq[k]) + sp * fl.dp[k] + sq * fl.dq[k];
                    add(col, val);
                }
            }
            let (wu, wl) = (w[off_angle + l], w[off_angle + nl + l]);
            add(lay.pos[a], wl - wu);
            add(lay.pos[c], wu - wl);
        }
        grad
    }
}

/// Gradient of `weightsᵀ · residuals` with respect to the per-load DG active
/// injections, with reactive output tied to active output by `q_per_p`.
pub fn adjoint_gradient(
    nf: &NormalizedFeeder,
    dg: &[f64],
    q_per_p: f64,
    weights: &[f64],
) -> Result<Vec<f64>, PowerFlowError> {
    let dg_q: Vec<f64> = dg.iter().map(|p| p * q_per_p).collect();
    let solved = solve_power_flow_with(nf, dg, &dg_q, &PowerFlowOptions::default())?;
    solved.residual_gradient(nf, weights, q_per_p)
}

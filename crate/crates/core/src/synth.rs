//! Synthetic linear and branched ("fishbone") feeders for topology studies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kpi::{gini, price_of_fairness, KpiError};
use crate::netmodel::{
    feeder_stats, BusKind, BusRecord, ConnectionRecord, Feeder, FeederError, FeederFile, LineRecord, LoadRecord,
};
use crate::pareto::reference_solutions;
use crate::solver::{SolverError, SolverOptions};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic feeder spec: {0}")]
    InvalidSpec(String),
    #[error("specs are not comparable: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Feeder(#[from] FeederError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Kpi(#[from] KpiError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Linear,
    Branched,
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Linear => "linear",
            Layout::Branched => "branched",
        })
    }
}

impl FromStr for Layout {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Layout::Linear),
            "branched" => Ok(Layout::Branched),
            _ => Err(SynthError::InvalidSpec(format!("unknown layout `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conductor {
    pub r_ohm_per_km: f64,
    pub x_ohm_per_km: f64,
    pub i_rated_a: f64,
}

impl Default for Conductor {
    fn default() -> Self {
        Self {
            r_ohm_per_km: 0.9,
            x_ohm_per_km: 0.08,
            i_rated_a: 200.0,
        }
    }
}

/// Base quantities and grid-side limits shared by every synthetic feeder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSettings {
    pub s_base_kva: f64,
    pub v_base_v: f64,
    pub dg_cap_kw: f64,
    pub p_max_kw: f64,
    pub q_max_kvar: f64,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            s_base_kva: 100.0,
            v_base_v: 230.0,
            dg_cap_kw: 1000.0,
            p_max_kw: 10_000.0,
            q_max_kvar: 10_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_loads: usize,
    pub layout: Layout,
    /// Length of each lateral (branched layout only), m.
    pub branch_len_m: f64,
    /// Total trunk length, split into `n_loads` equal segments, m.
    pub trunk_len_m: f64,
    pub conductor: Conductor,
    pub load_p_kw: f64,
    pub load_q_kvar: f64,
    /// Reserved; current layouts are deterministic.
    pub seed: u64,
    pub grid: GridSettings,
}

impl SynthSpec {
    pub fn new(n_loads: usize, layout: Layout, trunk_len_m: f64) -> Self {
        Self {
            n_loads,
            layout,
            branch_len_m: 100.0,
            trunk_len_m,
            conductor: Conductor::default(),
            load_p_kw: 0.2,
            load_q_kvar: 0.05,
            seed: 0,
            grid: GridSettings::default(),
        }
    }

    /// Conductor length of the generated feeder, m.
    pub fn total_length_m(&self) -> f64 {
        match self.layout {
            Layout::Linear => self.trunk_len_m,
            Layout::Branched => self.trunk_len_m + self.n_loads as f64 * self.branch_len_m,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.n_loads == 0 {
            return bad("n_loads must be at least 1");
        }
        if !(self.trunk_len_m > 0.0) {
            return bad("trunk_len_m must be positive");
        }
        if self.layout == Layout::Branched && !(self.branch_len_m > 0.0) {
            return bad("branch_len_m must be positive");
        }
        let c = &self.conductor;
        if !(c.r_ohm_per_km > 0.0 && c.x_ohm_per_km > 0.0 && c.i_rated_a > 0.0) {
            return bad("conductor parameters must be positive");
        }
        if !(self.load_p_kw >= 0.0 && self.load_q_kvar.is_finite()) {
            return bad("load demand must be finite and p_kw non-negative");
        }
        Ok(())
    }
}

/// Linear spec of trunk `total_len_m` and a branched spec with the same
/// conductor total, each with `n_loads` loads.
pub fn matched_pair(n_loads: usize, total_len_m: f64, branch_len_m: f64) -> (SynthSpec, SynthSpec) {
    let linear = SynthSpec::new(n_loads, Layout::Linear, total_len_m);
    let mut branched = SynthSpec::new(n_loads, Layout::Branched, total_len_m - n_loads as f64 * branch_len_m);
    branched.branch_len_m = branch_len_m;
    (linear, branched)
}

pub fn generate_feeder(spec: &SynthSpec) -> Result<Feeder, SynthError> {
    spec.validate()?;
    let n = spec.n_loads;
    let c = spec.conductor;
    let g = spec.grid;
    let segment = |from: &str, to: &str, len_m: f64| LineRecord {
        from: from.into(),
        to: to.into(),
        r_ohm: c.r_ohm_per_km * len_m / 1000.0,
        x_ohm: c.x_ohm_per_km * len_m / 1000.0,
        length_m: len_m,
        i_rated_a: c.i_rated_a,
        u_nom_v: g.v_base_v,
    };
    let bus = |id: String, kind| BusRecord {
        id,
        kind,
        v_min: None,
        v_max: None,
        dtheta_min: None,
        dtheta_max: None,
    };

    let trunk_seg = spec.trunk_len_m / n as f64;
    let mut buses = vec![bus("slack".into(), BusKind::Slack)];
    let mut lines = Vec::with_capacity(2 * n);
    let mut loads = Vec::with_capacity(n);
    let mut prev = "slack".to_string();
    for k in 1..=n {
        let load_bus = match spec.layout {
            Layout::Linear => {
                let id = format!("n{k}");
                buses.push(bus(id.clone(), BusKind::Load));
                lines.push(segment(&prev, &id, trunk_seg));
                prev = id.clone();
                id
            }
            Layout::Branched => {
                let junction = format!("j{k}");
                let id = format!("d{k}");
                buses.push(bus(junction.clone(), BusKind::Junction));
                buses.push(bus(id.clone(), BusKind::Load));
                lines.push(segment(&prev, &junction, trunk_seg));
                lines.push(segment(&junction, &id, spec.branch_len_m));
                prev = junction;
                id
            }
        };
        loads.push(LoadRecord {
            bus: load_bus,
            p_kw: spec.load_p_kw,
            q_kvar: spec.load_q_kvar,
        });
    }

    Ok(Feeder::from_file(FeederFile {
        s_base_kva: g.s_base_kva,
        v_base_v: g.v_base_v,
        dg_cap_kw: g.dg_cap_kw,
        buses,
        lines,
        loads,
        connection: ConnectionRecord {
            bus: "slack".into(),
            p_max_kw: g.p_max_kw,
            q_max_kvar: g.q_max_kvar,
        },
    })?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopologyRow {
    pub layout: Layout,
    pub n_loads: usize,
    pub total_length_km: f64,
    /// kW
    pub hc_uti: f64,
    /// kW
    pub hc_egal: f64,
    pub pof_egal: f64,
    pub gini_uti: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopologyReport {
    pub linear: TopologyRow,
    pub branched: TopologyRow,
    /// PoF_egal(linear) > PoF_egal(branched).
    pub linear_pays_more: bool,
}

fn topology_row(spec: &SynthSpec, opts: &SolverOptions) -> Result<TopologyRow, SynthError> {
    let feeder = generate_feeder(spec)?;
    let (uti, egal) = reference_solutions(&feeder, opts)?;
    Ok(TopologyRow {
        layout: spec.layout,
        n_loads: spec.n_loads,
        total_length_km: feeder_stats(&feeder).total_length,
        hc_uti: uti.hc_total,
        hc_egal: egal.hc_total,
        pof_egal: price_of_fairness(uti.hc_total, egal.hc_total)?,
        gini_uti: gini(&uti.allocation)?.value,
    })
}

/// Utilitarian and egalitarian HC on a linear and a branched feeder with the
/// same load count and conductor length.
pub fn topology_experiment(
    linear: &SynthSpec,
    branched: &SynthSpec,
    opts: &SolverOptions,
) -> Result<TopologyReport, SynthError> {
    if linear.n_loads != branched.n_loads {
        return Err(SynthError::Mismatch(format!(
            "n_loads {} vs {}",
            linear.n_loads, branched.n_loads
        )));
    }
    let (la, lb) = (linear.total_length_m(), branched.total_length_m());
    if (la - lb).abs() > 1e-6 {
        return Err(SynthError::Mismatch(format!("total length {la} m vs {lb} m")));
    }
    let linear = topology_row(linear, opts)?;
    let branched = topology_row(branched, opts)?;
    Ok(TopologyReport {
        linear_pays_more: linear.pof_egal > branched.pof_egal,
        linear,
        branched,
    })
}

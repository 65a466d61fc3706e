//! Radial feeder model: file schema, validation, per-unit normalization and
//! aggregate statistics.
//!
//! A [`Feeder`] can only be obtained through validation ([`parse_feeder`] or
//! [`Feeder::from_file`]), so every instance is radial, connected, has exactly
//! one slack bus and at most one load per load bus.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Voltage band applied when a bus record omits `v_min`.
pub const DEFAULT_V_MIN: f64 = 0.90;
/// Voltage band applied when a bus record omits `v_max`.
pub const DEFAULT_V_MAX: f64 = 1.10;
/// Angle-difference limit (radians, about 10 degrees) applied when a bus
/// record omits `dtheta_min` / `dtheta_max`.
pub const DEFAULT_DTHETA: f64 = 0.1745;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeederError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("unknown bus `{0}`")]
    UnknownBus(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, FeederError> {
    Err(FeederError::Validation(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Junction,
    Load,
}

// ---------------------------------------------------------------------------
// On-disk schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederFile {
    pub s_base_kva: f64,
    pub v_base_v: f64,
    pub dg_cap_kw: f64,
    pub buses: Vec<BusRecord>,
    pub lines: Vec<LineRecord>,
    pub loads: Vec<LoadRecord>,
    pub connection: ConnectionRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRecord {
    pub id: String,
    pub kind: BusKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dtheta_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dtheta_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineRecord {
    pub from: String,
    pub to: String,
    pub r_ohm: f64,
    pub x_ohm: f64,
    pub length_m: f64,
    pub i_rated_a: f64,
    pub u_nom_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadRecord {
    pub bus: String,
    pub p_kw: f64,
    pub q_kvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionRecord {
    pub bus: String,
    pub p_max_kw: f64,
    pub q_max_kvar: f64,
}

// ---------------------------------------------------------------------------
// Validated domain types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub kind: BusKind,
    pub v_min: f64,
    pub v_max: f64,
    pub dtheta_min: f64,
    pub dtheta_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from_bus: String,
    pub to_bus: String,
    /// Ohms.
    pub resistance: f64,
    /// Ohms.
    pub reactance: f64,
    /// Meters.
    pub length: f64,
    /// Amperes.
    pub rated_current: f64,
    /// Volts.
    pub nominal_voltage: f64,
}

impl Line {
    /// Series conductance `r / (r² + x²)`.
    pub fn conductance(&self) -> f64 {
        let d = self.resistance.powi(2) + self.reactance.powi(2);
        self.resistance / d
    }

    /// Series susceptance `-x / (r² + x²)`.
    pub fn susceptance(&self) -> f64 {
        let d = self.resistance.powi(2) + self.reactance.powi(2);
        -self.reactance / d
    }

    pub fn impedance(&self) -> f64 {
        self.resistance.hypot(self.reactance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConnection {
    pub bus: String,
    /// kW.
    pub p_max: f64,
    /// kvar.
    pub q_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: String,
    /// kW.
    pub p_demand: f64,
    /// kvar.
    pub q_demand: f64,
}

/// A validated radial feeder.
#[derive(Debug, Clone, PartialEq)]
pub struct Feeder {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    loads: Vec<Load>,
    connection: GridConnection,
    s_base: f64,
    v_base: f64,
    dg_cap: f64,
    index: HashMap<String, usize>,
    slack: usize,
    /// For every bus, the (parent bus, connecting line) on the path to the slack.
    parent: Vec<Option<(usize, usize)>>,
    load_bus: Vec<usize>,
}

/// Parses and validates feeder JSON.
pub fn parse_feeder(text: &str) -> Result<Feeder, FeederError> {
    let file: FeederFile = serde_json::from_str(text).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => FeederError::Schema(e.to_string()),
            _ => FeederError::Parse(e.to_string()),
        }
    })?;
    Feeder::from_file(file)
}

/// Serializes a feeder back to the JSON schema with every optional field
/// written out explicitly.
pub fn serialize_feeder(feeder: &Feeder) -> String {
    serde_json::to_string_pretty(&feeder.to_file()).expect("feeder file is always serializable")
}

fn positive_finite(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl Feeder {
    pub fn from_file(file: FeederFile) -> Result<Self, FeederError> {
        if !positive_finite(file.s_base_kva) {
            return invalid("s_base_kva must be positive");
        }
        if !positive_finite(file.v_base_v) {
            return invalid("v_base_v must be positive");
        }
        if !positive_finite(file.dg_cap_kw) {
            return invalid("dg_cap_kw must be positive");
        }

        let mut index = HashMap::with_capacity(file.buses.len());
        let mut buses = Vec::with_capacity(file.buses.len());
        for (i, rec) in file.buses.iter().enumerate() {
            if index.insert(rec.id.clone(), i).is_some() {
                return invalid(format!("duplicate bus id `{}`", rec.id));
            }
            let bus = Bus {
                id: rec.id.clone(),
                kind: rec.kind,
                v_min: rec.v_min.unwrap_or(DEFAULT_V_MIN),
                v_max: rec.v_max.unwrap_or(DEFAULT_V_MAX),
                dtheta_min: rec.dtheta_min.unwrap_or(-DEFAULT_DTHETA),
                dtheta_max: rec.dtheta_max.unwrap_or(DEFAULT_DTHETA),
            };
            if !(bus.v_min > 0.0 && bus.v_min < bus.v_max && bus.v_max.is_finite()) {
                return invalid(format!("bus `{}`: need 0 < v_min < v_max", bus.id));
            }
            if !(bus.dtheta_min < 0.0 && bus.dtheta_max > 0.0) {
                return invalid(format!("bus `{}`: need dtheta_min < 0 < dtheta_max", bus.id));
            }
            buses.push(bus);
        }

        let slacks: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Slack)
            .map(|(i, _)| i)
            .collect();
        let slack = match slacks.as_slice() {
            [s] => *s,
            [] => return invalid("feeder has no slack bus"),
            _ => return invalid("duplicate slack bus"),
        };

        let lookup = |id: &str| index.get(id).copied().ok_or_else(|| FeederError::UnknownBus(id.to_owned()));

        let mut lines = Vec::with_capacity(file.lines.len());
        let mut ends = Vec::with_capacity(file.lines.len());
        for rec in &file.lines {
            let (f, t) = (lookup(&rec.from)?, lookup(&rec.to)?);
            if f == t {
                return invalid(format!("line `{}`-`{}` is a self loop", rec.from, rec.to));
            }
            if !positive_finite(rec.r_ohm) {
                return invalid(format!("line `{}`-`{}`: resistance must be positive", rec.from, rec.to));
            }
            if !(rec.x_ohm.is_finite() && rec.x_ohm >= 0.0) {
                return invalid(format!("line `{}`-`{}`: reactance must be non-negative", rec.from, rec.to));
            }
            if !positive_finite(rec.i_rated_a) || !positive_finite(rec.u_nom_v) {
                return invalid(format!("line `{}`-`{}`: rating must be positive", rec.from, rec.to));
            }
            if !(rec.length_m.is_finite() && rec.length_m >= 0.0) {
                return invalid(format!("line `{}`-`{}`: length must be non-negative", rec.from, rec.to));
            }
            ends.push((f, t));
            lines.push(Line {
                from_bus: rec.from.clone(),
                to_bus: rec.to.clone(),
                resistance: rec.r_ohm,
                reactance: rec.x_ohm,
                length: rec.length_m,
                rated_current: rec.i_rated_a,
                nominal_voltage: rec.u_nom_v,
            });
        }

        if lines.len() + 1 != buses.len() {
            return invalid(format!(
                "not radial: {} lines for {} buses",
                lines.len(),
                buses.len()
            ));
        }
        let mut dsu = DisjointSet::new(buses.len());
        for &(f, t) in &ends {
            if !dsu.union(f, t) {
                return invalid("not radial: lines form a cycle");
            }
        }

        let mut seen_load = vec![false; buses.len()];
        let mut loads = Vec::with_capacity(file.loads.len());
        let mut load_bus = Vec::with_capacity(file.loads.len());
        for rec in &file.loads {
            let b = lookup(&rec.bus)?;
            if buses[b].kind != BusKind::Load {
                return invalid(format!("load at `{}` which is not a load bus", rec.bus));
            }
            if seen_load[b] {
                return invalid(format!("bus `{}` hosts more than one load", rec.bus));
            }
            if !(rec.p_kw.is_finite() && rec.p_kw >= 0.0) || !rec.q_kvar.is_finite() {
                return invalid(format!("load at `{}`: demand must be finite and p >= 0", rec.bus));
            }
            seen_load[b] = true;
            load_bus.push(b);
            loads.push(Load {
                bus: rec.bus.clone(),
                p_demand: rec.p_kw,
                q_demand: rec.q_kvar,
            });
        }
        if let Some(b) = (0..buses.len()).find(|&b| buses[b].kind == BusKind::Load && !seen_load[b]) {
            return invalid(format!("load bus `{}` has no load record", buses[b].id));
        }

        let conn_bus = lookup(&file.connection.bus)?;
        if conn_bus != slack {
            return invalid("grid connection must be at the slack bus");
        }
        if !positive_finite(file.connection.p_max_kw) || !positive_finite(file.connection.q_max_kvar) {
            return invalid("grid connection limits must be positive");
        }

        let parent = bfs_parents(buses.len(), slack, &ends);

        Ok(Feeder {
            buses,
            lines,
            loads,
            connection: GridConnection {
                bus: file.connection.bus.clone(),
                p_max: file.connection.p_max_kw,
                q_max: file.connection.q_max_kvar,
            },
            s_base: file.s_base_kva,
            v_base: file.v_base_v,
            dg_cap: file.dg_cap_kw,
            index,
            slack,
            parent,
            load_bus,
        })
    }

    pub fn to_file(&self) -> FeederFile {
        FeederFile {
            s_base_kva: self.s_base,
            v_base_v: self.v_base,
            dg_cap_kw: self.dg_cap,
            buses: self
                .buses
                .iter()
                .map(|b| BusRecord {
                    id: b.id.clone(),
                    kind: b.kind,
                    v_min: Some(b.v_min),
                    v_max: Some(b.v_max),
                    dtheta_min: Some(b.dtheta_min),
                    dtheta_max: Some(b.dtheta_max),
                })
                .collect(),
            lines: self
                .lines
                .iter()
                .map(|l| LineRecord {
                    from: l.from_bus.clone(),
                    to: l.to_bus.clone(),
                    r_ohm: l.resistance,
                    x_ohm: l.reactance,
                    length_m: l.length,
                    i_rated_a: l.rated_current,
                    u_nom_v: l.nominal_voltage,
                })
                .collect(),
            loads: self
                .loads
                .iter()
                .map(|l| LoadRecord {
                    bus: l.bus.clone(),
                    p_kw: l.p_demand,
                    q_kvar: l.q_demand,
                })
                .collect(),
            connection: ConnectionRecord {
                bus: self.connection.bus.clone(),
                p_max_kw: self.connection.p_max,
                q_max_kvar: self.connection.q_max,
            },
        }
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn loads(&self) -> &[Load] {
        &self.loads
    }

    pub fn connection(&self) -> &GridConnection {
        &self.connection
    }

    /// kVA.
    pub fn s_base(&self) -> f64 {
        self.s_base
    }

    /// Volts.
    pub fn v_base(&self) -> f64 {
        self.v_base
    }

    /// Per-load DG ceiling in kW.
    pub fn dg_cap(&self) -> f64 {
        self.dg_cap
    }

    pub fn slack_index(&self) -> usize {
        self.slack
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Bus index of every load, in load order.
    pub fn load_buses(&self) -> &[usize] {
        &self.load_bus
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_loads(&self) -> usize {
        self.loads.len()
    }

    /// Parent bus and connecting line of `bus` on its path to the slack.
    pub fn parent(&self, bus: usize) -> Option<(usize, usize)> {
        self.parent[bus]
    }

    /// Sum of |z| along the unique slack-to-bus path, in ohms.
    pub fn electrical_distance(&self, bus: &str) -> Result<f64, FeederError> {
        let idx = self
            .bus_index(bus)
            .ok_or_else(|| FeederError::UnknownBus(bus.to_owned()))?;
        Ok(self.distance_by_index(idx))
    }

    fn distance_by_index(&self, mut idx: usize) -> f64 {
        let mut total = 0.0;
        while let Some((up, line)) = self.parent[idx] {
            total += self.lines[line].impedance();
            idx = up;
        }
        total
    }

    /// Electrical distance of every load bus, in load order.
    pub fn load_distances(&self) -> Vec<f64> {
        self.load_bus.iter().map(|&b| self.distance_by_index(b)).collect()
    }

    /// Returns a copy with a different per-load DG ceiling.
    pub fn with_dg_cap(&self, dg_cap_kw: f64) -> Result<Self, FeederError> {
        let mut file = self.to_file();
        file.dg_cap_kw = dg_cap_kw;
        Feeder::from_file(file)
    }
}

fn bfs_parents(n: usize, root: usize, ends: &[(usize, usize)]) -> Vec<Option<(usize, usize)>> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, &(f, t)) in ends.iter().enumerate() {
        adj[f].push((t, k));
        adj[t].push((f, k));
    }
    let mut parent = vec![None; n];
    let mut visited = vec![false; n];
    let mut queue = VecDeque::from([root]);
    visited[root] = true;
    while let Some(u) = queue.pop_front() {
        for &(v, k) in &adj[u] {
            if !visited[v] {
                visited[v] = true;
                parent[v] = Some((u, k));
                queue.push_back(v);
            }
        }
    }
    parent
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

// ---------------------------------------------------------------------------
// Per-unit view
// ---------------------------------------------------------------------------

/// Per-unit arrays consumed by the power-flow engine and the solvers.
///
/// Impedances are divided by `Z_base = v_base² / (s_base · 1000)`, powers by
/// `s_base`. Line ratings become apparent-power limits `U_nom · I_rated / S_base`.
#[derive(Debug, Clone)]
pub struct NormalizedFeeder {
    feeder: Feeder,
    pub z_base: f64,
    pub slack: usize,
    pub line_from: Vec<usize>,
    pub line_to: Vec<usize>,
    pub r: Vec<f64>,
    pub x: Vec<f64>,
    pub g: Vec<f64>,
    pub b: Vec<f64>,
    pub s_rated: Vec<f64>,
    /// Angle-difference window per line: the tighter of its two end buses.
    pub dtheta_min: Vec<f64>,
    pub dtheta_max: Vec<f64>,
    pub v_min: Vec<f64>,
    pub v_max: Vec<f64>,
    pub load_bus: Vec<usize>,
    pub p_demand: Vec<f64>,
    pub q_demand: Vec<f64>,
    pub p_exchange_max: f64,
    pub q_exchange_max: f64,
    pub dg_cap: f64,
}

pub fn to_per_unit(feeder: &Feeder) -> NormalizedFeeder {
    let s_base = feeder.s_base;
    let z_base = feeder.v_base.powi(2) / (s_base * 1000.0);
    let n_lines = feeder.lines.len();
    let mut nf = NormalizedFeeder {
        feeder: feeder.clone(),
        z_base,
        slack: feeder.slack,
        line_from: Vec::with_capacity(n_lines),
        line_to: Vec::with_capacity(n_lines),
        r: Vec::with_capacity(n_lines),
        x: Vec::with_capacity(n_lines),
        g: Vec::with_capacity(n_lines),
        b: Vec::with_capacity(n_lines),
        s_rated: Vec::with_capacity(n_lines),
        dtheta_min: Vec::with_capacity(n_lines),
        dtheta_max: Vec::with_capacity(n_lines),
        v_min: feeder.buses.iter().map(|b| b.v_min).collect(),
        v_max: feeder.buses.iter().map(|b| b.v_max).collect(),
        load_bus: feeder.load_bus.clone(),
        p_demand: feeder.loads.iter().map(|l| l.p_demand / s_base).collect(),
        q_demand: feeder.loads.iter().map(|l| l.q_demand / s_base).collect(),
        p_exchange_max: feeder.connection.p_max / s_base,
        q_exchange_max: feeder.connection.q_max / s_base,
        dg_cap: feeder.dg_cap / s_base,
    };
    for line in &feeder.lines {
        let f = feeder.index[&line.from_bus];
        let t = feeder.index[&line.to_bus];
        let r = line.resistance / z_base;
        let x = line.reactance / z_base;
        let d = r * r + x * x;
        nf.line_from.push(f);
        nf.line_to.push(t);
        nf.r.push(r);
        nf.x.push(x);
        nf.g.push(r / d);
        nf.b.push(-x / d);
        nf.s_rated
            .push(line.nominal_voltage * line.rated_current / (s_base * 1000.0));
        let (bf, bt) = (&feeder.buses[f], &feeder.buses[t]);
        nf.dtheta_min.push(bf.dtheta_min.max(bt.dtheta_min));
        nf.dtheta_max.push(bf.dtheta_max.min(bt.dtheta_max));
    }
    nf
}

impl NormalizedFeeder {
    pub fn feeder(&self) -> &Feeder {
        &self.feeder
    }

    pub fn n_buses(&self) -> usize {
        self.v_min.len()
    }

    pub fn n_lines(&self) -> usize {
        self.r.len()
    }

    pub fn n_loads(&self) -> usize {
        self.load_bus.len()
    }

    pub fn s_base(&self) -> f64 {
        self.feeder.s_base
    }

    /// Rebuilds physical-unit records from the per-unit arrays.
    pub fn denormalize(&self) -> Feeder {
        let s_base = self.feeder.s_base;
        let mut file = self.feeder.to_file();
        for (k, rec) in file.lines.iter_mut().enumerate() {
            rec.r_ohm = self.r[k] * self.z_base;
            rec.x_ohm = self.x[k] * self.z_base;
            rec.i_rated_a = self.s_rated[k] * s_base * 1000.0 / rec.u_nom_v;
        }
        for (d, rec) in file.loads.iter_mut().enumerate() {
            rec.p_kw = self.p_demand[d] * s_base;
            rec.q_kvar = self.q_demand[d] * s_base;
        }
        for (i, rec) in file.buses.iter_mut().enumerate() {
            rec.v_min = Some(self.v_min[i]);
            rec.v_max = Some(self.v_max[i]);
        }
        file.connection.p_max_kw = self.p_exchange_max * s_base;
        file.connection.q_max_kvar = self.q_exchange_max * s_base;
        file.dg_cap_kw = self.dg_cap * s_base;
        Feeder::from_file(file).expect("denormalized feeder keeps its invariants")
    }
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeederStats {
    /// km.
    pub total_length: f64,
    /// Ohms.
    pub total_resistance: f64,
    /// Ohms.
    pub total_reactance: f64,
    /// `+inf` when the feeder has no reactance.
    #[serde(serialize_with = "ser_ratio")]
    pub r_over_x: f64,
    /// `sqrt(R² + X²)` of the summed resistance and reactance, in ohms.
    pub impedance: f64,
    pub n_loads: usize,
    pub n_buses: usize,
}

fn ser_ratio<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

pub fn feeder_stats(feeder: &Feeder) -> FeederStats {
    let total_length = feeder.lines.iter().map(|l| l.length).sum::<f64>() / 1000.0;
    let total_resistance: f64 = feeder.lines.iter().map(|l| l.resistance).sum();
    let total_reactance: f64 = feeder.lines.iter().map(|l| l.reactance).sum();
    let r_over_x = if total_reactance > 0.0 {
        total_resistance / total_reactance
    } else {
        f64::INFINITY
    };
    FeederStats {
        total_length,
        total_resistance,
        total_reactance,
        r_over_x,
        impedance: total_resistance.hypot(total_reactance),
        n_loads: feeder.n_loads(),
        n_buses: feeder.n_buses(),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn bus(id: &str, kind: BusKind) -> BusRecord {
        BusRecord {
            id: id.into(),
            kind,
            v_min: None,
            v_max: None,
            dtheta_min: None,
            dtheta_max: None,
        }
    }

    pub(crate) fn line(from: &str, to: &str, r: f64, x: f64) -> LineRecord {
        LineRecord {
            from: from.into(),
            to: to.into(),
            r_ohm: r,
            x_ohm: x,
            length_m: 100.0,
            i_rated_a: 200.0,
            u_nom_v: 230.0,
        }
    }

    fn two_bus_file() -> FeederFile {
        FeederFile {
            s_base_kva: 1.0,
            v_base_v: 230.0,
            dg_cap_kw: 10.0,
            buses: vec![bus("s", BusKind::Slack), bus("a", BusKind::Load)],
            lines: vec![line("s", "a", 0.0529, 0.0)],
            loads: vec![LoadRecord {
                bus: "a".into(),
                p_kw: 1.0,
                q_kvar: 0.0,
            }],
            connection: ConnectionRecord {
                bus: "s".into(),
                p_max_kw: 100.0,
                q_max_kvar: 100.0,
            },
        }
    }

    const MINIMAL: &str = r#"{
        "s_base_kva": 1.0, "v_base_v": 230.0, "dg_cap_kw": 10.0,
        "buses": [{"id": "s", "kind": "slack"}, {"id": "a", "kind": "load", "v_max": 1.05}],
        "lines": [{"from": "s", "to": "a", "r_ohm": 0.1, "x_ohm": 0.01, "length_m": 50,
                   "i_rated_a": 100, "u_nom_v": 230}],
        "loads": [{"bus": "a", "p_kw": 1.0, "q_kvar": 0.2}],
        "connection": {"bus": "s", "p_max_kw": 50, "q_max_kvar": 50}
    }"#;

    #[test]
    fn minimal_feeder_parses() {
        let f = parse_feeder(MINIMAL).unwrap();
        assert_eq!(f.n_buses(), 2);
        assert_eq!(f.n_loads(), 1);
        assert_eq!(f.buses()[1].v_max, 1.05);
        assert_eq!(f.buses()[1].v_min, DEFAULT_V_MIN);
        assert_eq!(f.buses()[0].dtheta_max, DEFAULT_DTHETA);
    }

    #[test]
    fn syntax_and_schema_errors_are_distinguished() {
        assert!(matches!(parse_feeder("{ not json"), Err(FeederError::Parse(_))));
        let missing = MINIMAL.replace(r#""dg_cap_kw": 10.0,"#, "");
        assert!(matches!(parse_feeder(&missing), Err(FeederError::Schema(_))));
        let extra = MINIMAL.replace(r#""dg_cap_kw": 10.0,"#, r#""dg_cap_kw": 10.0, "colour": 1,"#);
        assert!(matches!(parse_feeder(&extra), Err(FeederError::Schema(_))));
    }

    #[test]
    fn cycle_is_not_radial() {
        let mut file = two_bus_file();
        file.buses.push(bus("b", BusKind::Junction));
        file.lines.push(line("a", "b", 0.1, 0.0));
        file.lines.push(line("b", "s", 0.1, 0.0));
        let err = Feeder::from_file(file).unwrap_err();
        assert!(err.to_string().contains("not radial"), "{err}");
    }

    #[test]
    fn disconnected_cycle_with_right_count_is_rejected() {
        // 4 buses, 3 lines, but a-b-c form a triangle and the slack is isolated
        let mut file = two_bus_file();
        file.buses.push(bus("b", BusKind::Junction));
        file.buses.push(bus("c", BusKind::Junction));
        file.lines = vec![line("a", "b", 0.1, 0.0), line("b", "c", 0.1, 0.0), line("c", "a", 0.1, 0.0)];
        let err = Feeder::from_file(file).unwrap_err();
        assert!(err.to_string().contains("not radial"));
    }

    #[test]
    fn structural_violations() {
        let mut f = two_bus_file();
        f.buses[1].kind = BusKind::Slack;
        f.loads.clear();
        assert!(Feeder::from_file(f).unwrap_err().to_string().contains("duplicate slack"));

        let mut f = two_bus_file();
        f.lines[0].r_ohm = 0.0;
        assert!(matches!(Feeder::from_file(f), Err(FeederError::Validation(_))));

        let mut f = two_bus_file();
        f.loads[0].bus = "nope".into();
        assert_eq!(Feeder::from_file(f), Err(FeederError::UnknownBus("nope".into())));

        let mut f = two_bus_file();
        f.loads.push(f.loads[0].clone());
        assert!(Feeder::from_file(f).is_err());

        let mut f = two_bus_file();
        f.loads.clear();
        assert!(Feeder::from_file(f).unwrap_err().to_string().contains("no load record"));

        let mut f = two_bus_file();
        f.buses[1].v_min = Some(1.2);
        assert!(Feeder::from_file(f).is_err());
    }

    #[test]
    fn per_unit_base_arithmetic() {
        // Z_base = 230² / (1 kVA · 1000) = 52.9 Ω
        let mut file = two_bus_file();
        file.lines[0].r_ohm = 52.9;
        let nf = to_per_unit(&Feeder::from_file(file).unwrap());
        assert!((nf.z_base - 52.9).abs() < 1e-12);
        assert!((nf.r[0] - 1.0).abs() < 1e-12);
        assert!((nf.g[0] - 1.0).abs() < 1e-12);
        assert_eq!(nf.b[0], 0.0);
        // 230 V · 200 A = 46 kVA = 46 pu on a 1 kVA base
        assert!((nf.s_rated[0] - 46.0).abs() < 1e-12);
        assert!((nf.p_demand[0] - 1.0).abs() < 1e-12);

        let nf = to_per_unit(&Feeder::from_file(two_bus_file()).unwrap());
        assert!((nf.r[0] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn per_unit_round_trip() {
        let f = parse_feeder(MINIMAL).unwrap();
        let back = to_per_unit(&f).denormalize();
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(back.lines()[0].resistance, 0.1) < 1e-12);
        assert!(rel(back.lines()[0].reactance, 0.01) < 1e-12);
        assert!(rel(back.lines()[0].rated_current, 100.0) < 1e-12);
        assert!(rel(back.loads()[0].q_demand, 0.2) < 1e-12);
        assert!(rel(back.connection().p_max, 50.0) < 1e-12);
        assert!(rel(back.dg_cap(), 10.0) < 1e-12);
    }

    #[test]
    fn stats_of_single_segment() {
        let mut file = two_bus_file();
        file.lines[0] = LineRecord {
            r_ohm: 0.219,
            x_ohm: 0.014,
            length_m: 164.0,
            ..file.lines[0].clone()
        };
        let s = feeder_stats(&Feeder::from_file(file).unwrap());
        assert!((s.r_over_x - 15.642857142857142).abs() < 1e-9);
        assert!((s.total_length - 0.164).abs() < 1e-12);
        assert!((s.impedance - 0.2194470).abs() < 1e-6);
    }

    #[test]
    fn stats_are_additive_and_handle_zero_reactance() {
        let mut file = two_bus_file();
        file.buses.push(bus("j", BusKind::Junction));
        file.lines = vec![line("s", "j", 1.0, 1.0), line("j", "a", 1.0, 1.0)];
        let s = feeder_stats(&Feeder::from_file(file).unwrap());
        assert_eq!(s.total_resistance, 2.0);
        assert_eq!(s.total_reactance, 2.0);
        assert!((s.impedance - 2.0 * 2f64.sqrt()).abs() < 1e-12);

        let s = feeder_stats(&Feeder::from_file(two_bus_file()).unwrap());
        assert!(s.r_over_x.is_infinite());
    }

    #[test]
    fn electrical_distance_along_paths() {
        let mut file = two_bus_file();
        file.lines[0] = line("s", "a", 3.0, 4.0);
        let f = Feeder::from_file(file).unwrap();
        assert_eq!(f.electrical_distance("s").unwrap(), 0.0);
        assert_eq!(f.electrical_distance("a").unwrap(), 5.0);
        assert!(matches!(f.electrical_distance("zz"), Err(FeederError::UnknownBus(_))));
    }

    #[test]
    fn round_trip_through_json() {
        let f = parse_feeder(MINIMAL).unwrap();
        let again = parse_feeder(&serialize_feeder(&f)).unwrap();
        assert_eq!(f, again);
    }
}

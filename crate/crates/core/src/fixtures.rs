//! Small reference feeders with per-unit-exact parameters.
//!
//! All of them use `s_base = 1000 kVA` and `v_base = 1000 V`, so the impedance
//! base is exactly 1 Ω and kW values are `1000 ×` the per-unit figure.

use rand::Rng;

use crate::netmodel::{
    to_per_unit, BusKind, BusRecord, ConnectionRecord, Feeder, FeederFile, LineRecord, LoadRecord,
    NormalizedFeeder,
};

const S_BASE: f64 = 1000.0;
const V_BASE: f64 = 1000.0;

fn bus(id: &str, kind: BusKind, v_max: f64) -> BusRecord {
    BusRecord {
        id: id.into(),
        kind,
        v_min: Some(0.90),
        v_max: Some(v_max),
        dtheta_min: None,
        dtheta_max: None,
    }
}

/// A line with per-unit impedance and apparent-power rating.
fn line(from: &str, to: &str, r: f64, x: f64, s_rated: f64) -> LineRecord {
    LineRecord {
        from: from.into(),
        to: to.into(),
        r_ohm: r,
        x_ohm: x,
        length_m: 100.0,
        i_rated_a: s_rated * 1000.0,
        u_nom_v: V_BASE,
    }
}

fn load(bus: &str, p: f64, q: f64) -> LoadRecord {
    LoadRecord {
        bus: bus.into(),
        p_kw: p * S_BASE,
        q_kvar: q * S_BASE,
    }
}

fn file(
    dg_cap: f64,
    buses: Vec<BusRecord>,
    lines: Vec<LineRecord>,
    loads: Vec<LoadRecord>,
) -> FeederFile {
    FeederFile {
        s_base_kva: S_BASE,
        v_base_v: V_BASE,
        dg_cap_kw: dg_cap * S_BASE,
        buses,
        lines,
        loads,
        connection: ConnectionRecord {
            bus: "s".into(),
            p_max_kw: 10.0 * S_BASE,
            q_max_kvar: 10.0 * S_BASE,
        },
    }
}

fn build(f: FeederFile) -> Feeder {
    Feeder::from_file(f).expect("fixture feeders are valid")
}

/// Slack plus one load bus behind a single line; limits other than the
/// voltage band are loose.
pub fn two_bus_feeder(r: f64, x: f64, load_p: f64, v_max: f64) -> Feeder {
    build(file(
        2.0,
        vec![bus("s", BusKind::Slack, v_max), bus("a", BusKind::Load, v_max)],
        vec![line("s", "a", r, x, 10.0)],
        vec![load("a", load_p, 0.0)],
    ))
}

pub fn two_bus(r: f64, x: f64, load_p: f64, v_max: f64) -> NormalizedFeeder {
    to_per_unit(&two_bus_feeder(r, x, load_p, v_max))
}

/// Chain of `n` buses with no loads.
pub fn no_load_chain(n: usize) -> NormalizedFeeder {
    let mut buses = vec![bus("b0", BusKind::Slack, 1.10)];
    let mut lines = Vec::new();
    for i in 1..n {
        buses.push(bus(&format!("b{i}"), BusKind::Junction, 1.10));
        lines.push(line(&format!("b{}", i - 1), &format!("b{i}"), 0.02, 0.01, 1.0));
    }
    let mut f = file(1.0, buses, lines, vec![]);
    f.connection.bus = "b0".into();
    to_per_unit(&build(f))
}

/// `s - a - b`, loads at `a` and `b`.
pub fn linear_three_bus_feeder() -> Feeder {
    build(file(
        1.2,
        vec![
            bus("s", BusKind::Slack, 1.05),
            bus("a", BusKind::Load, 1.05),
            bus("b", BusKind::Load, 1.05),
        ],
        vec![line("s", "a", 0.05, 0.01, 5.0), line("a", "b", 0.05, 0.01, 5.0)],
        vec![load("a", 0.02, 0.005), load("b", 0.02, 0.005)],
    ))
}

pub fn linear_three_bus() -> NormalizedFeeder {
    to_per_unit(&linear_three_bus_feeder())
}

/// `s - a`, `s - b` with unequal line impedances.
pub fn star_three_bus_feeder() -> Feeder {
    build(file(
        1.2,
        vec![
            bus("s", BusKind::Slack, 1.05),
            bus("a", BusKind::Load, 1.05),
            bus("b", BusKind::Load, 1.05),
        ],
        vec![line("s", "a", 0.05, 0.01, 5.0), line("s", "b", 0.10, 0.02, 5.0)],
        vec![load("a", 0.01, 0.0), load("b", 0.03, 0.01)],
    ))
}

pub fn star_three_bus() -> NormalizedFeeder {
    to_per_unit(&star_three_bus_feeder())
}

/// `s - j`, `j - a`, `j - b`; the `j - a` lateral has a thermal rating that
/// binds before its voltage limit does.
pub fn branched_four_bus_feeder() -> Feeder {
    build(file(
        1.2,
        vec![
            bus("s", BusKind::Slack, 1.05),
            bus("j", BusKind::Junction, 1.05),
            bus("a", BusKind::Load, 1.05),
            bus("b", BusKind::Load, 1.05),
        ],
        vec![
            line("s", "j", 0.03, 0.01, 5.0),
            line("j", "a", 0.04, 0.01, 0.6),
            line("j", "b", 0.08, 0.02, 5.0),
        ],
        vec![load("a", 0.02, 0.0), load("b", 0.01, 0.005)],
    ))
}

pub fn branched_four_bus() -> NormalizedFeeder {
    to_per_unit(&branched_four_bus_feeder())
}

/// Symmetric star: two identical laterals off the slack.
pub fn symmetric_star_feeder() -> Feeder {
    build(file(
        1.2,
        vec![
            bus("s", BusKind::Slack, 1.05),
            bus("a", BusKind::Load, 1.05),
            bus("b", BusKind::Load, 1.05),
        ],
        vec![line("s", "a", 0.06, 0.01, 5.0), line("s", "b", 0.06, 0.01, 5.0)],
        vec![load("a", 0.01, 0.0), load("b", 0.01, 0.0)],
    ))
}

/// Random radial feeder with `n_buses` buses, every non-slack bus carrying a
/// load. Impedances, demands and limits are drawn so that the zero-DG point
/// is comfortably feasible.
pub fn random_feeder<R: Rng>(rng: &mut R, n_buses: usize) -> Feeder {
    assert!(n_buses >= 2);
    let mut buses = vec![bus("s", BusKind::Slack, 1.10)];
    let mut lines = Vec::new();
    let mut loads = Vec::new();
    for i in 1..n_buses {
        let id = format!("n{i}");
        let parent = rng.gen_range(0..i);
        let parent_id = if parent == 0 { "s".to_owned() } else { format!("n{parent}") };
        buses.push(bus(&id, BusKind::Load, 1.10));
        lines.push(line(
            &parent_id,
            &id,
            rng.gen_range(0.005..0.05),
            rng.gen_range(0.0..0.02),
            rng.gen_range(0.5..3.0),
        ));
        loads.push(load(&id, rng.gen_range(0.0..0.05), rng.gen_range(-0.01..0.02)));
    }
    build(file(1.0, buses, lines, loads))
}

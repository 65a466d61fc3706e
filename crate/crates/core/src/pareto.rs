//! Parameter sweeps, PoF–Gini frontiers and knee points.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::formulation::{build_problem, FairnessPolicy, References};
use crate::kpi::{gini, price_of_fairness, KpiError};
use crate::netmodel::{serialize_feeder, to_per_unit, Feeder};
use crate::solver::{solve_egalitarian_bisection, solve_hc, HCSolution, SolveStatus, SolverError, SolverOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParetoError {
    #[error("a sweep needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("every frontier point is identical")]
    DegenerateFrontier,
    #[error("no point with finite PoF and Gini")]
    EmptyFrontier,
    #[error("reference solve failed: {0}")]
    Reference(#[from] SolverError),
    #[error(transparent)]
    Kpi(#[from] KpiError),
    #[error("frontier CSV line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("unknown family `{0}`")]
    UnknownFamily(String),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

/// Parameter family a sweep walks through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepFamily {
    /// `bounded(α, 1)` for α in [0, 1].
    BoundedLower,
    /// `bounded(0, β)` for β in [0, 1].
    BoundedUpper,
    /// `bargaining(K)` for K in [0, 1].
    Bargaining,
}

impl SweepFamily {
    pub fn policy(self, param: f64) -> FairnessPolicy {
        match self {
            SweepFamily::BoundedLower => FairnessPolicy::Bounded { alpha: param, beta: 1.0 },
            SweepFamily::BoundedUpper => FairnessPolicy::Bounded { alpha: 0.0, beta: param },
            SweepFamily::Bargaining => FairnessPolicy::Bargaining { k: param },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    BoundedLower,
    BoundedUpper,
    Bargaining,
    EndpointUti,
    EndpointEgal,
}

impl From<SweepFamily> for Family {
    fn from(f: SweepFamily) -> Self {
        match f {
            SweepFamily::BoundedLower => Family::BoundedLower,
            SweepFamily::BoundedUpper => Family::BoundedUpper,
            SweepFamily::Bargaining => Family::Bargaining,
        }
    }
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::BoundedLower => "bounded_lower",
            Family::BoundedUpper => "bounded_upper",
            Family::Bargaining => "bargaining",
            Family::EndpointUti => "endpoint_uti",
            Family::EndpointEgal => "endpoint_egal",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = ParetoError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "bounded_lower" => Family::BoundedLower,
            "bounded_upper" => Family::BoundedUpper,
            "bargaining" => Family::Bargaining,
            "endpoint_uti" => Family::EndpointUti,
            "endpoint_egal" => Family::EndpointEgal,
            _ => return Err(ParetoError::UnknownFamily(s.to_string())),
        })
    }
}

impl fmt::Display for SweepFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Family::from(*self).fmt(f)
    }
}

impl FromStr for SweepFamily {
    type Err = ParetoError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.parse::<Family>() {
            Ok(Family::BoundedLower) => Ok(SweepFamily::BoundedLower),
            Ok(Family::BoundedUpper) => Ok(SweepFamily::BoundedUpper),
            Ok(Family::Bargaining) => Ok(SweepFamily::Bargaining),
            _ => Err(ParetoError::UnknownFamily(s.to_string())),
        }
    }
}

fn status_str(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::MaxIter => "max_iter",
        SolveStatus::Failed => "failed",
    }
}

fn parse_status(s: &str) -> Option<SolveStatus> {
    Some(match s {
        "optimal" => SolveStatus::Optimal,
        "infeasible" => SolveStatus::Infeasible,
        "max_iter" => SolveStatus::MaxIter,
        "failed" => SolveStatus::Failed,
        _ => return None,
    })
}

/// One row of a frontier. Endpoints carry `param = NaN`; failed solves carry
/// NaN in `hc_kw`, `pof` and `gini`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoPoint {
    pub family: Family,
    pub param: f64,
    pub hc_kw: f64,
    pub pof: f64,
    pub gini: f64,
    pub status: SolveStatus,
    /// Per-load allocation, kW (empty for failed solves).
    pub allocation: Vec<f64>,
}

impl ParetoPoint {
    fn from_solution(family: Family, param: f64, sol: &HCSolution, hc_uti: f64) -> Result<Self, KpiError> {
        Ok(Self {
            family,
            param,
            hc_kw: sol.hc_total,
            pof: price_of_fairness(hc_uti, sol.hc_total)?,
            gini: gini(&sol.allocation)?.value,
            status: sol.status,
            allocation: sol.allocation.clone(),
        })
    }

    fn failed(family: Family, param: f64, err: &SolverError) -> Self {
        log::warn!("{family} at {param}: {err}");
        Self {
            family,
            param,
            hc_kw: f64::NAN,
            pof: f64::NAN,
            gini: f64::NAN,
            status: match err {
                SolverError::Infeasible(_) => SolveStatus::Infeasible,
                _ => SolveStatus::Failed,
            },
            allocation: Vec::new(),
        }
    }

    fn is_finite(&self) -> bool {
        self.pof.is_finite() && self.gini.is_finite()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Frontier {
    /// Leading 16 hex digits of the SHA-256 of the serialized feeder.
    pub feeder_id: String,
    pub family: Family,
    pub points: Vec<ParetoPoint>,
    pub uti_ref: HCSolution,
    pub egal_ref: HCSolution,
}

pub const CSV_HEADER: &str = "family,param,hc_kw,pof,gini,status";

fn fmt6(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.6}")
    }
}

impl Frontier {
    pub fn to_csv(&self) -> String {
        points_to_csv(&self.points)
    }
}

pub fn points_to_csv(points: &[ParetoPoint]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let header: Vec<&str> = CSV_HEADER.split(',').collect();
    w.write_record(&header).expect("writing to memory");
    for p in points {
        w.write_record([
            p.family.to_string(),
            fmt6(p.param),
            fmt6(p.hc_kw),
            fmt6(p.pof),
            fmt6(p.gini),
            status_str(p.status).to_string(),
        ])
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("CSV output is UTF-8")
}

#[derive(Deserialize)]
struct CsvRow {
    family: String,
    param: f64,
    hc_kw: f64,
    pof: f64,
    gini: f64,
    status: String,
}

/// Parses a frontier CSV as written by [`points_to_csv`].
pub fn read_frontier_csv(text: &str) -> Result<Vec<ParetoPoint>, ParetoError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header_ok = r
        .headers()
        .map(|h| h.iter().collect::<Vec<_>>().join(",") == CSV_HEADER)
        .unwrap_or(false);
    if !header_ok {
        return Err(ParetoError::Csv {
            line: 1,
            msg: format!("expected header `{CSV_HEADER}`"),
        });
    }
    r.deserialize::<CsvRow>()
        .enumerate()
        .map(|(i, row)| {
            let err = |msg: String| ParetoError::Csv { line: i + 2, msg };
            let row = row.map_err(|e| err(e.to_string()))?;
            Ok(ParetoPoint {
                family: row.family.parse().map_err(|e: ParetoError| err(e.to_string()))?,
                param: row.param,
                hc_kw: row.hc_kw,
                pof: row.pof,
                gini: row.gini,
                status: parse_status(&row.status).ok_or_else(|| err(format!("bad status `{}`", row.status)))?,
                allocation: Vec::new(),
            })
        })
        .collect()
}

fn feeder_id(feeder: &Feeder) -> String {
    let digest = Sha256::digest(serialize_feeder(feeder).as_bytes());
    hex::encode(&digest[..8])
}

/// Utilitarian and egalitarian solutions every sweep is measured against.
pub fn reference_solutions(feeder: &Feeder, opts: &SolverOptions) -> Result<(HCSolution, HCSolution), SolverError> {
    let nf = to_per_unit(feeder);
    let uti = solve_hc(&build_problem(&nf, FairnessPolicy::Utilitarian, None)?, opts)?;
    let egal = solve_egalitarian_bisection(&nf, opts)?;
    Ok((uti, egal))
}

/// Evenly spaced sweep of `family` over [0, 1] with both endpoints attached.
///
/// `jobs` worker threads solve the parameter points; the result does not
/// depend on `jobs`.
pub fn sweep(
    feeder: &Feeder,
    family: SweepFamily,
    steps: usize,
    opts: &SolverOptions,
    jobs: usize,
) -> Result<Frontier, ParetoError> {
    if steps < 2 {
        return Err(ParetoError::TooFewSteps(steps));
    }
    let nf = to_per_unit(feeder);
    let (uti, egal) = reference_solutions(feeder, opts)?;
    let refs = References {
        p_egal: egal.allocation_pu[0],
        uti_allocation: uti.allocation_pu.clone(),
    };
    let hc_uti = uti.hc_total;

    let solve_at = |i: usize| -> Result<ParetoPoint, KpiError> {
        let param = i as f64 / (steps - 1) as f64;
        let result = build_problem(&nf, family.policy(param), Some(&refs))
            .map_err(SolverError::from)
            .and_then(|p| solve_hc(&p, opts));
        match result {
            Ok(sol) => ParetoPoint::from_solution(family.into(), param, &sol, hc_uti),
            Err(e) => Ok(ParetoPoint::failed(family.into(), param, &e)),
        }
    };
    let swept: Vec<ParetoPoint> = if jobs <= 1 {
        (0..steps).map(solve_at).collect::<Result<_, _>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| ParetoError::Pool(e.to_string()))?
            .install(|| (0..steps).into_par_iter().map(solve_at).collect::<Result<_, _>>())?
    };

    let mut points = Vec::with_capacity(steps + 2);
    points.push(ParetoPoint::from_solution(Family::EndpointEgal, f64::NAN, &egal, hc_uti)?);
    points.extend(swept);
    points.push(ParetoPoint::from_solution(Family::EndpointUti, f64::NAN, &uti, hc_uti)?);
    points.sort_by(|a, b| a.gini.total_cmp(&b.gini));

    Ok(Frontier {
        feeder_id: feeder_id(feeder),
        family: family.into(),
        points,
        uti_ref: uti,
        egal_ref: egal,
    })
}

/// Points not dominated in (minimise Gini, minimise PoF); first occurrence
/// of duplicates kept, input order preserved. Non-finite points are dropped.
pub fn pareto_filter(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let finite: Vec<&ParetoPoint> = points.iter().filter(|p| p.is_finite()).collect();
    let mut kept: Vec<ParetoPoint> = Vec::new();
    for (i, p) in finite.iter().enumerate() {
        let dominated = finite.iter().any(|q| {
            q.gini <= p.gini && q.pof <= p.pof && (q.gini < p.gini || q.pof < p.pof)
        });
        let duplicate = finite[..i].iter().any(|q| q.gini == p.gini && q.pof == p.pof);
        if !dominated && !duplicate {
            kept.push((*p).clone());
        }
    }
    kept
}

const KNEE_EPS: f64 = 1e-12;

/// Knee of the nondominated set: after min–max normalisation, the point
/// farthest inside the chord between the two extremes. If no point lies
/// strictly inside, the point nearest the normalised origin. Ties go to the
/// lower PoF.
pub fn knee_point(points: &[ParetoPoint]) -> Result<ParetoPoint, ParetoError> {
    let front = pareto_filter(points);
    match front.len() {
        0 if points.is_empty() || points.iter().all(|p| !p.is_finite()) => return Err(ParetoError::EmptyFrontier),
        0 => return Err(ParetoError::DegenerateFrontier),
        1 => {
            let p = &front[0];
            let finite = points.iter().filter(|q| q.is_finite());
            if finite.clone().all(|q| q.gini == p.gini && q.pof == p.pof) {
                return Err(ParetoError::DegenerateFrontier);
            }
            return Ok(p.clone());
        }
        _ => {}
    }

    let (gmin, gmax) = bounds(front.iter().map(|p| p.gini));
    let (pmin, pmax) = bounds(front.iter().map(|p| p.pof));
    let norm = |p: &ParetoPoint| ((p.gini - gmin) / (gmax - gmin), (p.pof - pmin) / (pmax - pmin));

    // distinct nondominated points differ on both axes, so the extremes map
    // to (0, 1) and (1, 0) and the chord is x + y = 1
    let inside = |p: &ParetoPoint| {
        let (x, y) = norm(p);
        (1.0 - x - y) / std::f64::consts::SQRT_2
    };
    let better = |score: f64, best: f64, p: &ParetoPoint, q: &ParetoPoint| {
        score > best + KNEE_EPS || ((score - best).abs() <= KNEE_EPS && p.pof < q.pof)
    };

    let mut best: Option<(f64, &ParetoPoint)> = None;
    for p in &front {
        let d = inside(p);
        if d <= KNEE_EPS {
            continue;
        }
        if best.is_none_or(|(bd, bp)| better(d, bd, p, bp)) {
            best = Some((d, p));
        }
    }
    if let Some((_, p)) = best {
        return Ok(p.clone());
    }

    let mut best: Option<(f64, &ParetoPoint)> = None;
    for p in &front {
        let (x, y) = norm(p);
        let score = -(x * x + y * y).sqrt();
        if best.is_none_or(|(bs, bp)| better(score, bs, p, bp)) {
            best = Some((score, p));
        }
    }
    Ok(best.expect("front has at least two points").1.clone())
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn pt(gini: f64, pof: f64) -> ParetoPoint {
        ParetoPoint {
            family: Family::Bargaining,
            param: 0.0,
            hc_kw: 1.0,
            pof,
            gini,
            status: SolveStatus::Optimal,
            allocation: Vec::new(),
        }
    }

    fn coords(ps: &[ParetoPoint]) -> Vec<(f64, f64)> {
        ps.iter().map(|p| (p.gini, p.pof)).collect()
    }

    #[test]
    fn filter_examples() {
        let all = [pt(0.0, 1.0), pt(1.0, 0.0), pt(0.2, 0.2)];
        assert_eq!(coords(&pareto_filter(&all)), coords(&all));
        assert_eq!(coords(&pareto_filter(&[pt(0.2, 0.2), pt(0.3, 0.3)])), vec![(0.2, 0.2)]);
        assert_eq!(coords(&pareto_filter(&[pt(0.2, 0.2), pt(0.2, 0.2)])), vec![(0.2, 0.2)]);
        let mut failed = pt(0.0, 0.0);
        failed.pof = f64::NAN;
        assert_eq!(pareto_filter(&[failed]).len(), 0);
    }

    #[test]
    fn knee_examples() {
        let k = knee_point(&[pt(0.0, 1.0), pt(1.0, 0.0), pt(0.1, 0.1)]).unwrap();
        assert_eq!((k.gini, k.pof), (0.1, 0.1));

        // two points: equal norms, lower PoF wins
        let k = knee_point(&[pt(0.0, 1.0), pt(1.0, 0.0)]).unwrap();
        assert_eq!((k.gini, k.pof), (1.0, 0.0));

        // collinear: middle point lies on the chord, so the fallback decides
        let k = knee_point(&[pt(0.0, 1.0), pt(0.5, 0.5), pt(1.0, 0.0)]).unwrap();
        assert_eq!((k.gini, k.pof), (0.5, 0.5));

        assert_eq!(knee_point(&[pt(0.3, 0.3), pt(0.3, 0.3)]), Err(ParetoError::DegenerateFrontier));
        assert_eq!(knee_point(&[pt(0.1, 0.1), pt(0.3, 0.3)]).unwrap().gini, 0.1);
    }

    #[test]
    fn knee_ignores_points_outside_the_chord() {
        // (0.6, 0.6) is nondominated but bulges away from the origin
        let pts = [pt(0.0, 1.0), pt(0.6, 0.6), pt(1.0, 0.0), pt(0.2, 0.7)];
        let k = knee_point(&pts).unwrap();
        assert_eq!((k.gini, k.pof), (0.2, 0.7));
    }

    #[test]
    fn knee_is_affine_invariant() {
        let pts = [pt(0.0, 0.9), pt(0.2, 0.3), pt(0.5, 0.1), pt(0.9, 0.0)];
        let k = knee_point(&pts).unwrap();
        let scaled: Vec<ParetoPoint> = pts.iter().map(|p| pt(3.0 * p.gini + 1.0, 0.5 * p.pof - 2.0)).collect();
        let ks = knee_point(&scaled).unwrap();
        assert_eq!(ks.gini, 3.0 * k.gini + 1.0);
    }

    #[test]
    fn csv_round_trip() {
        let mut a = pt(0.25, 0.125);
        a.param = f64::NAN;
        a.family = Family::EndpointUti;
        let csv = points_to_csv(&[a, pt(0.0, 1.0)]);
        assert!(csv.starts_with("family,param,hc_kw,pof,gini,status\nendpoint_uti,nan,1.000000,0.125000,0.250000,optimal\n"));
        let back = read_frontier_csv(&csv).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].family, Family::Bargaining);
        assert!(matches!(read_frontier_csv("x\n"), Err(ParetoError::Csv { line: 1, .. })));
    }

    #[test]
    fn bargaining_two_steps_recovers_endpoints() {
        let feeder = fixtures::linear_three_bus_feeder();
        let f = sweep(&feeder, SweepFamily::Bargaining, 2, &SolverOptions::default(), 1).unwrap();
        assert_eq!(f.points.len(), 4);
        let at = |k: f64| f.points.iter().find(|p| p.family == Family::Bargaining && p.param == k).unwrap();
        assert!((at(0.0).hc_kw - f.egal_ref.hc_total).abs() <= 0.005 * f.egal_ref.hc_total);
        assert!((at(1.0).hc_kw - f.uti_ref.hc_total).abs() <= 0.005 * f.uti_ref.hc_total);
        let uti = f.points.iter().find(|p| p.family == Family::EndpointUti).unwrap();
        let egal = f.points.iter().find(|p| p.family == Family::EndpointEgal).unwrap();
        assert_eq!(uti.pof, 0.0);
        assert_eq!(egal.gini, 0.0);
        assert!(f.points.windows(2).all(|w| w[0].gini <= w[1].gini));
    }

    #[test]
    fn bounded_lower_alpha_one_keeps_every_load_at_the_egalitarian_floor() {
        let feeder = fixtures::star_three_bus_feeder();
        let f = sweep(&feeder, SweepFamily::BoundedLower, 3, &SolverOptions::default(), 1).unwrap();
        let floor = f.egal_ref.allocation[0];
        let p = f.points.iter().find(|p| p.family == Family::BoundedLower && p.param == 1.0).unwrap();
        assert!(p.allocation.iter().all(|a| *a >= floor - 1e-6), "{:?} vs {floor}", p.allocation);
        assert!(p.hc_kw >= f.egal_ref.hc_total - 1e-6);
    }

    #[test]
    fn collapsed_bounds_have_zero_gini() {
        let feeder = fixtures::star_three_bus_feeder();
        let opts = SolverOptions::default();
        let (uti, egal) = reference_solutions(&feeder, &opts).unwrap();
        let refs = References {
            p_egal: egal.allocation_pu[0],
            uti_allocation: uti.allocation_pu,
        };
        let nf = to_per_unit(&feeder);
        let p = build_problem(&nf, FairnessPolicy::Bounded { alpha: 1.0, beta: 0.0 }, Some(&refs)).unwrap();
        let sol = solve_hc(&p, &opts).unwrap();
        assert_eq!(gini(&sol.allocation).unwrap().value, 0.0);
    }

    #[test]
    fn bargaining_pof_falls_with_k() {
        let feeder = fixtures::linear_three_bus_feeder();
        let f = sweep(&feeder, SweepFamily::Bargaining, 11, &SolverOptions::default(), 2).unwrap();
        let mut sweep: Vec<&ParetoPoint> = f.points.iter().filter(|p| p.family == Family::Bargaining).collect();
        sweep.sort_by(|a, b| a.param.total_cmp(&b.param));
        for w in sweep.windows(2) {
            assert!(w[1].pof <= w[0].pof + 0.005, "{} -> {}", w[0].pof, w[1].pof);
        }
    }

    #[test]
    fn sweep_is_independent_of_jobs() {
        let feeder = fixtures::branched_four_bus_feeder();
        let opts = SolverOptions::default();
        let a = sweep(&feeder, SweepFamily::BoundedUpper, 5, &opts, 1).unwrap();
        let b = sweep(&feeder, SweepFamily::BoundedUpper, 5, &opts, 3).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.feeder_id, b.feeder_id);
        assert!(matches!(sweep(&feeder, SweepFamily::Bargaining, 1, &opts, 1), Err(ParetoError::TooFewSteps(1))));
    }
}

use super::*;
use crate::fixtures;
use crate::formulation::References;
use crate::netmodel::to_per_unit;

fn opts() -> SolverOptions {
    SolverOptions::default()
}

fn problem(nf: &NormalizedFeeder, policy: FairnessPolicy) -> HCProblem {
    build_problem(nf, policy, None).unwrap()
}

#[test]
fn two_bus_utilitarian_hits_voltage_limit() {
    let nf = fixtures::two_bus(0.05, 0.0, 0.0, 1.05);
    let sol = solve_hc(&problem(&nf, FairnessPolicy::Utilitarian), &opts()).unwrap();
    assert!((sol.hc_total_pu() - 1.05).abs() < 1e-4, "{}", sol.hc_total_pu());
    assert!((sol.hc_total - 1050.0).abs() < 0.1);
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(sol.binding.iter().any(|b| b == "v_upper[a]"), "{:?}", sol.binding);
}

#[test]
fn single_load_policies_coincide() {
    let nf = fixtures::two_bus(0.05, 0.0, 0.0, 1.05);
    let uti = solve_hc(&problem(&nf, FairnessPolicy::Utilitarian), &opts()).unwrap();
    let egal = solve_hc(&problem(&nf, FairnessPolicy::Egalitarian), &opts()).unwrap();
    assert_eq!(uti.allocation, egal.allocation);
}

#[test]
fn egalitarian_bisection_two_bus() {
    let nf = fixtures::two_bus(0.05, 0.0, 0.0, 1.05);
    let sol = solve_egalitarian_bisection(&nf, &opts()).unwrap();
    assert!((sol.allocation_pu[0] - 1.05).abs() < 1e-5, "{:?}", sol);
    assert!(sol.allocation_pu[0] <= 1.05 + 1e-9);
}

#[test]
fn egalitarian_cap_binds() {
    let f = fixtures::two_bus_feeder(0.05, 0.0, 0.0, 1.05).with_dg_cap(300.0).unwrap();
    let sol = solve_egalitarian_bisection(&to_per_unit(&f), &opts()).unwrap();
    assert_eq!(sol.allocation, vec![300.0]);
}

#[test]
fn egalitarian_symmetric_star() {
    let nf = to_per_unit(&fixtures::symmetric_star_feeder());
    let sol = solve_egalitarian_bisection(&nf, &opts()).unwrap();
    assert_eq!(sol.allocation[0], sol.allocation[1]);
    assert_eq!(sol.hc_total, 2.0 * sol.allocation[0]);
    assert!(sol.allocation[0] > 0.0);
}

#[test]
fn overloaded_baseline_is_infeasible() {
    let nf = fixtures::two_bus(0.05, 0.0, 3.0, 1.05);
    assert!(matches!(
        solve_egalitarian_bisection(&nf, &opts()),
        Err(SolverError::Infeasible(_))
    ));
    let p = problem(&nf, FairnessPolicy::Utilitarian);
    assert!(matches!(brute_force_oracle(&p, 11, &opts()), Err(SolverError::Infeasible(_))));
}

#[test]
fn al_matches_bisection_on_two_bus() {
    let nf = fixtures::two_bus(0.05, 0.0, 0.0, 1.05);
    let sol = solve_nlp_al(&problem(&nf, FairnessPolicy::Utilitarian), &opts()).unwrap();
    assert!((sol.hc_total_pu() - 1.05).abs() < 1e-4, "{}", sol.hc_total_pu());
}

#[test]
fn box_only_problem_sits_on_the_upper_bound() {
    let f = fixtures::linear_three_bus_feeder().with_dg_cap(20.0).unwrap();
    let sol = solve_hc(&problem(&to_per_unit(&f), FairnessPolicy::Utilitarian), &opts()).unwrap();
    for a in &sol.allocation {
        assert!((a - 20.0).abs() < 1e-9, "{:?}", sol.allocation);
    }
}

#[test]
fn al_agrees_with_grid_oracle_on_chain() {
    let nf = fixtures::linear_three_bus();
    let p = problem(&nf, FairnessPolicy::Utilitarian);
    let al = solve_hc(&p, &opts()).unwrap();
    let grid = brute_force_oracle(&p, 201, &opts()).unwrap();
    let step = nf.dg_cap / 200.0;
    assert!(
        (al.hc_total_pu() - grid.hc_total_pu()).abs() <= 0.01 * grid.hc_total_pu() + step,
        "al {} grid {}",
        al.hc_total_pu(),
        grid.hc_total_pu()
    );
}

#[test]
fn oracle_single_load_fine_grid() {
    let nf = fixtures::two_bus(0.05, 0.0, 0.0, 1.05);
    let p = problem(&nf, FairnessPolicy::Utilitarian);
    let sol = brute_force_oracle(&p, 1001, &opts()).unwrap();
    let step = nf.dg_cap / 1000.0;
    assert!((sol.hc_total_pu() - 1.05).abs() <= step);
}

#[test]
fn oracle_bounds_al_objective_for_bargaining() {
    let nf = fixtures::star_three_bus();
    let p = problem(&nf, FairnessPolicy::Bargaining { k: 0.5 });
    let grid = brute_force_oracle(&p, 201, &opts()).unwrap();
    let al = solve_hc(&p, &opts()).unwrap();
    let step = nf.dg_cap / 200.0;
    assert!(al.objective >= grid.objective - 1e-6, "al {} grid {}", al.objective, grid.objective);
    assert!(al.objective <= grid.objective + 2.0 * step);
    assert!(al.disparity.is_some());
}

#[test]
fn oracle_rejects_large_feeders() {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
    let nf = to_per_unit(&fixtures::random_feeder(&mut rng, 6));
    let p = problem(&nf, FairnessPolicy::Utilitarian);
    assert_eq!(
        brute_force_oracle(&p, 3, &opts()).unwrap_err(),
        SolverError::TooManyLoads { max: 3, got: 5 }
    );
}

#[test]
fn bargaining_k_one_matches_utilitarian() {
    let nf = fixtures::linear_three_bus();
    let uti = solve_hc(&problem(&nf, FairnessPolicy::Utilitarian), &opts()).unwrap();
    let bar = solve_hc(&problem(&nf, FairnessPolicy::Bargaining { k: 1.0 }), &opts()).unwrap();
    assert!((uti.hc_total - bar.hc_total).abs() <= 0.005 * uti.hc_total);
}

#[test]
fn bargaining_k_zero_reports_egalitarian() {
    let nf = fixtures::linear_three_bus();
    let egal = solve_egalitarian_bisection(&nf, &opts()).unwrap();
    let bar = solve_hc(&problem(&nf, FairnessPolicy::Bargaining { k: 0.0 }), &opts()).unwrap();
    assert_eq!(egal.allocation, bar.allocation);
    assert_eq!(bar.disparity, Some(0.0));
}

#[test]
fn bounded_collapsed_box_returns_egalitarian() {
    let nf = fixtures::linear_three_bus();
    let egal = solve_egalitarian_bisection(&nf, &opts()).unwrap();
    let uti = solve_hc(&problem(&nf, FairnessPolicy::Utilitarian), &opts()).unwrap();
    let refs = References {
        p_egal: egal.allocation_pu[0],
        uti_allocation: uti.allocation_pu.clone(),
    };
    let p = build_problem(&nf, FairnessPolicy::Bounded { alpha: 1.0, beta: 0.0 }, Some(&refs)).unwrap();
    let sol = solve_hc(&p, &opts()).unwrap();
    assert!((sol.hc_total_pu() - egal.hc_total_pu()).abs() <= 1e-6);
}

#[test]
fn returned_solutions_are_feasible() {
    for nf in [fixtures::linear_three_bus(), fixtures::star_three_bus(), fixtures::branched_four_bus()] {
        for policy in [FairnessPolicy::Utilitarian, FairnessPolicy::Bargaining { k: 0.6 }] {
            let sol = solve_hc(&problem(&nf, policy), &opts()).unwrap();
            let q: Vec<f64> = vec![0.0; sol.allocation_pu.len()];
            let st = crate::powerflow::solve_power_flow(&nf, &sol.allocation_pu, &q).unwrap();
            let res = crate::powerflow::constraint_residuals(&st, &nf);
            assert!(res.is_feasible(1e-6), "{policy}: min residual {}", res.min());
        }
    }
}

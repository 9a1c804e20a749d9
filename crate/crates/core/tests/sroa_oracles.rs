mod support;

use hfl_core::sroa::DeadlineBounds;
use hfl_core::{
    generate_scenario, geo_initial_assignment, sroa, DeadlineSearch, GeneratorConfig, Infeasible,
    InnerSolver, Scenario, SolverConfig, SroaOutcome,
};
use support::oracle;

fn scenario(seed: u64, n: usize, m: usize) -> Scenario {
    generate_scenario(seed, n, m, &GeneratorConfig::default()).unwrap()
}

#[test]
fn single_user_within_one_percent_of_grid() {
    for seed in 0..5 {
        let s = scenario(seed, 1, 1);
        let a = geo_initial_assignment(&s);
        let r = sroa(&s, &a, &SolverConfig::default()).unwrap().objective();
        let grid = oracle::grid_single_user(&s, 120);
        assert!(r <= grid * 1.01, "seed {seed}: {r} vs grid {grid}");
    }
}

#[test]
fn two_users_within_two_percent_of_oracle() {
    for seed in 0..3 {
        let s = scenario(seed, 2, 1);
        let a = geo_initial_assignment(&s);
        let r = sroa(&s, &a, &SolverConfig::default()).unwrap().objective();
        let o = oracle::two_user_oracle(&s);
        assert!(r <= o * 1.02, "seed {seed}: {r} vs oracle {o}");
    }
}

#[test]
fn reported_objective_matches_hand_count() {
    let s = scenario(4, 12, 3).with_importance_weight(2.5);
    let a = geo_initial_assignment(&s);
    let out = sroa(&s, &a, &SolverConfig::default()).unwrap();
    let sol = out.solution().unwrap();
    let al = &sol.allocation;
    let hand = oracle::objective(&s, &a, &al.bandwidth, &al.cpu_freq, &al.power);
    assert!(
        (sol.objective / hand - 1.0).abs() < 1e-12,
        "{} vs {hand}",
        sol.objective
    );
}

#[test]
fn every_variant_returns_a_feasible_allocation() {
    let s = scenario(2, 10, 2);
    let a = geo_initial_assignment(&s);
    for inner in [
        InnerSolver::BandwidthPrice,
        InnerSolver::MinEnergy,
        InnerSolver::BandwidthRule,
    ] {
        for search in [DeadlineSearch::Golden, DeadlineSearch::Descent] {
            let cfg = SolverConfig {
                inner,
                deadline_search: search,
                ..SolverConfig::default().with_tolerance(1e-5)
            };
            let out = sroa(&s, &a, &cfg).unwrap();
            let sol = out
                .solution()
                .unwrap_or_else(|| panic!("{inner:?}/{search:?} infeasible"));
            sol.allocation.check_feasible(&s, 1e-6).unwrap();
            let budget = s.params.total_bandwidth;
            assert!(sol.allocation.total_bandwidth() <= budget * (1.0 + 1e-6));
        }
    }
}

#[test]
fn latency_fits_the_deadline() {
    for seed in 0..3 {
        let s = scenario(seed, 20, 3);
        let a = geo_initial_assignment(&s);
        let out = sroa(&s, &a, &SolverConfig::default()).unwrap();
        let sol = out.solution().unwrap();
        let (i, k) = (
            f64::from(s.params.global_iters),
            f64::from(s.params.edge_iters),
        );
        for (n, m) in a.edge_of(s.n_users()).into_iter().enumerate() {
            let al = &sol.allocation;
            let (lat, _) =
                oracle::round_cost(&s, n, m, al.bandwidth[n], al.cpu_freq[n], al.power[n]);
            let run = i * (s.params.model_size / s.edges[m].cloud_rate + k * lat);
            assert!(
                run <= sol.deadline * (1.0 + 1e-9),
                "seed {seed} user {n}: {run} > {}",
                sol.deadline
            );
        }
    }
}

#[test]
fn single_edge_spends_the_whole_budget() {
    let s = scenario(9, 8, 1);
    let a = geo_initial_assignment(&s);
    let sol = sroa(&s, &a, &SolverConfig::default()).unwrap();
    let sol = sol.solution().unwrap();
    let budget = s.params.total_bandwidth;
    assert!((sol.allocation.total_bandwidth() / budget - 1.0).abs() < 1e-5);
    assert!((sol.edge_bandwidth[0] / budget - 1.0).abs() < 1e-5);
}

#[test]
fn impossible_deadline_bracket_is_reported() {
    let s = scenario(1, 10, 2);
    let a = geo_initial_assignment(&s);
    let cfg = SolverConfig {
        deadline_bounds: DeadlineBounds::Explicit { low: 1.0, up: 2.0 },
        ..SolverConfig::default()
    };
    match sroa(&s, &a, &cfg).unwrap() {
        SroaOutcome::Infeasible(Infeasible::NoFeasibleDeadline { low, up }) => {
            assert_eq!((low, up), (1.0, 2.0));
        }
        other => panic!("expected no feasible deadline, got {:?}", other.objective()),
    }
}

#[test]
fn larger_lambda_trades_energy_for_time() {
    let base = scenario(5, 15, 3);
    let a = geo_initial_assignment(&base);
    let cfg = SolverConfig::default();
    let lo = sroa(&base.with_importance_weight(0.1), &a, &cfg).unwrap();
    let hi = sroa(&base.with_importance_weight(10.0), &a, &cfg).unwrap();
    let (lo, hi) = (
        &lo.solution().unwrap().report,
        &hi.solution().unwrap().report,
    );
    assert!(hi.t_sum < lo.t_sum);
    assert!(hi.e_sum > lo.e_sum);
}

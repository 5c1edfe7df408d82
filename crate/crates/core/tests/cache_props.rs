mod common;

use prepline_core::cache::{plan_cost, plan_dag, Assignment};
use prepline_core::rng::SeededRng;

#[test]
fn planner_matches_exhaustive_search() {
    let mut rng = SeededRng::new(11);
    for case in 0..500 {
        let n = 1 + rng.below(12);
        let (parents, costs, targets) = common::random_dag(&mut rng, n);
        let plan = plan_dag(&parents, &costs, &targets);
        let best = common::brute_force_cut(&parents, &costs, &targets);
        assert!((plan.total_cost - best).abs() < 1e-9, "case {case}: planner {} vs optimum {best}", plan.total_cost);
        let checked = plan_cost(&parents, &costs, &targets, &plan.assignment).expect("feasible plan");
        assert!((checked - plan.total_cost).abs() < 1e-9, "case {case}");
    }
}

#[test]
fn targets_are_never_pruned() {
    let mut rng = SeededRng::new(12);
    for _ in 0..200 {
        let n = 1 + rng.below(12);
        let (parents, costs, targets) = common::random_dag(&mut rng, n);
        let plan = plan_dag(&parents, &costs, &targets);
        for (a, &t) in plan.assignment.iter().zip(&targets) {
            assert!(!t || *a != Assignment::Prune);
        }
    }
}

#[test]
fn cache_does_not_change_metrics() {
    let pairs = common::corpus_cache_pairs();
    assert!(pairs.iter().filter(|(_, off, _)| off.is_some()).count() >= 20);
    for (name, off, on) in pairs {
        assert_eq!(off.map(f64::to_bits), on.map(f64::to_bits), "{name}");
    }
}

#[test]
fn warm_rerun_skips_the_quadratic_step() {
    let (cold, warm, m_cold, m_warm) = common::warm_cold_timing(50_000);
    assert_eq!(m_cold, m_warm);
    assert!(warm.as_secs_f64() <= 0.5 * cold.as_secs_f64(), "warm {warm:?} vs cold {cold:?}");
}

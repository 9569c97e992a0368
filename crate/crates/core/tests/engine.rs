use idpas::milp::{collect_solution_pool, solve_mip, NodeOrder, SolveStatus, SolverConfig};
use idpas::mip::{MipInstance, Sense};
use idpas::oracle::{enumerate_feasible, enumerate_optimum, random_instance};

#[test]
fn random_small_instances_match_enumeration() {
    for seed in 0..50u64 {
        let n = 6 + (seed % 7) as usize;
        let inst = random_instance(1000 + seed, n);
        let (opt, _) = enumerate_optimum(&inst).expect("feasible by construction");
        let r = solve_mip(&inst, &SolverConfig::with_node_limit(1_000_000)).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal, "seed {seed}");
        let got = r.best_objective().unwrap();
        assert!((got - opt).abs() <= 1e-6, "seed {seed}: {got} vs {opt}");
        let sol = r.best_solution.as_ref().unwrap();
        assert!(inst.check_feasibility(&sol.values, 1e-6).unwrap().feasible);
        assert!((r.best_bound - got).abs() <= 1e-6 * got.abs().max(1.0));
    }
}

#[test]
fn depth_first_and_pseudocost_agree_with_enumeration() {
    for seed in 0..10u64 {
        let inst = random_instance(5000 + seed, 8);
        let (opt, _) = enumerate_optimum(&inst).unwrap();
        let cfg = SolverConfig {
            node_order: NodeOrder::DepthFirst,
            branch_rule: idpas::milp::BranchRule::PseudoCost,
            ..SolverConfig::with_node_limit(1_000_000)
        };
        let r = solve_mip(&inst, &cfg).unwrap();
        assert!((r.best_objective().unwrap() - opt).abs() <= 1e-6, "seed {seed}");
    }
}

#[test]
fn node_limited_runs_are_deterministic() {
    let inst = random_instance(77, 12);
    let cfg = SolverConfig::with_node_limit(25);
    let a = solve_mip(&inst, &cfg).unwrap();
    let b = solve_mip(&inst, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn added_rows_never_improve_the_optimum() {
    for seed in 0..10u64 {
        let parent = random_instance(9000 + seed, 7);
        let mut child = parent.clone();
        child.add_row((0..7).map(|j| (j, 1.0)).collect(), Sense::LE, 4.0);
        let cfg = SolverConfig::with_node_limit(1_000_000);
        let p = solve_mip(&parent, &cfg).unwrap().best_objective().unwrap();
        match solve_mip(&child, &cfg).unwrap().best_objective() {
            Some(c) => assert!(c >= p - 1e-9),
            None => assert!(enumerate_optimum(&child).is_none()),
        }
    }
}

#[test]
fn lp_bound_is_below_every_integer_point() {
    for seed in 0..10u64 {
        let inst = random_instance(300 + seed, 6);
        let lp = idpas::lp::solve_lp_relaxation(&inst).unwrap();
        for x in enumerate_feasible(&inst) {
            assert!(lp.objective <= inst.evaluate_objective(&x).unwrap() + 1e-7);
        }
    }
}

#[test]
fn pool_holds_best_distinct_points() {
    for seed in 0..8u64 {
        let inst: MipInstance = random_instance(700 + seed, 5);
        let mut objs: Vec<f64> = enumerate_feasible(&inst).iter().map(|x| inst.evaluate_objective(x).unwrap()).collect();
        objs.sort_by(f64::total_cmp);
        let (pool, _) = collect_solution_pool(&inst, 10, &SolverConfig::with_node_limit(1_000_000), 2).unwrap();
        let got: Vec<f64> = pool.iter().map(|s| s.objective).collect();
        let want: Vec<f64> = objs.iter().take(10).copied().collect();
        assert_eq!(got.len(), want.len(), "seed {seed}");
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "seed {seed}: {got:?} vs {want:?}");
        }
        assert!(pool.iter().all(|s| s.feasible));
    }
}

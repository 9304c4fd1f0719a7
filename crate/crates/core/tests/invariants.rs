use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use quadcut::bnb::{self, BnbConfig, SolveStatus};
use quadcut::linalg;
use quadcut::model::{MiqpInstance, VariableDomain};
use quadcut::relax::{self, CuttingSurfaceConfig, RelaxContext};
use quadcut::separation::{SeparationMode, StepQuantities};

fn symmetric(n: usize, entries: &[i32]) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            q[(i, j)] = entries[k] as f64;
            q[(j, i)] = entries[k] as f64;
            k += 1;
        }
    }
    q
}

fn binary_instance(n: usize, entries: &[i32], linear: &[i32], card: Option<usize>) -> MiqpInstance {
    let q = symmetric(n, entries);
    let c = DVector::from_iterator(n, linear.iter().map(|&v| v as f64));
    let (a, b) = match card {
        Some(k) => (DMatrix::from_element(1, n, 1.0), DVector::from_element(1, k as f64)),
        None => (DMatrix::zeros(0, n), DVector::zeros(0)),
    };
    MiqpInstance::new(q, c, a, b, vec![VariableDomain::binary(); n]).unwrap()
}

fn instance_strategy() -> impl Strategy<Value = MiqpInstance> {
    (3usize..=7).prop_flat_map(|n| {
        let tri = n * (n + 1) / 2;
        (
            Just(n),
            prop::collection::vec(-20i32..=20, tri),
            prop::collection::vec(-20i32..=20, n),
            prop::option::of(1usize..n),
        )
            .prop_map(|(n, e, l, card)| binary_instance(n, &e, &l, card))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn step_keeps_barrier_positive(
        v in 1e-3f64..1e3,
        eta in 0.0f64..100.0,
        rho in 1e-6f64..10.0,
        d in -1.0f64..50.0,
        sigma in 1e-4f64..10.0,
    ) {
        let delta = StepQuantities::new(v, eta, rho, d, sigma).step();
        prop_assert!(delta.is_finite());
        prop_assert!(1.0 + delta * v > 0.0);
    }

    #[test]
    fn root_bound_below_optimum(inst in instance_strategy()) {
        let ctx = RelaxContext::new(&inst).unwrap();
        let opt = bnb::brute_force_oracle(&inst).unwrap().unwrap().0;
        if relax::is_convex(&inst, &ctx).unwrap() {
            return Ok(());
        }
        let alpha = relax::select_alpha(&inst).unwrap().alpha;
        let cs = relax::cutting_surface(&inst, &ctx, alpha, &CuttingSurfaceConfig::default()).unwrap();
        let slack = 1e-6 * opt.abs().max(1.0);
        prop_assert!(cs.bound <= opt + slack, "bound {} above optimum {}", cs.bound, opt);
        prop_assert!(cs.bound + slack >= cs.initial_bound);
        for d in &cs.pool.cuts {
            let m = &inst.quad + DMatrix::from_diagonal(d);
            let lam = linalg::projected_min_eigenvalue(&m, &ctx.basis).unwrap();
            prop_assert!(lam >= -1e-6, "cut not convex on nullspace: {lam}");
        }
    }

    #[test]
    fn bnb_matches_enumeration(inst in instance_strategy()) {
        let opt = bnb::brute_force_oracle(&inst).unwrap().unwrap().0;
        let cfg = BnbConfig { rel_tol: 0.0, abs_tol: 1e-7, ..Default::default() };
        let rep = bnb::solve(&inst, &cfg);
        prop_assert_eq!(rep.status, SolveStatus::Optimal);
        prop_assert!((rep.upper_bound - opt).abs() <= 1e-6, "ubd {} vs {}", rep.upper_bound, opt);
        let x = rep.best_point.unwrap();
        prop_assert!(inst.is_feasible(&x, 1e-7));
        prop_assert!((inst.evaluate_objective(&x) - rep.upper_bound).abs() <= 1e-6);
    }
}

#[test]
fn pruned_nodes_hold_no_better_point() {
    let n = 8;
    let tri = n * (n + 1) / 2;
    let entries: Vec<i32> = (0..tri).map(|k| ((k * 37 + 11) % 41) as i32 - 20).collect();
    let linear: Vec<i32> = (0..n).map(|k| ((k * 13 + 5) % 31) as i32 - 15).collect();
    let inst = binary_instance(n, &entries, &linear, Some(3));
    let cfg = BnbConfig {
        rel_tol: 0.0,
        abs_tol: 1e-7,
        record_pruned: true,
        ..Default::default()
    };
    let rep = bnb::solve(&inst, &cfg);
    assert_eq!(rep.status, SolveStatus::Optimal);
    assert!(!rep.pruned.is_empty());
    for node in &rep.pruned {
        if let Some((best, _)) = bnb::brute_force_in_box(&inst, &node.lower, &node.upper).unwrap() {
            assert!(node.lb <= best + 1e-6, "node bound {} exceeds box optimum {best}", node.lb);
        }
    }
}

#[test]
fn nonsmooth_mode_solves_too() {
    let inst = binary_instance(5, &[3, -8, 4, 6, -2, 1, 5, -7, 3, -4, 2, 9, 0, -6, 1], &[1, -3, 2, 0, 4], Some(2));
    let opt = bnb::brute_force_oracle(&inst).unwrap().unwrap().0;
    let cfg = BnbConfig {
        mode: SeparationMode::Nonsmooth,
        rel_tol: 0.0,
        abs_tol: 1e-7,
        ..Default::default()
    };
    let rep = bnb::solve(&inst, &cfg);
    assert!((rep.upper_bound - opt).abs() <= 1e-6);
    assert!(rep.root_bound <= opt + 1e-6);
}

#[test]
fn instance_json_round_trip() {
    let inst = binary_instance(4, &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10], &[1, 2, 3, 4], Some(2));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("inst.json");
    quadcut::model::save_instance(&inst, &path).unwrap();
    let back = quadcut::model::load_instance(&path).unwrap();
    assert_eq!(back.quad, inst.quad);
    assert_eq!(back.linear, inst.linear);
    assert_eq!(back.a, inst.a);
    assert_eq!(back.domains, inst.domains);
}

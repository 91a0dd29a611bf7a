mod common;

use common::*;
use hgm_core::model::{DataMatrix, GroupAssignment};
use hgm_core::selection::*;
use hgm_core::simbench::{edge_confusion, sample_dataset, SimulationSpec};
use hgm_core::solver::{fit_from_groups, SolverConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn sim(seed: u64, n: usize, k: usize, reps: usize) -> SimulationSpec {
    SimulationSpec {
        n,
        k,
        block_size: 5,
        rho: 0.8,
        replicates_per_node: reps,
        noise_sd: 1.0,
        seed,
    }
}

#[test]
fn bic_worked_example() {
    // p = 100, n = 50, K = 5, s = 10, L = 2.5
    let complexity = 5.0 + 100.0 + 5.0 * 52.0 - 1.0;
    let want = 2.5 + (100f64).ln() / 50.0 * complexity;
    assert!((bic_value(2.5, 10, 100, 50, 5) - want).abs() < 1e-12);
}

#[test]
fn log_grid_endpoints_and_spacing() {
    let g = log_grid(2.0, 100.0, 5);
    assert_eq!(g.len(), 5);
    assert_eq!(g[0], 2.0);
    assert!((g[4] - 0.02).abs() < 1e-15);
    for w in g.windows(2) {
        assert!((w[0] / w[1] - 100f64.powf(0.25)).abs() < 1e-12);
    }
    assert_eq!(log_grid(3.0, 10.0, 1), vec![3.0]);
    assert!(log_grid(3.0, 10.0, 0).is_empty());
}

#[test]
fn argmin_bic_takes_the_first_minimum() {
    let rec = |lambda: f64, bic: f64| BicRecord { k: 2, lambda, bic, neg_log_lik: 0.0, s: 0, converged: true };
    let rs = [rec(0.5, 3.0), rec(0.3, 1.0), rec(0.2, 1.0), rec(0.1, 2.0)];
    assert_eq!(argmin_bic(&rs), Some(1));
    assert_eq!(argmin_bic(&[]), None);
}

#[test]
fn select_lambda_best_is_the_path_minimum() {
    let (x, _) = sample_dataset(&sim(3, 60, 10, 4)).unwrap();
    let cfg = SolverConfig { restarts: 3, ..SolverConfig::new(10, 0.1) };
    let grid = [0.05, 0.4, 0.1, 0.2];
    let path = select_lambda(&x, 10, &grid, &cfg).unwrap();
    assert!(path.failures.is_empty());
    let lambdas: Vec<f64> = path.records.iter().map(|r| r.lambda).collect();
    assert_eq!(lambdas, vec![0.4, 0.2, 0.1, 0.05]);
    let min = path.records.iter().map(|r| r.bic).fold(f64::INFINITY, f64::min);
    assert_eq!(path.best.bic, min);
    for r in &path.records {
        assert!((r.bic - bic_value(r.neg_log_lik, r.s, x.p(), x.n(), 10)).abs() < 1e-12);
    }
}

#[test]
fn singleton_grid_and_duplicate_values() {
    let (x, _) = sample_dataset(&sim(4, 40, 5, 3)).unwrap();
    let cfg = SolverConfig { restarts: 2, ..SolverConfig::new(5, 0.1) };
    let one = select_lambda(&x, 5, &[0.3], &cfg).unwrap();
    assert_eq!(one.records.len(), 1);
    assert_eq!(one.best.lambda, 0.3);
    let dup = select_lambda(&x, 5, &[0.3, 0.3], &cfg).unwrap();
    assert_eq!(dup.records, one.records);
    assert!(select_lambda(&x, 5, &[], &cfg).is_err());
    assert!(select_lambda(&x, 5, &[0.1, -1.0], &cfg).is_err());
}

#[test]
fn equal_bic_goes_to_the_larger_lambda() {
    // with K = 1 there are no off-diagonal entries, so every lambda that
    // leaves the fit unchanged gives the same BIC
    let mut r = rng(9);
    let z: Vec<f64> = (0..30).map(|_| normal(&mut r)).collect();
    let x = DataMatrix::new(DMatrix::from_fn(30, 4, |i, _| z[i] + 0.1 * normal(&mut r))).unwrap();
    let cfg = SolverConfig::new(1, 0.1);
    let path = select_lambda(&x, 1, &[1e-9, 2e-9, 3e-9], &cfg).unwrap();
    let b: Vec<f64> = path.records.iter().map(|r| r.bic).collect();
    if b[0] == b[1] && b[1] == b[2] {
        assert_eq!(path.best.lambda, 3e-9);
    } else {
        let min = b.iter().copied().fold(f64::INFINITY, f64::min);
        let first = path.records.iter().find(|r| r.bic == min).unwrap();
        assert_eq!(path.best.lambda, first.lambda);
    }
}

#[test]
fn select_k_recovers_the_true_number_of_groups() {
    let spec = SimulationSpec { noise_sd: 0.5, ..sim(11, 100, 5, 10) };
    let (x, _) = sample_dataset(&spec).unwrap();
    let cfg = SolverConfig { restarts: 5, ..SolverConfig::new(5, 0.1) };
    let sel = select_k(&x, &[8, 3, 5], &LambdaGrid::Auto { count: 6 }, &cfg).unwrap();
    assert_eq!(sel.best.k, 5);
    let ks: Vec<usize> = sel.paths.iter().map(|p| p.best.k).collect();
    assert_eq!(ks, vec![3, 5, 8]);
}

#[test]
fn selected_lambda_edge_recovery_sits_between_the_endpoints() {
    let spec = sim(21, 180, 20, 5);
    let (x, truth) = sample_dataset(&spec).unwrap();
    let cfg = SolverConfig::new(20, 0.1);
    let grid = log_grid(1.0, 100.0, 8);
    let rates = |lambda: f64| {
        let c = SolverConfig { lambda, ..cfg.clone() };
        let (st, _) = fit_from_groups(&x, &c, truth.g_true.clone(), false, None).unwrap();
        let conf = edge_confusion(&st.omega, &truth.omega_true).unwrap();
        (conf.sensitivity(), conf.specificity())
    };
    // fixed groups isolate the lambda choice from clustering noise
    let bics: Vec<f64> = grid
        .iter()
        .map(|&lambda| {
            let c = SolverConfig { lambda, ..cfg.clone() };
            let (st, _) = fit_from_groups(&x, &c, truth.g_true.clone(), false, None).unwrap();
            hgm_core::selection::bic(&st, &x, 20)
        })
        .collect();
    let best = grid[bics.iter().enumerate().fold(0, |b, (i, v)| if *v < bics[b] { i } else { b })];
    let (sens, spec_) = rates(best);
    let (sens_hi, _) = rates(grid[0]);
    let (_, spec_lo) = rates(*grid.last().unwrap());
    assert!(sens >= sens_hi);
    assert!(spec_ >= spec_lo);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bic_is_increasing_in_complexity_and_likelihood(
        l in -50.0f64..50.0,
        s in 0usize..1000,
        p in 2usize..5000,
        n in 1usize..500,
        k in 1usize..50,
        dl in 1e-6f64..10.0,
    ) {
        let b = bic_value(l, s, p, n, k);
        prop_assert!(bic_value(l, s + 1, p, n, k) > b);
        prop_assert!(bic_value(l + dl, s, p, n, k) > b);
        prop_assert!(bic_value(l, s, p, n, k + 1) > b);
        // linear in L with unit slope
        prop_assert!((bic_value(l + dl, s, p, n, k) - b - dl).abs() <= 1e-12 * b.abs().max(1.0) + 1e-12);
    }

    #[test]
    fn grid_order_does_not_matter(seed in 0u64..4) {
        let (x, _) = sample_dataset(&sim(seed + 30, 30, 5, 2)).unwrap();
        let cfg = SolverConfig { restarts: 2, ..SolverConfig::new(5, 0.1) };
        let a = select_lambda(&x, 5, &[0.1, 0.3, 0.6], &cfg).unwrap();
        let b = select_lambda(&x, 5, &[0.6, 0.1, 0.3], &cfg).unwrap();
        prop_assert_eq!(a.records, b.records);
        let _ = GroupAssignment::new(vec![0], 1);
    }
}

//! Tuning-parameter selection by BIC: a grid over `lambda` for each `K`,
//! then a comparison of the per-`K` minima.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::clustering::kmeans_init;
use crate::error::{HgmError, Result};
use crate::model::{DataMatrix, HgmState};
use crate::par;
use crate::precision::GramMatrix;
use crate::solver::{fit, SolverConfig};

/// Number of points in the default lambda grid.
pub const DEFAULT_GRID_POINTS: usize = 50;
/// `lambda_max / lambda_min` of the default grid.
pub const DEFAULT_GRID_RATIO: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicRecord {
    pub k: usize,
    pub lambda: f64,
    pub bic: f64,
    pub neg_log_lik: f64,
    /// Off-diagonal nonzeros of the estimated precision matrix.
    pub s: usize,
    pub converged: bool,
}

/// `L + (log p / n) (s/2 + p + K(n+2) - 1)`.
pub fn bic_value(neg_log_lik: f64, s: usize, p: usize, n: usize, k: usize) -> f64 {
    let complexity = s as f64 / 2.0 + p as f64 + (k * (n + 2)) as f64 - 1.0;
    neg_log_lik + libm::log(p as f64) / n as f64 * complexity
}

/// BIC of a fitted state on `x`.
pub fn bic(state: &HgmState, x: &DataMatrix, k: usize) -> f64 {
    bic_value(state.neg_log_lik, state.omega.off_diagonal_nonzeros(), x.p(), x.n(), k)
}

/// Position of the smallest BIC, earliest on ties.
pub fn argmin_bic(records: &[BicRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in records.iter().enumerate() {
        if best.is_none_or(|b| r.bic < records[b].bic) {
            best = Some(i);
        }
    }
    best
}

/// `count` logarithmically spaced values from `max` down to `max / ratio`.
pub fn log_grid(max: f64, ratio: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => alloc::vec![max],
        _ => {
            let step = libm::log(ratio) / (count - 1) as f64;
            (0..count).map(|i| max * libm::exp(-step * i as f64)).collect()
        }
    }
}

/// How the lambda grid is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaGrid {
    Explicit(Vec<f64>),
    /// Log-spaced from `lambda_max` of the k-means initialization's Gram
    /// matrix down to `lambda_max / 100`.
    Auto { count: usize },
}

impl LambdaGrid {
    pub fn resolve(&self, x: &DataMatrix, k: usize, cfg: &SolverConfig) -> Result<Vec<f64>> {
        match self {
            LambdaGrid::Explicit(v) => Ok(v.clone()),
            LambdaGrid::Auto { count } => {
                let km = kmeans_init(x, k, cfg.seed, cfg.kmeans_restarts)?;
                let z = crate::model::HiddenSignals::new(km.centers)?;
                let lmax = GramMatrix::from_signals(&z).lambda_max();
                // K = 1 has no off-diagonal entries to threshold
                let lmax = if lmax > 0.0 { lmax } else { 1.0 };
                Ok(log_grid(lmax, DEFAULT_GRID_RATIO, *count))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LambdaPath {
    pub best: BicRecord,
    /// Successful grid points, in descending lambda order.
    pub records: Vec<BicRecord>,
    pub failures: Vec<(f64, HgmError)>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(HgmError::InvalidConfig("lambda grid is empty".into()));
    }
    if grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(HgmError::InvalidConfig("lambda grid values must be positive".into()));
    }
    Ok(())
}

/// Fits every grid value (largest first) at fixed `k` and returns the
/// minimal-BIC record; ties go to the larger lambda. A failing grid point is
/// recorded and skipped.
pub fn select_lambda(x: &DataMatrix, k: usize, grid: &[f64], cfg: &SolverConfig) -> Result<LambdaPath> {
    check_grid(grid)?;
    let mut lambdas = grid.to_vec();
    lambdas.sort_by(|a, b| b.partial_cmp(a).expect("finite grid"));
    lambdas.dedup();
    let fits = par::map_indexed(lambdas.len(), |i| {
        let mut c = cfg.clone();
        c.k = k;
        c.lambda = lambdas[i];
        fit(x, &c)
    });
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (lambda, res) in lambdas.iter().zip(fits) {
        match res {
            Ok(fr) => records.push(BicRecord {
                k,
                lambda: *lambda,
                bic: bic(&fr.state, x, k),
                neg_log_lik: fr.state.neg_log_lik,
                s: fr.state.omega.off_diagonal_nonzeros(),
                converged: fr.state.converged,
            }),
            Err(e) => failures.push((*lambda, e)),
        }
    }
    let Some(i) = argmin_bic(&records) else {
        let (_, first) = failures.into_iter().next().expect("non-empty grid");
        return Err(HgmError::AllRestartsFailed(alloc::boxed::Box::new(first)));
    };
    Ok(LambdaPath {
        best: records[i].clone(),
        records,
        failures,
    })
}

#[derive(Debug, Clone)]
pub struct KSelection {
    pub best: BicRecord,
    /// One path per `k`, in ascending `k` order.
    pub paths: Vec<LambdaPath>,
    pub failures: Vec<(usize, HgmError)>,
}

/// Minimal-BIC lambda for every `k`, then the `k` with the smallest of those
/// minima (ties go to the smaller `k`).
pub fn select_k(x: &DataMatrix, k_grid: &[usize], lambda_grid: &LambdaGrid, cfg: &SolverConfig) -> Result<KSelection> {
    if k_grid.is_empty() {
        return Err(HgmError::InvalidConfig("k grid is empty".into()));
    }
    let mut ks = k_grid.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut paths = Vec::new();
    let mut failures = Vec::new();
    for &k in &ks {
        let path = lambda_grid
            .resolve(x, k, cfg)
            .and_then(|grid| select_lambda(x, k, &grid, cfg));
        match path {
            Ok(p) => paths.push(p),
            Err(e) => failures.push((k, e)),
        }
    }
    let minima: Vec<BicRecord> = paths.iter().map(|p| p.best.clone()).collect();
    let Some(i) = argmin_bic(&minima) else {
        let (_, first) = failures.into_iter().next().expect("non-empty k grid");
        return Err(HgmError::AllRestartsFailed(alloc::boxed::Box::new(first)));
    };
    Ok(KSelection {
        best: minima[i].clone(),
        paths,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(k: usize, lambda: f64, bic: f64) -> BicRecord {
        BicRecord {
            k,
            lambda,
            bic,
            neg_log_lik: 0.0,
            s: 0,
            converged: true,
        }
    }

    #[test]
    fn bic_worked_example() {
        let v = bic_value(100.0, 0, 10, 10, 1);
        let expected = 100.0 + 2.1 * core::f64::consts::LN_10;
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 104.835).abs() < 5e-4);
    }

    #[test]
    fn bic_grows_by_log_p_over_n_per_edge_pair() {
        let base = bic_value(12.5, 4, 30, 20, 3);
        let more = bic_value(12.5, 6, 30, 20, 3);
        assert!((more - base - libm::log(30.0) / 20.0).abs() < 1e-12);
    }

    #[test]
    fn ties_prefer_the_first_record() {
        let recs = [record(3, 0.5, 1.0), record(3, 0.2, 1.0), record(3, 0.1, 2.0)];
        assert_eq!(argmin_bic(&recs), Some(0));
        assert_eq!(argmin_bic(&[]), None);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(2.0, 100.0, 50);
        assert_eq!(g.len(), 50);
        assert!((g[0] - 2.0).abs() < 1e-15);
        assert!((g[49] - 0.02).abs() < 1e-14);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(check_grid(&[]).is_err());
        assert!(check_grid(&[0.1, -1.0]).is_err());
    }
}

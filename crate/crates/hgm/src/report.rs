//! JSON report bodies.

use std::path::Path;

use hgm_core::selection::{bic, BicRecord, KSelection};
use hgm_core::simbench::EdgeConfusion;
use hgm_core::{DataMatrix, Estimator, FitTrace, HgmState, SolverConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub seed: u64,
    pub initial_objective: f64,
    /// Penalized objective of the last iteration, if any ran.
    pub final_objective: Option<f64>,
    pub iterations: usize,
    pub oscillation_stop: bool,
    pub diverged: bool,
    pub stop_error: Option<String>,
}

impl RestartSummary {
    pub fn from_trace(t: &FitTrace) -> Self {
        Self {
            restart: t.restart,
            seed: t.seed,
            initial_objective: t.initial_objective,
            final_objective: t.records.last().map(|r| r.objective),
            iterations: t.records.len(),
            oscillation_stop: t.oscillation_stop,
            diverged: t.diverged,
            stop_error: t.stop_error.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub lambda: f64,
    pub estimator: Estimator,
    pub standardized: bool,
    pub fixed_groups: bool,
    /// Penalized objective.
    pub objective: f64,
    /// Unpenalized negative log-likelihood.
    pub neg_log_lik: f64,
    pub bic: f64,
    pub edges: usize,
    pub iterations: usize,
    pub converged: bool,
    pub phi_floored: bool,
    pub group_sizes: Vec<usize>,
    pub selected_restart: Option<usize>,
    pub restarts: Vec<RestartSummary>,
    pub failures: Vec<String>,
}

impl FitSummary {
    pub fn new(
        x: &DataMatrix,
        state: &HgmState,
        cfg: &SolverConfig,
        fixed_groups: bool,
        selected_restart: Option<usize>,
        restarts: Vec<RestartSummary>,
        failures: Vec<String>,
    ) -> Self {
        Self {
            n: x.n(),
            p: x.p(),
            k: cfg.k,
            lambda: cfg.lambda,
            estimator: cfg.estimator,
            standardized: x.is_standardized(),
            fixed_groups,
            objective: state.objective,
            neg_log_lik: state.neg_log_lik,
            bic: bic(state, x, cfg.k),
            edges: state.omega.off_diagonal_nonzeros() / 2,
            iterations: state.iterations,
            converged: state.converged,
            phi_floored: state.phi.floored(),
            group_sizes: state.g.sizes().to_vec(),
            selected_restart,
            restarts,
            failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationEntry {
    pub estimate: String,
    pub lambda: Option<f64>,
    pub confusion: EdgeConfusion,
    pub sensitivity: f64,
    pub specificity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceEntry {
    pub estimate: String,
    pub rates: Vec<f64>,
    pub mean_rate: f64,
    pub fraction_exact: f64,
}

impl CoherenceEntry {
    pub fn new(path: &Path, rates: &[f64]) -> Self {
        let count = rates.len().max(1) as f64;
        Self {
            estimate: path.display().to_string(),
            rates: rates.to_vec(),
            mean_rate: rates.iter().sum::<f64>() / count,
            fraction_exact: rates.iter().filter(|&&r| r == 1.0).count() as f64 / count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub roc: Vec<EvaluationEntry>,
    /// Area under the curve through the ROC rows, when there are several.
    pub auc: Option<f64>,
    pub coherence: Vec<CoherenceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicScanReport {
    pub selected: BicRecord,
    /// Minimal-BIC record for each K that produced one.
    pub per_k: Vec<BicRecord>,
    pub failures: Vec<String>,
}

impl BicScanReport {
    pub fn new(sel: &KSelection) -> Self {
        let mut failures: Vec<String> = sel.failures.iter().map(|(k, e)| format!("k = {k}: {e}")).collect();
        for p in &sel.paths {
            failures.extend(p.failures.iter().map(|(l, e)| format!("k = {}, lambda = {l}: {e}", p.best.k)));
        }
        Self {
            selected: sel.best.clone(),
            per_k: sel.paths.iter().map(|p| p.best.clone()).collect(),
            failures,
        }
    }
}

//! The alternating conditional-minimization driver.
//!
//! One iteration, given `(Z, G, Omega, Phi)`:
//!
//! 1. `Z <- Zbar D_G [D_G + Omega Phi]^{-1}` with `Zbar` the group means of `G`;
//! 2. `phi_k <- mean squared residual of group k`;
//! 3. `Omega <-` glasso or scio (+ refit) on the Gram matrix of `Z`;
//! 4. reassign each variable to its closest latent signal.
//!
//! Iteration stops once the relative change of `Z` is below `e_tol` and the
//! grouping did not change.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans_init, reassign_groups};
use crate::error::{HgmError, Result};
use crate::model::{
    evaluate_objective, group_means, update_phi, update_z, DataMatrix, GroupAssignment, HgmState, HiddenSignals,
    NoiseVariances, PrecisionMatrix,
};
use crate::par;
use crate::precision::{self, GramMatrix};

pub use crate::clustering::ReassignMetric;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Glasso,
    #[default]
    Scio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub k: usize,
    pub lambda: f64,
    pub e_tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub reassign_metric: ReassignMetric,
    /// KKT tolerance handed to the precision estimator.
    pub precision_tol: f64,
    pub precision_max_iter: usize,
    /// Seeded k-means runs per restart.
    pub kmeans_restarts: usize,
}

impl SolverConfig {
    pub fn new(k: usize, lambda: f64) -> Self {
        Self {
            k,
            lambda,
            e_tol: 1e-4,
            max_iter: 100,
            restarts: 10,
            seed: 0,
            estimator: Estimator::default(),
            reassign_metric: ReassignMetric::default(),
            precision_tol: precision::DEFAULT_TOL,
            precision_max_iter: precision::DEFAULT_MAX_ITER,
            kmeans_restarts: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(HgmError::InvalidConfig(msg.into()));
        if self.k < 1 {
            return bad("k must be at least 1");
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be positive and finite");
        }
        if !(self.e_tol > 0.0) {
            return bad("e_tol must be positive");
        }
        if self.restarts < 1 {
            return bad("restarts must be at least 1");
        }
        if !(self.precision_tol > 0.0) {
            return bad("precision_tol must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Penalized objective at the end of the iteration.
    pub objective: f64,
    pub neg_log_lik: f64,
    pub groups_changed: usize,
    /// `|Z_prev - Z|_F / max(1, |Z_prev|_F)`.
    pub z_delta: f64,
    /// Penalized objective right after steps 1, 2 and 3.
    pub step_objectives: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub restart: usize,
    pub seed: u64,
    pub initial_objective: f64,
    pub records: Vec<IterationRecord>,
    pub oscillation_stop: bool,
    /// The last iterate's penalized objective is not finite or exceeds the
    /// initial one, or an iteration failed. The returned state is then the
    /// best iterate visited, marked not converged.
    pub diverged: bool,
    /// Error that ended the run after the initialization.
    pub stop_error: Option<String>,
}

/// Relative Frobenius change of `Z` below `e_tol` and identical grouping.
pub fn converged(
    z_prev: &HiddenSignals,
    z_curr: &HiddenSignals,
    g_prev: &GroupAssignment,
    g_curr: &GroupAssignment,
    e_tol: f64,
) -> bool {
    if z_prev.values().shape() != z_curr.values().shape() {
        return false;
    }
    relative_change(z_prev, z_curr) < e_tol && g_prev == g_curr
}

fn relative_change(z_prev: &HiddenSignals, z_curr: &HiddenSignals) -> f64 {
    let diff = (z_prev.values() - z_curr.values()).norm();
    diff / z_prev.values().norm().max(1.0)
}

/// Runs the configured precision estimator on `gram`, warm-started from
/// `warm`. An estimator that hits its sweep cap contributes its last iterate.
pub fn estimate_precision(
    gram: &GramMatrix,
    cfg: &SolverConfig,
    warm: Option<&PrecisionMatrix>,
) -> Result<PrecisionMatrix> {
    let (tol, cap) = (cfg.precision_tol, cfg.precision_max_iter);
    match cfg.estimator {
        Estimator::Glasso => match precision::glasso_warm(gram, cfg.lambda, tol, cap, warm) {
            Ok((omega, _)) => Ok(omega),
            Err(HgmError::MaxIterExceeded { best, .. }) => PrecisionMatrix::new(*best),
            Err(e) => Err(e),
        },
        Estimator::Scio => {
            let raw = match precision::scio_warm(gram, cfg.lambda, tol, cap, warm.map(|w| w.matrix())) {
                Ok((raw, _)) => raw,
                Err(HgmError::MaxIterExceeded { best, .. }) => *best,
                Err(e) => return Err(e),
            };
            Ok(precision::symmetrize_and_refit(&raw)?.0)
        }
    }
}

/// Alternating updates from a given initial grouping. With
/// `update_groups = false` step 4 is skipped and the grouping stays fixed.
/// `warm` seeds the first precision estimate.
pub fn fit_from_groups(
    x: &DataMatrix,
    cfg: &SolverConfig,
    g0: GroupAssignment,
    update_groups: bool,
    warm: Option<&PrecisionMatrix>,
) -> Result<(HgmState, FitTrace)> {
    cfg.validate()?;
    if g0.k() != cfg.k {
        return Err(HgmError::DimensionMismatch {
            what: "initial grouping size vs k",
            expected: cfg.k,
            found: g0.k(),
        });
    }
    let lambda = cfg.lambda;
    let eval = |z: &HiddenSignals, g: &GroupAssignment, om: &PrecisionMatrix, ph: &NoiseVariances| {
        evaluate_objective(x, z, g, om, ph, lambda)
    };

    let g = g0;
    let z = group_means(x, &g)?;
    let phi = update_phi(x, &z, &g)?;
    let omega = estimate_precision(&GramMatrix::from_signals(&z), cfg, warm)?;
    let (nll, obj) = eval(&z, &g, &omega, &phi)?;
    let mut state = HgmState {
        z,
        g,
        omega,
        phi,
        objective: obj,
        neg_log_lik: nll,
        iterations: 0,
        converged: false,
    };
    let mut trace = FitTrace {
        restart: 0,
        seed: cfg.seed,
        initial_objective: obj,
        records: Vec::new(),
        oscillation_stop: false,
        diverged: false,
        stop_error: None,
    };
    let mut best = state.clone();
    let mut previous: Option<HgmState> = None;
    let mut oscillations = 0usize;

    for t in 1..=cfg.max_iter {
        let step = || -> Result<_> {
            let z_bar = group_means(x, &state.g)?;
            let z = update_z(&z_bar, &state.g, &state.omega, &state.phi)?;
            let after_z = eval(&z, &state.g, &state.omega, &state.phi)?.1;
            let phi = update_phi(x, &z, &state.g)?;
            let after_phi = eval(&z, &state.g, &state.omega, &phi)?.1;
            let omega = estimate_precision(&GramMatrix::from_signals(&z), cfg, Some(&state.omega))?;
            let after_omega = eval(&z, &state.g, &omega, &phi)?.1;
            let g = if update_groups {
                reassign_groups(x, &z, cfg.reassign_metric, Some(&phi))?.groups
            } else {
                state.g.clone()
            };
            let (nll, obj) = eval(&z, &g, &omega, &phi)?;
            Ok((z, g, omega, phi, nll, obj, [after_z, after_phi, after_omega]))
        };
        let (z, g, omega, phi, nll, obj, steps) = match step() {
            Ok(v) => v,
            Err(e) => {
                trace.stop_error = Some(e.to_string());
                trace.diverged = true;
                best.iterations = t - 1;
                best.converged = false;
                return Ok((best, trace));
            }
        };
        let done = converged(&state.z, &z, &state.g, &g, cfg.e_tol);
        trace.records.push(IterationRecord {
            objective: obj,
            neg_log_lik: nll,
            groups_changed: g.changed_from(&state.g),
            z_delta: relative_change(&state.z, &z),
            step_objectives: steps,
        });

        // G(t) == G(t-2) != G(t-1)
        let cycling = previous.as_ref().is_some_and(|p| p.g == g && g != state.g);
        oscillations = if cycling { oscillations + 1 } else { 0 };

        let next = HgmState {
            z,
            g,
            omega,
            phi,
            objective: obj,
            neg_log_lik: nll,
            iterations: t,
            converged: done,
        };
        previous = Some(core::mem::replace(&mut state, next));
        if state.objective < best.objective {
            best = state.clone();
        }
        if done {
            return Ok(finish(state, best, trace));
        }
        if oscillations >= 3 {
            trace.oscillation_stop = true;
            let prev = previous.expect("set above");
            let mut pick = if prev.objective < state.objective { prev } else { state };
            pick.iterations = t;
            pick.converged = false;
            return Ok(finish(pick, best, trace));
        }
    }
    // max_iter reached: report the lowest objective visited
    let ran = state.iterations;
    let (_, trace) = finish(state, best.clone(), trace);
    best.iterations = ran;
    best.converged = false;
    Ok((best, trace))
}

/// Flags a run whose last iterate ended above its starting objective and
/// substitutes the best iterate visited.
fn finish(last: HgmState, best: HgmState, mut trace: FitTrace) -> (HgmState, FitTrace) {
    let start = trace.initial_objective;
    trace.diverged = !(last.objective <= start + 1e-8 * start.abs().max(1.0));
    if trace.diverged {
        let mut best = best;
        best.iterations = last.iterations;
        best.converged = false;
        (best, trace)
    } else {
        (last, trace)
    }
}

/// One run: k-means initialization seeded by `restart_seed`, then the
/// alternating updates.
pub fn fit_once(x: &DataMatrix, cfg: &SolverConfig, restart_seed: u64) -> Result<(HgmState, FitTrace)> {
    cfg.validate()?;
    let km = kmeans_init(x, cfg.k, restart_seed, cfg.kmeans_restarts)?;
    let (state, mut trace) = fit_from_groups(x, cfg, km.labels, true, None)?;
    trace.seed = restart_seed;
    Ok((state, trace))
}

/// Index of the smallest value, earliest on ties; `None` entries are failed
/// restarts.
pub fn select_restart(neg_log_liks: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in neg_log_liks.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: HgmState,
    /// Traces of the successful restarts, in restart order.
    pub traces: Vec<FitTrace>,
    /// Restart index of the selected state.
    pub selected: usize,
    pub failures: Vec<(usize, HgmError)>,
}

/// Runs `cfg.restarts` restarts with seeds `cfg.seed + r` and keeps the one
/// with the smallest unpenalized negative log-likelihood.
///
/// Restarts whose trace is flagged `diverged` are passed over unless every
/// restart diverged: the unpenalized likelihood is unbounded below along
/// `Z -> 0` with `Omega ~ (Z^T Z / n)^{-1}`, and a run drifting there can
/// report an arbitrarily small value.
pub fn fit(x: &DataMatrix, cfg: &SolverConfig) -> Result<FitResult> {
    cfg.validate()?;
    let runs = par::map_indexed(cfg.restarts, |r| fit_once(x, cfg, cfg.seed.wrapping_add(r as u64)));
    let score = |keep_diverged: bool| -> Vec<Option<f64>> {
        runs.iter()
            .map(|r| match r {
                Ok((s, t)) if keep_diverged || !t.diverged => Some(s.neg_log_lik),
                _ => None,
            })
            .collect()
    };
    let selected = select_restart(&score(false)).or_else(|| select_restart(&score(true)));
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    let mut chosen = None;
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok((state, mut trace)) => {
                trace.restart = r;
                traces.push(trace);
                if Some(r) == selected {
                    chosen = Some(state);
                }
            }
            Err(e) => failures.push((r, e)),
        }
    }
    match (chosen, selected) {
        (Some(state), Some(selected)) => Ok(FitResult {
            state,
            traces,
            selected,
            failures,
        }),
        _ => Err(HgmError::AllRestartsFailed(alloc::boxed::Box::new(
            failures.into_iter().next().map(|(_, e)| e).expect("restarts >= 1"),
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn signals(n: usize, k: usize, data: &[f64]) -> HiddenSignals {
        HiddenSignals::new(DMatrix::from_row_slice(n, k, data)).unwrap()
    }

    #[test]
    fn convergence_rule() {
        let z = signals(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let g = GroupAssignment::new(vec![0, 1, 1], 2).unwrap();
        let g2 = GroupAssignment::new(vec![0, 0, 1], 2).unwrap();
        assert!(converged(&z, &z, &g, &g, 1e-12));
        assert!(!converged(&z, &z, &g, &g2, 1.0));

        let zero = signals(2, 2, &[0.0; 4]);
        let small = signals(2, 2, &[5e-5, 0.0, 0.0, 0.0]);
        assert!(converged(&zero, &small, &g, &g, 1e-4));
        assert!(!converged(&zero, &small, &g, &g, 5e-5));
    }

    #[test]
    fn restart_selection_breaks_ties_early() {
        assert_eq!(select_restart(&[Some(10.0), Some(9.5), Some(9.5)]), Some(1));
        assert_eq!(select_restart(&[None, Some(3.0)]), Some(1));
        assert_eq!(select_restart(&[None, None]), None);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SolverConfig::new(2, 0.1);
        assert!(cfg.validate().is_ok());
        cfg.restarts = 0;
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig::new(2, 0.0);
        assert!(cfg.validate().is_err());
    }
}

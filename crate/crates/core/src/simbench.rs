//! Simulation harness: the block-diagonal generative model, edge-recovery
//! and grouping metrics, and the repeated-experiment driver.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clustering::coherence_rates;
use crate::error::{HgmError, Result};
use crate::model::{group_means, DataMatrix, GroupAssignment, HiddenSignals, PrecisionMatrix};
use crate::par;
use crate::precision::GramMatrix;
use crate::rng::{seeded, HgmRng, GENERATOR};
use crate::selection::log_grid;
use crate::solver::{fit, fit_from_groups, Estimator, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub n: usize,
    pub k: usize,
    pub block_size: usize,
    pub rho: f64,
    pub replicates_per_node: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            n: 180,
            k: 200,
            block_size: 5,
            rho: 0.8,
            replicates_per_node: 50,
            noise_sd: 1.0,
            seed: 0,
        }
    }
}

impl SimulationSpec {
    pub fn p(&self) -> usize {
        self.k * self.replicates_per_node
    }

    pub fn validate(&self) -> Result<()> {
        check_blocks(self.k, self.block_size, self.rho)?;
        if self.replicates_per_node < 1 {
            return Err(HgmError::InvalidConfig("replicates_per_node must be at least 1".into()));
        }
        if self.n < 2 {
            return Err(HgmError::InvalidConfig("n must be at least 2".into()));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(HgmError::InvalidConfig("noise_sd must be finite and non-negative".into()));
        }
        Ok(())
    }
}

fn check_blocks(k: usize, block_size: usize, rho: f64) -> Result<()> {
    if k == 0 || block_size == 0 || k % block_size != 0 || !(0.0..1.0).contains(&rho) {
        return Err(HgmError::InvalidBlockStructure { k, block_size, rho });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub omega_true: PrecisionMatrix,
    pub g_true: GroupAssignment,
    pub z_true: HiddenSignals,
}

/// Block-diagonal precision: unit diagonal, `rho` inside each block.
pub fn make_precision(k: usize, block_size: usize, rho: f64) -> Result<PrecisionMatrix> {
    check_blocks(k, block_size, rho)?;
    let m = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else if i / block_size == j / block_size {
            rho
        } else {
            0.0
        }
    });
    PrecisionMatrix::new(m)
}

/// Applies a seeded uniform permutation to rows and columns, then rescales
/// by `D^{1/2}` (`D` the diagonal of the permuted inverse) so the implied
/// covariance has unit marginal variances.
pub fn permute_and_rescale(omega: &PrecisionMatrix, seed: u64) -> Result<PrecisionMatrix> {
    permute_and_rescale_with(omega, &mut seeded(seed))
}

fn permute_and_rescale_with(omega: &PrecisionMatrix, rng: &mut HgmRng) -> Result<PrecisionMatrix> {
    let mut perm: Vec<usize> = (0..omega.k()).collect();
    perm.shuffle(rng);
    rescale_to_unit_marginals(&permute_precision(omega, &perm)?)
}

/// `P Omega P^T` with `(P Omega P^T)_{ab} = Omega_{perm[a], perm[b]}`.
pub fn permute_precision(omega: &PrecisionMatrix, perm: &[usize]) -> Result<PrecisionMatrix> {
    let k = omega.k();
    let mut seen = vec![false; k];
    if perm.len() != k || !perm.iter().all(|&i| i < k && !core::mem::replace(&mut seen[i], true)) {
        return Err(HgmError::InvalidConfig("not a permutation of the precision indices".into()));
    }
    let src = omega.matrix();
    PrecisionMatrix::new(DMatrix::from_fn(k, k, |a, b| src[(perm[a], perm[b])]))
}

/// `D^{1/2} Omega D^{1/2}` with `D = diag(Omega^{-1})`; the result's
/// inverse has unit diagonal and the support is unchanged.
pub fn rescale_to_unit_marginals(omega: &PrecisionMatrix) -> Result<PrecisionMatrix> {
    let k = omega.k();
    let sigma = omega.inverse()?;
    let scale: Vec<f64> = (0..k).map(|i| libm::sqrt(sigma[(i, i)])).collect();
    let m = omega.matrix();
    PrecisionMatrix::new(DMatrix::from_fn(k, k, |a, b| (scale[a] * scale[b]) * m[(a, b)]))
}

/// Symmetric square root `V diag(sqrt(l)) V^T` of a covariance matrix.
fn symmetric_factor(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(sigma.clone());
    let k = sigma.nrows();
    let mut scaled = eig.eigenvectors.clone();
    for c in 0..k {
        let s = libm::sqrt(eig.eigenvalues[c].max(0.0));
        scaled.column_mut(c).iter_mut().for_each(|v| *v *= s);
    }
    scaled * eig.eigenvectors.transpose()
}

/// Draws a dataset: `n` latent rows from `N(0, Omega'^{-1})` followed by
/// `replicates_per_node` noisy copies of every latent column. Column
/// `j` belongs to latent node `j / replicates_per_node`.
pub fn sample_dataset(spec: &SimulationSpec) -> Result<(DataMatrix, GroundTruth)> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let omega_true = permute_and_rescale_with(&make_precision(spec.k, spec.block_size, spec.rho)?, &mut rng)?;
    let sigma = omega_true.inverse()?;
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let factor = symmetric_factor(&sigma);

    let (n, k, reps) = (spec.n, spec.k, spec.replicates_per_node);
    let mut e = DMatrix::<f64>::zeros(n, k);
    for i in 0..n {
        for c in 0..k {
            e[(i, c)] = rng.sample(StandardNormal);
        }
    }
    let z = e * &factor;
    let p = k * reps;
    let mut x = DMatrix::<f64>::zeros(n, p);
    for j in 0..p {
        let node = j / reps;
        for i in 0..n {
            let noise: f64 = rng.sample(StandardNormal);
            x[(i, j)] = z[(i, node)] + spec.noise_sd * noise;
        }
    }
    let g_true = GroupAssignment::new((0..p).map(|j| j / reps).collect(), k)?;
    Ok((
        DataMatrix::new(x)?,
        GroundTruth {
            omega_true,
            g_true,
            z_true: HiddenSignals::new(z)?,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeConfusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl EdgeConfusion {
    /// `tp / (tp + fn)`; 1 when there are no true edges.
    pub fn sensitivity(&self) -> f64 {
        let d = self.tp + self.fn_;
        if d == 0 {
            1.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    /// `tn / (tn + fp)`; 1 when every pair is an edge.
    pub fn specificity(&self) -> f64 {
        let d = self.tn + self.fp;
        if d == 0 {
            1.0
        } else {
            self.tn as f64 / d as f64
        }
    }
}

/// Confusion counts over the `K(K-1)/2` upper-triangle pairs.
pub fn edge_confusion(omega_hat: &PrecisionMatrix, omega_true: &PrecisionMatrix) -> Result<EdgeConfusion> {
    let k = omega_true.k();
    if omega_hat.k() != k {
        return Err(HgmError::DimensionMismatch {
            what: "estimated vs true precision size",
            expected: k,
            found: omega_hat.k(),
        });
    }
    let mut c = EdgeConfusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for j in 0..k {
        for i in 0..j {
            match (omega_hat.is_nonzero(i, j), omega_true.is_nonzero(i, j)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub lambda: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Whether ROC fits keep the true grouping fixed or estimate it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RocProtocol {
    /// Start from the true grouping and skip the group update.
    #[default]
    FixedTruth,
    /// Full fit with restarts.
    Estimated,
}

/// Edge recovery along a lambda grid, sorted by lambda descending. Under
/// [`RocProtocol::FixedTruth`] each fit is warm-started from the previous
/// grid point's precision matrix.
pub fn roc_path(
    x: &DataMatrix,
    truth: &GroundTruth,
    cfg: &SolverConfig,
    grid: &[f64],
    protocol: RocProtocol,
) -> Result<Vec<RocPoint>> {
    if grid.is_empty() {
        return Err(HgmError::InvalidConfig("lambda grid is empty".into()));
    }
    let mut lambdas = grid.to_vec();
    lambdas.sort_by(|a, b| b.partial_cmp(a).expect("finite grid"));
    let mut out = Vec::with_capacity(lambdas.len());
    let mut warm: Option<PrecisionMatrix> = None;
    for lambda in lambdas {
        let mut c = cfg.clone();
        c.lambda = lambda;
        c.k = truth.g_true.k();
        let omega = match protocol {
            RocProtocol::FixedTruth => fit_from_groups(x, &c, truth.g_true.clone(), false, warm.as_ref())?.0.omega,
            RocProtocol::Estimated => fit(x, &c)?.state.omega,
        };
        let conf = edge_confusion(&omega, &truth.omega_true)?;
        out.push(RocPoint {
            lambda,
            sensitivity: conf.sensitivity(),
            specificity: conf.specificity(),
        });
        warm = Some(omega);
    }
    Ok(out)
}

/// Trapezoidal area under the curve through `(1 - specificity, sensitivity)`
/// points, closed with `(0, 0)` and `(1, 1)`.
pub fn roc_auc(points: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(points.len() + 2);
    pts.push((0.0, 0.0));
    pts.extend_from_slice(points);
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite ROC points"));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RocGrid {
    Explicit(Vec<f64>),
    /// Per replicate: log-spaced from `lambda_max` of the true-grouping
    /// group means down to `lambda_max / ratio`.
    Auto { count: usize, ratio: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPlan {
    pub estimators: Vec<Estimator>,
    pub grid: RocGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub repeats: usize,
    /// Lambdas for the full fits whose groupings are scored.
    pub coherence_lambdas: Vec<f64>,
    pub roc: Option<RocPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceSummary {
    pub lambda: f64,
    pub rates: usize,
    pub mean_rate: f64,
    pub min_rate: f64,
    pub fraction_exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedRocPoint {
    pub index: usize,
    pub mean_lambda: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSummary {
    pub estimator: Estimator,
    pub points: Vec<AveragedRocPoint>,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub generator: String,
    pub spec: SimulationSpec,
    pub config: SolverConfig,
    pub plan: ExperimentPlan,
    pub coherence: Vec<CoherenceSummary>,
    /// Fraction of all pooled coherence rates equal to 1.
    pub pooled_fraction_exact: f64,
    pub roc: Vec<RocSummary>,
    pub failures: usize,
    pub failure_messages: Vec<String>,
}

struct RepeatOutcome {
    coherence: Vec<Vec<f64>>,
    roc: Vec<Vec<RocPoint>>,
}

fn run_repeat(spec: &SimulationSpec, cfg: &SolverConfig, plan: &ExperimentPlan, r: usize) -> Result<RepeatOutcome> {
    let mut s = spec.clone();
    s.seed = spec.seed.wrapping_add(r as u64);
    let (x, truth) = sample_dataset(&s)?;
    let mut coherence = Vec::with_capacity(plan.coherence_lambdas.len());
    for &lambda in &plan.coherence_lambdas {
        let mut c = cfg.clone();
        c.k = spec.k;
        c.lambda = lambda;
        let fr = fit(&x, &c)?;
        coherence.push(coherence_rates(&fr.state.g, &truth.g_true)?);
    }
    let mut roc = Vec::new();
    if let Some(plan) = &plan.roc {
        let grid = match &plan.grid {
            RocGrid::Explicit(v) => v.clone(),
            RocGrid::Auto { count, ratio } => {
                let zbar = group_means(&x, &truth.g_true)?;
                log_grid(GramMatrix::from_signals(&zbar).lambda_max(), *ratio, *count)
            }
        };
        for &est in &plan.estimators {
            let mut c = cfg.clone();
            c.estimator = est;
            roc.push(roc_path(&x, &truth, &c, &grid, RocProtocol::FixedTruth)?);
        }
    }
    Ok(RepeatOutcome { coherence, roc })
}

/// Repeats the simulation `plan.repeats` times (replicate `r` uses seed
/// `spec.seed + r`), scoring grouping recovery from full fits and, when
/// requested, fixed-grouping edge recovery along a lambda grid.
pub fn run_experiment(spec: &SimulationSpec, cfg: &SolverConfig, plan: &ExperimentPlan) -> Result<ExperimentReport> {
    spec.validate()?;
    if plan.repeats < 1 {
        return Err(HgmError::InvalidConfig("repeats must be at least 1".into()));
    }
    let outcomes = par::map_indexed(plan.repeats, |r| run_repeat(spec, cfg, plan, r));

    let mut failure_messages = Vec::new();
    let ok: Vec<RepeatOutcome> = outcomes
        .into_iter()
        .enumerate()
        .filter_map(|(r, o)| match o {
            Ok(o) => Some(o),
            Err(e) => {
                failure_messages.push(alloc::format!("repeat {r}: {e}"));
                None
            }
        })
        .collect();

    let mut coherence = Vec::new();
    let (mut pooled_exact, mut pooled_total) = (0usize, 0usize);
    for (li, &lambda) in plan.coherence_lambdas.iter().enumerate() {
        let rates: Vec<f64> = ok.iter().flat_map(|o| o.coherence[li].iter().copied()).collect();
        let exact = rates.iter().filter(|&&r| r == 1.0).count();
        pooled_exact += exact;
        pooled_total += rates.len();
        let count = rates.len().max(1) as f64;
        coherence.push(CoherenceSummary {
            lambda,
            rates: rates.len(),
            mean_rate: rates.iter().sum::<f64>() / count,
            min_rate: rates.iter().copied().fold(f64::INFINITY, f64::min),
            fraction_exact: exact as f64 / count,
        });
    }

    let mut roc = Vec::new();
    if let Some(rp) = &plan.roc {
        for (ei, &estimator) in rp.estimators.iter().enumerate() {
            let len = ok.iter().map(|o| o.roc[ei].len()).min().unwrap_or(0);
            let reps = ok.len().max(1) as f64;
            let points: Vec<AveragedRocPoint> = (0..len)
                .map(|i| {
                    let mut acc = [0.0; 3];
                    for o in &ok {
                        let pt = o.roc[ei][i];
                        acc[0] += pt.lambda;
                        acc[1] += pt.sensitivity;
                        acc[2] += pt.specificity;
                    }
                    AveragedRocPoint {
                        index: i,
                        mean_lambda: acc[0] / reps,
                        sensitivity: acc[1] / reps,
                        specificity: acc[2] / reps,
                    }
                })
                .collect();
            let curve: Vec<(f64, f64)> = points.iter().map(|p| (1.0 - p.specificity, p.sensitivity)).collect();
            roc.push(RocSummary {
                estimator,
                auc: roc_auc(&curve),
                points,
            });
        }
    }

    Ok(ExperimentReport {
        generator: GENERATOR.to_string(),
        spec: spec.clone(),
        config: cfg.clone(),
        plan: plan.clone(),
        coherence,
        pooled_fraction_exact: if pooled_total == 0 {
            0.0
        } else {
            pooled_exact as f64 / pooled_total as f64
        },
        roc,
        failures: failure_messages.len(),
        failure_messages,
    })
}

/// Number of upper-triangle pairs, `K(K-1)/2`.
pub fn pair_count(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

//! Sparse precision-matrix estimation for the latent layer.
//!
//! Two estimators are provided:
//!
//! * [`glasso`] minimizes `tr(A Omega) - log det Omega + lambda |Omega|_1`
//!   (diagonal included in the penalty) by primal block coordinate descent:
//!   each row/column block is minimized exactly in its Schur-complement
//!   parameterization, the off-diagonal part being a lasso solved by cyclic
//!   coordinate descent started from the current iterate. Every block step
//!   decreases the objective and keeps `Omega` positive definite.
//! * [`scio`] solves, for every column `i` independently,
//!   `min_b 0.5 b^T A b - b_i + lambda |b|_1` by coordinate descent. Its output
//!   is not symmetric and goes through [`symmetrize_and_refit`].

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{HgmError, Result};
use crate::model::{log_det_pd, HiddenSignals, PrecisionMatrix};
use crate::par;

/// Default KKT tolerance.
pub const DEFAULT_TOL: f64 = 1e-4;
/// Default cap on outer sweeps.
pub const DEFAULT_MAX_ITER: usize = 1000;
/// Margin added above `|sigma_min|` when the refit needs a ridge.
pub const REFIT_MARGIN: f64 = 1e-6;

/// Sample second moment `A = Z^T Z / n` of the latent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    a: DMatrix<f64>,
}

impl GramMatrix {
    /// Accepts a square finite matrix that is symmetric up to rounding; the
    /// stored copy is made exactly symmetric from the lower triangle.
    pub fn new(mut a: DMatrix<f64>) -> Result<Self> {
        let k = a.nrows();
        if a.ncols() != k {
            return Err(HgmError::DimensionMismatch {
                what: "Gram matrix columns",
                expected: k,
                found: a.ncols(),
            });
        }
        let scale = a.amax().max(1.0);
        for i in 0..k {
            if !a[(i, i)].is_finite() || a[(i, i)] < 0.0 {
                return Err(HgmError::NonFinite { row: i, col: i });
            }
            for j in 0..i {
                let (lo, up) = (a[(i, j)], a[(j, i)]);
                if !lo.is_finite() || !up.is_finite() {
                    return Err(HgmError::NonFinite { row: i, col: j });
                }
                if (lo - up).abs() > 1e-10 * scale {
                    return Err(HgmError::NotSymmetric);
                }
                a[(j, i)] = lo;
            }
        }
        Ok(Self { a })
    }

    pub fn from_signals(z: &HiddenSignals) -> Self {
        Self { a: z.gram() }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn k(&self) -> usize {
        self.a.nrows()
    }

    /// Smallest `lambda` at which the penalized likelihood solution is
    /// diagonal: `max_{i != j} |A_ij|`.
    pub fn lambda_max(&self) -> f64 {
        let k = self.k();
        let mut m = 0.0f64;
        for j in 0..k {
            for i in 0..k {
                if i != j {
                    m = m.max(self.a[(i, j)].abs());
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverReport {
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Objective decrease over the final sweep (glasso) or zero (scio).
    pub duality_or_objective_gap: f64,
    pub refit_applied: bool,
    pub ridge_added: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(HgmError::InvalidConfig(alloc::format!(
            "lambda must be positive and finite, got {lambda}"
        )));
    }
    Ok(())
}

#[inline]
fn soft_threshold(g: f64, lambda: f64) -> f64 {
    if g > lambda {
        g - lambda
    } else if g < -lambda {
        g + lambda
    } else {
        0.0
    }
}

/// Subgradient-optimality violation of one entry with gradient `g`.
#[inline]
fn entry_violation(g: f64, value: f64, lambda: f64) -> f64 {
    if value > 0.0 {
        (g + lambda).abs()
    } else if value < 0.0 {
        (g - lambda).abs()
    } else {
        (g.abs() - lambda).max(0.0)
    }
}

/// `tr(A Omega) - log det Omega + lambda |Omega|_1`; `None` if `omega` is not
/// positive definite.
pub fn glasso_objective(a: &GramMatrix, omega: &DMatrix<f64>, lambda: f64) -> Option<f64> {
    let ld = log_det_pd(omega)?;
    let tr = a.matrix().dot(omega);
    let l1: f64 = omega.iter().map(|v| v.abs()).sum();
    Some(tr - ld + lambda * l1)
}

fn kkt_with_inverse(a: &DMatrix<f64>, omega: &DMatrix<f64>, w: &DMatrix<f64>, lambda: f64) -> f64 {
    let k = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..k {
        for i in 0..k {
            worst = worst.max(entry_violation(a[(i, j)] - w[(i, j)], omega[(i, j)], lambda));
        }
    }
    worst
}

/// Maximum violation of the stationarity condition
/// `0 in A - Omega^{-1} + lambda * sign(Omega)` over all entries.
pub fn kkt_residual(a: &GramMatrix, omega: &PrecisionMatrix, lambda: f64) -> Result<f64> {
    if a.k() != omega.k() {
        return Err(HgmError::DimensionMismatch {
            what: "precision vs Gram size",
            expected: a.k(),
            found: omega.k(),
        });
    }
    let w = omega.inverse()?;
    Ok(kkt_with_inverse(a.matrix(), omega.matrix(), &w, lambda))
}

fn pd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(m.clone().cholesky().ok_or(HgmError::NotPositiveDefinite)?.inverse())
}

/// Graphical lasso from the default start `diag(1 / (A_ii + lambda))`.
pub fn glasso(
    a: &GramMatrix,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(PrecisionMatrix, SolverReport)> {
    glasso_warm(a, lambda, tol, max_iter, None)
}

/// Graphical lasso started from `init` when given.
///
/// Returns [`HgmError::MaxIterExceeded`] with the last iterate (which is also
/// the best, as the sweeps are monotone) if `max_iter` sweeps do not reach
/// `tol`.
pub fn glasso_warm(
    a: &GramMatrix,
    lambda: f64,
    tol: f64,
    max_iter: usize,
    init: Option<&PrecisionMatrix>,
) -> Result<(PrecisionMatrix, SolverReport)> {
    check_lambda(lambda)?;
    let am = a.matrix();
    let k = a.k();
    let mut omega = match init {
        Some(p) if p.k() != k => {
            return Err(HgmError::DimensionMismatch {
                what: "warm start size",
                expected: k,
                found: p.k(),
            })
        }
        Some(p) => p.matrix().clone(),
        None => DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 / (am[(i, i)] + lambda) } else { 0.0 }),
    };
    let mut w = pd_inverse(&omega)?;
    let mut scratch = BlockScratch::new(k);
    let mut prev_obj = glasso_objective(a, &omega, lambda).ok_or(HgmError::NotPositiveDefinite)?;
    let mut gap = 0.0;
    let inner_tol = tol * 0.1;

    for sweep in 0..=max_iter {
        let resid = kkt_with_inverse(am, &omega, &w, lambda);
        if resid <= tol {
            let report = SolverReport {
                iterations: sweep,
                kkt_residual: resid,
                duality_or_objective_gap: gap,
                ..SolverReport::default()
            };
            return Ok((PrecisionMatrix::new(omega)?, report));
        }
        if sweep == max_iter {
            return Err(HgmError::MaxIterExceeded {
                iterations: max_iter,
                residual: resid,
                best: Box::new(omega),
            });
        }
        for j in 0..k {
            scratch.update_block(am, lambda, &mut omega, &mut w, j, inner_tol);
        }
        // rank-one updates drift; refresh the inverse once per sweep
        w = pd_inverse(&omega)?;
        let obj = glasso_objective(a, &omega, lambda).ok_or(HgmError::NotPositiveDefinite)?;
        gap = prev_obj - obj;
        prev_obj = obj;
    }
    unreachable!("loop returns on its last pass")
}

struct BlockScratch {
    u: DMatrix<f64>,
    beta: Vec<f64>,
    v: Vec<f64>,
}

impl BlockScratch {
    fn new(k: usize) -> Self {
        Self {
            u: DMatrix::zeros(k, k),
            beta: vec![0.0; k],
            v: vec![0.0; k],
        }
    }

    /// Exact minimization over row/column `j` of `omega`, keeping `w` equal
    /// to `omega^{-1}`.
    fn update_block(
        &mut self,
        a: &DMatrix<f64>,
        lambda: f64,
        omega: &mut DMatrix<f64>,
        w: &mut DMatrix<f64>,
        j: usize,
        inner_tol: f64,
    ) {
        let k = a.nrows();
        let wjj = w[(j, j)];
        // U = inverse of Omega without row/column j
        for m in 0..k {
            let wm = w[(m, j)] / wjj;
            for l in 0..k {
                self.u[(l, m)] = w[(l, m)] - w[(l, j)] * wm;
            }
        }
        let c = a[(j, j)] + lambda;
        for l in 0..k {
            self.beta[l] = if l == j { 0.0 } else { omega[(l, j)] };
        }
        for l in 0..k {
            self.v[l] = if l == j {
                0.0
            } else {
                (0..k).filter(|&m| m != j).map(|m| self.u[(l, m)] * self.beta[m]).sum()
            };
        }

        for _pass in 0..10_000 {
            for l in 0..k {
                if l == j {
                    continue;
                }
                let ull = self.u[(l, l)];
                let g = a[(l, j)] + c * (self.v[l] - ull * self.beta[l]);
                let new = -soft_threshold(g, lambda) / (c * ull);
                let delta = new - self.beta[l];
                if delta != 0.0 {
                    self.beta[l] = new;
                    for m in 0..k {
                        self.v[m] += self.u[(m, l)] * delta;
                    }
                }
            }
            let mut resid = 0.0f64;
            for l in 0..k {
                if l != j {
                    let g = a[(l, j)] + c * self.v[l];
                    resid = resid.max(entry_violation(g, self.beta[l], lambda));
                }
            }
            if resid <= inner_tol {
                break;
            }
        }

        let gamma = 1.0 / c;
        let quad: f64 = (0..k).filter(|&l| l != j).map(|l| self.beta[l] * self.v[l]).sum();
        for l in 0..k {
            if l != j {
                omega[(l, j)] = self.beta[l];
                omega[(j, l)] = self.beta[l];
            }
        }
        omega[(j, j)] = gamma + quad;

        for m in 0..k {
            if m == j {
                continue;
            }
            for l in 0..k {
                if l != j {
                    w[(l, m)] = self.u[(l, m)] + c * self.v[l] * self.v[m];
                }
            }
            w[(m, j)] = -c * self.v[m];
            w[(j, m)] = -c * self.v[m];
        }
        w[(j, j)] = c;
    }
}

/// Column objective `0.5 b^T A b - b_i + lambda |b|_1`.
pub fn scio_column_objective(a: &GramMatrix, beta: &[f64], i: usize, lambda: f64) -> f64 {
    let am = a.matrix();
    let k = a.k();
    let mut quad = 0.0;
    for r in 0..k {
        for c in 0..k {
            quad += beta[r] * am[(r, c)] * beta[c];
        }
    }
    0.5 * quad - beta[i] + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

struct ColumnOutcome {
    beta: Vec<f64>,
    passes: usize,
    residual: f64,
    converged: bool,
}

fn scio_column(a: &DMatrix<f64>, i: usize, lambda: f64, tol: f64, max_iter: usize, init: Vec<f64>) -> ColumnOutcome {
    let k = a.nrows();
    let mut beta = init;
    let mut v: Vec<f64> = (0..k)
        .map(|r| (0..k).map(|c| a[(r, c)] * beta[c]).sum())
        .collect();
    let residual = |beta: &[f64], v: &[f64]| {
        (0..k)
            .map(|j| {
                let g = v[j] - if j == i { 1.0 } else { 0.0 };
                entry_violation(g, beta[j], lambda)
            })
            .fold(0.0f64, f64::max)
    };
    for pass in 0..=max_iter {
        let r = residual(&beta, &v);
        if r <= tol || pass == max_iter {
            return ColumnOutcome {
                beta,
                passes: pass,
                residual: r,
                converged: r <= tol,
            };
        }
        for j in 0..k {
            let ajj = a[(j, j)];
            let e = if j == i { 1.0 } else { 0.0 };
            let partial = v[j] - ajj * beta[j];
            let new = soft_threshold(e - partial, lambda) / ajj;
            let delta = new - beta[j];
            if delta != 0.0 {
                beta[j] = new;
                for (r, vr) in v.iter_mut().enumerate() {
                    *vr += a[(r, j)] * delta;
                }
            }
        }
    }
    unreachable!("loop returns on its last pass")
}

/// Column-wise sparse inverse estimate from a zero start.
pub fn scio(a: &GramMatrix, lambda: f64, tol: f64, max_iter: usize) -> Result<(DMatrix<f64>, SolverReport)> {
    scio_warm(a, lambda, tol, max_iter, None)
}

/// Column-wise sparse inverse estimate; columns of `init` seed the
/// coordinate descent. Columns are independent and solved in parallel when
/// the `parallel` feature is enabled.
pub fn scio_warm(
    a: &GramMatrix,
    lambda: f64,
    tol: f64,
    max_iter: usize,
    init: Option<&DMatrix<f64>>,
) -> Result<(DMatrix<f64>, SolverReport)> {
    check_lambda(lambda)?;
    let am = a.matrix();
    let k = a.k();
    if let Some(j) = (0..k).find(|&j| !(am[(j, j)] > 0.0)) {
        return Err(HgmError::ZeroDiagonal(j));
    }
    if let Some(m) = init {
        if m.nrows() != k || m.ncols() != k {
            return Err(HgmError::DimensionMismatch {
                what: "warm start size",
                expected: k,
                found: m.nrows(),
            });
        }
    }
    let outcomes = par::map_indexed(k, |i| {
        let start = match init {
            Some(m) => m.column(i).iter().copied().collect(),
            None => vec![0.0; k],
        };
        scio_column(am, i, lambda, tol, max_iter, start)
    });
    let mut out = DMatrix::zeros(k, k);
    let mut report = SolverReport::default();
    let mut all_converged = true;
    for (i, col) in outcomes.iter().enumerate() {
        out.column_mut(i).iter_mut().zip(&col.beta).for_each(|(d, s)| *d = *s);
        report.iterations = report.iterations.max(col.passes);
        report.kkt_residual = report.kkt_residual.max(col.residual);
        all_converged &= col.converged;
    }
    if !all_converged {
        return Err(HgmError::MaxIterExceeded {
            iterations: max_iter,
            residual: report.kkt_residual,
            best: Box::new(out),
        });
    }
    Ok((out, report))
}

/// Makes a raw estimate a valid precision matrix.
///
/// Each off-diagonal pair keeps the entry of smaller magnitude (ties are
/// averaged), which never adds support. If the smallest eigenvalue is not
/// positive, `(|sigma_min| + 1e-6) I` is added.
pub fn symmetrize_and_refit(raw: &DMatrix<f64>) -> Result<(PrecisionMatrix, SolverReport)> {
    let k = raw.nrows();
    if raw.ncols() != k {
        return Err(HgmError::DimensionMismatch {
            what: "raw estimate columns",
            expected: k,
            found: raw.ncols(),
        });
    }
    if let Some(pos) = raw.iter().position(|v| !v.is_finite()) {
        return Err(HgmError::NonFinite {
            row: pos % k,
            col: pos / k,
        });
    }
    let mut sym = raw.clone();
    for j in 0..k {
        for i in 0..j {
            let (up, lo) = (raw[(i, j)], raw[(j, i)]);
            let v = if up.abs() < lo.abs() {
                up
            } else if lo.abs() < up.abs() {
                lo
            } else {
                0.5 * (up + lo)
            };
            sym[(i, j)] = v;
            sym[(j, i)] = v;
        }
    }
    let sigma_min = if k == 0 {
        1.0
    } else {
        SymmetricEigen::new(sym.clone()).eigenvalues.min()
    };
    let mut ridge = if sigma_min <= 0.0 { sigma_min.abs() + REFIT_MARGIN } else { 0.0 };
    loop {
        let mut candidate = sym.clone();
        for i in 0..k {
            candidate[(i, i)] += ridge;
        }
        match PrecisionMatrix::new(candidate) {
            Ok(pm) => {
                let report = SolverReport {
                    refit_applied: ridge > 0.0,
                    ridge_added: ridge,
                    ..SolverReport::default()
                };
                return Ok((pm, report));
            }
            // eigenvalue just above zero but the factorization still fails
            Err(HgmError::NotPositiveDefinite) if ridge < 1e6 => {
                ridge = if ridge == 0.0 { REFIT_MARGIN } else { ridge * 2.0 };
            }
            Err(e) => return Err(e),
        }
    }
}

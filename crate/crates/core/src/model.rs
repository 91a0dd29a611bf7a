//! Model types, the likelihood, and the closed-form conditional updates for
//! the latent signals and the noise variances.
//!
//! Notation used throughout: `X` is the `n x p` data matrix, `G` assigns each
//! of the `p` columns to one of `K` groups, `Z` holds one latent signal column
//! per group, `phi` the per-group noise variances and `Omega` the `K x K`
//! precision matrix of the latent rows.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{HgmError, Result};

/// Lower bound applied to every noise variance after its update.
pub const PHI_FLOOR: f64 = 1e-8;

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Err(HgmError::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(())
}

/// Observed `n x p` data: rows are observations, columns are variables.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    standardized: bool,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let (n, p) = values.shape();
        if n < 2 || p < 1 {
            return Err(HgmError::TooSmall { n, p });
        }
        check_finite(&values)?;
        Ok(Self {
            values,
            standardized: false,
        })
    }

    /// Builds from row-major data.
    pub fn from_row_slice(n: usize, p: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * p {
            return Err(HgmError::DimensionMismatch {
                what: "row-major data length",
                expected: n * p,
                found: data.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(n, p, data))
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Column `j` as a contiguous slice of length `n`.
    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.values.as_slice()[j * n..(j + 1) * n]
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }
}

/// Centers every column and scales it to unit sample standard deviation
/// (denominator `n - 1`).
pub fn standardize(x: &DataMatrix) -> Result<DataMatrix> {
    let n = x.n();
    let mut out = x.values.clone();
    for j in 0..x.p() {
        let col = x.column(j);
        if col.iter().all(|&v| v == col[0]) {
            return Err(HgmError::ConstantColumn(j));
        }
        let mean = col.iter().sum::<f64>() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = libm::sqrt(ss / (n as f64 - 1.0));
        if !(sd > 0.0) {
            return Err(HgmError::ConstantColumn(j));
        }
        for (dst, v) in out.column_mut(j).iter_mut().zip(col) {
            *dst = (v - mean) / sd;
        }
    }
    Ok(DataMatrix {
        values: out,
        standardized: true,
    })
}

/// Partition of the `p` variables into `K` disjoint, non-empty groups.
///
/// Labels are zero-based internally; file formats use one-based labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    labels: Vec<usize>,
    sizes: Vec<usize>,
}

impl GroupAssignment {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        let mut sizes = vec![0usize; k];
        for (index, &label) in labels.iter().enumerate() {
            if label >= k {
                return Err(HgmError::LabelOutOfRange { index, label, k });
            }
            sizes[label] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(HgmError::EmptyGroup(empty));
        }
        Ok(Self { labels, sizes })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, j: usize) -> usize {
        self.labels[j]
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn p(&self) -> usize {
        self.labels.len()
    }

    /// Group sizes `|G_1|, ..., |G_K|`.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn members(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == k)
            .map(|(j, _)| j)
    }

    /// Number of variables whose label differs from `other`.
    pub fn changed_from(&self, other: &GroupAssignment) -> usize {
        self.labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a != b)
            .count()
    }

    fn check_against(&self, x: &DataMatrix) -> Result<()> {
        if self.p() != x.p() {
            return Err(HgmError::DimensionMismatch {
                what: "group labels vs data columns",
                expected: x.p(),
                found: self.p(),
            });
        }
        Ok(())
    }
}

/// Latent signals, one column per group (`n x K`).
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenSignals {
    values: DMatrix<f64>,
}

impl HiddenSignals {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn column(&self, k: usize) -> &[f64] {
        let n = self.n();
        &self.values.as_slice()[k * n..(k + 1) * n]
    }

    /// Sample second-moment matrix `Z^T Z / n`.
    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.n() as f64;
        let mut a = self.values.tr_mul(&self.values) / n;
        // exact symmetry
        for i in 0..a.nrows() {
            for j in 0..i {
                let v = a[(i, j)];
                a[(j, i)] = v;
            }
        }
        a
    }
}

/// Per-group noise variances.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVariances {
    phi: Vec<f64>,
    floored: bool,
}

impl NoiseVariances {
    /// Accepts any finite non-negative values; the likelihood additionally
    /// needs them strictly positive.
    pub fn new(phi: Vec<f64>) -> Result<Self> {
        for (k, &v) in phi.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(HgmError::NonPositiveVariance(k));
            }
        }
        Ok(Self {
            phi,
            floored: false,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.phi
    }

    pub fn k(&self) -> usize {
        self.phi.len()
    }

    /// True if any variance was raised to [`PHI_FLOOR`] by [`update_phi`].
    pub fn floored(&self) -> bool {
        self.floored
    }
}

/// Symmetric positive-definite `K x K` precision matrix with its support.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionMatrix {
    omega: DMatrix<f64>,
    support: Vec<bool>,
    log_det: f64,
}

impl PrecisionMatrix {
    /// Validates exact symmetry and positive definiteness.
    pub fn new(omega: DMatrix<f64>) -> Result<Self> {
        let k = omega.nrows();
        if omega.ncols() != k {
            return Err(HgmError::DimensionMismatch {
                what: "precision matrix columns",
                expected: k,
                found: omega.ncols(),
            });
        }
        check_finite(&omega)?;
        for i in 0..k {
            for j in 0..i {
                if omega[(i, j)] != omega[(j, i)] {
                    return Err(HgmError::NotSymmetric);
                }
            }
        }
        let log_det = log_det_pd(&omega).ok_or(HgmError::NotPositiveDefinite)?;
        let support = omega.iter().map(|&v| v != 0.0).collect();
        Ok(Self {
            omega,
            support,
            log_det,
        })
    }

    pub fn identity(k: usize) -> Self {
        Self::new(DMatrix::identity(k, k)).expect("identity is positive definite")
    }

    pub fn k(&self) -> usize {
        self.omega.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.omega
    }

    pub fn is_nonzero(&self, i: usize, j: usize) -> bool {
        self.support[i + j * self.k()]
    }

    /// Off-diagonal nonzero count `s` (both triangles, so always even).
    pub fn off_diagonal_nonzeros(&self) -> usize {
        let k = self.k();
        (0..k)
            .flat_map(|j| (0..k).map(move |i| (i, j)))
            .filter(|&(i, j)| i != j && self.is_nonzero(i, j))
            .count()
    }

    /// Sum of absolute values of all entries, diagonal included.
    pub fn l1_norm(&self) -> f64 {
        self.omega.iter().map(|v| v.abs()).sum()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `Omega^{-1}` through the Cholesky factor.
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        let chol = self
            .omega
            .clone()
            .cholesky()
            .ok_or(HgmError::NotPositiveDefinite)?;
        Ok(chol.inverse())
    }
}

/// `log det` of a symmetric matrix, `None` unless it is positive definite.
pub(crate) fn log_det_pd(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) {
            return None;
        }
        acc += libm::log(d);
    }
    Some(2.0 * acc)
}

/// The full parameter tuple together with its objective values.
#[derive(Debug, Clone, PartialEq)]
pub struct HgmState {
    pub z: HiddenSignals,
    pub g: GroupAssignment,
    pub omega: PrecisionMatrix,
    pub phi: NoiseVariances,
    /// Penalized objective `L + lambda * |Omega|_1`.
    pub objective: f64,
    /// Unpenalized negative log-likelihood `L`.
    pub neg_log_lik: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Group means `Zbar_{ik} = mean_{j in G_k} X_{ij}`, accumulated as offsets
/// from each group's first member so identical members give their value
/// exactly.
pub fn group_means(x: &DataMatrix, g: &GroupAssignment) -> Result<HiddenSignals> {
    g.check_against(x)?;
    let n = x.n();
    let k = g.k();
    let mut anchor: Vec<Option<usize>> = vec![None; k];
    let mut sums = DMatrix::<f64>::zeros(n, k);
    for j in 0..x.p() {
        let c = g.label(j);
        let a = *anchor[c].get_or_insert(j);
        let (col, base) = (x.column(j), x.column(a));
        let mut dst = sums.column_mut(c);
        for ((d, v), b) in dst.iter_mut().zip(col).zip(base) {
            *d += v - b;
        }
    }
    for (c, &size) in g.sizes().iter().enumerate() {
        let base = x.column(anchor[c].expect("groups are non-empty"));
        for (v, b) in sums.column_mut(c).iter_mut().zip(base) {
            *v = b + *v / size as f64;
        }
    }
    HiddenSignals::new(sums)
}

fn check_parts(
    x: &DataMatrix,
    z: &HiddenSignals,
    g: &GroupAssignment,
    k_other: &[(&'static str, usize)],
) -> Result<()> {
    g.check_against(x)?;
    if z.n() != x.n() {
        return Err(HgmError::DimensionMismatch {
            what: "latent signal rows vs observations",
            expected: x.n(),
            found: z.n(),
        });
    }
    if z.k() != g.k() {
        return Err(HgmError::DimensionMismatch {
            what: "latent signal columns vs groups",
            expected: g.k(),
            found: z.k(),
        });
    }
    for &(what, found) in k_other {
        if found != g.k() {
            return Err(HgmError::DimensionMismatch {
                what,
                expected: g.k(),
                found,
            });
        }
    }
    Ok(())
}

/// Per-group residual sums of squares `sum_{j in G_k} |X_j - Z_k|^2`.
pub fn group_residual_ss(x: &DataMatrix, z: &HiddenSignals, g: &GroupAssignment) -> Result<Vec<f64>> {
    check_parts(x, z, g, &[])?;
    let mut rss = vec![0.0; g.k()];
    for j in 0..x.p() {
        let k = g.label(j);
        rss[k] += sq_dist(x.column(j), z.column(k));
    }
    Ok(rss)
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// `tr(Z Omega Z^T) / n`.
fn latent_quadratic(z: &HiddenSignals, omega: &DMatrix<f64>) -> f64 {
    let zo = z.values() * omega;
    zo.dot(z.values()) / z.n() as f64
}

/// Unpenalized and penalized objective of a parameter tuple.
///
/// `L = sum_k [ sum_{j in G_k} |X_j - Z_k|^2 / (n phi_k) + |G_k| log phi_k ]
///      + tr(Z Omega Z^T) / n - log det Omega + K log(2 pi)`
pub fn evaluate_objective(
    x: &DataMatrix,
    z: &HiddenSignals,
    g: &GroupAssignment,
    omega: &PrecisionMatrix,
    phi: &NoiseVariances,
    lambda: f64,
) -> Result<(f64, f64)> {
    check_parts(x, z, g, &[("precision size", omega.k()), ("noise variances", phi.k())])?;
    if let Some(k) = phi.values().iter().position(|&v| !(v > 0.0)) {
        return Err(HgmError::NonPositiveVariance(k));
    }
    let n = x.n() as f64;
    let rss = group_residual_ss(x, z, g)?;
    let mut nll = 0.0;
    for (c, (&r, &ph)) in rss.iter().zip(phi.values()).enumerate() {
        nll += r / (n * ph) + g.sizes()[c] as f64 * libm::log(ph);
    }
    nll += latent_quadratic(z, omega.matrix());
    nll -= omega.log_det();
    nll += g.k() as f64 * libm::log(2.0 * PI);
    Ok((nll, nll + lambda * omega.l1_norm()))
}

/// `(L, L + lambda |Omega|_1)` for a stored state.
pub fn neg_log_likelihood(x: &DataMatrix, state: &HgmState, lambda: f64) -> Result<(f64, f64)> {
    evaluate_objective(x, &state.z, &state.g, &state.omega, &state.phi, lambda)
}

/// Conditional minimizer of the latent signals,
/// `Z* = Zbar D_G [D_G + Omega Phi]^{-1}`, computed by an LU solve of
/// `(D_G + Phi Omega) Z*^T = D_G Zbar^T`.
pub fn update_z(
    z_bar: &HiddenSignals,
    g: &GroupAssignment,
    omega: &PrecisionMatrix,
    phi: &NoiseVariances,
) -> Result<HiddenSignals> {
    let k = g.k();
    for (what, found) in [
        ("latent signal columns", z_bar.k()),
        ("precision size", omega.k()),
        ("noise variances", phi.k()),
    ] {
        if found != k {
            return Err(HgmError::DimensionMismatch {
                what,
                expected: k,
                found,
            });
        }
    }
    let sizes = g.sizes();
    let om = omega.matrix();
    let phis = phi.values();
    let system = DMatrix::from_fn(k, k, |a, b| {
        let d = if a == b { sizes[a] as f64 } else { 0.0 };
        d + phis[a] * om[(a, b)]
    });
    let mut rhs = z_bar.values().transpose();
    for (a, &size) in sizes.iter().enumerate() {
        rhs.row_mut(a).iter_mut().for_each(|v| *v *= size as f64);
    }
    let sol = system.lu().solve(&rhs).ok_or(HgmError::SingularSystem)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(HgmError::SingularSystem);
    }
    HiddenSignals::new(sol.transpose())
}

/// Conditional minimizer of the noise variances,
/// `phi_k* = sum_{j in G_k} |Z_k - X_j|^2 / (n |G_k|)`, floored at [`PHI_FLOOR`].
pub fn update_phi(x: &DataMatrix, z: &HiddenSignals, g: &GroupAssignment) -> Result<NoiseVariances> {
    let rss = group_residual_ss(x, z, g)?;
    let n = x.n() as f64;
    let mut floored = false;
    let phi = rss
        .iter()
        .zip(g.sizes())
        .map(|(&r, &m)| {
            let raw = r / (n * m as f64);
            if raw < PHI_FLOOR {
                floored = true;
                PHI_FLOOR
            } else {
                raw
            }
        })
        .collect();
    Ok(NoiseVariances { phi, floored })
}

/// The part of the objective that depends on `Z`:
/// `L_Z = sum_k sum_{j in G_k} |X_j - Z_k|^2 / (n phi_k) + tr(Z Omega Z^T) / n`.
pub fn lz_value(
    x: &DataMatrix,
    z: &HiddenSignals,
    g: &GroupAssignment,
    omega: &PrecisionMatrix,
    phi: &NoiseVariances,
) -> Result<f64> {
    check_parts(x, z, g, &[("precision size", omega.k()), ("noise variances", phi.k())])?;
    let n = x.n() as f64;
    let rss = group_residual_ss(x, z, g)?;
    let fit: f64 = rss.iter().zip(phi.values()).map(|(r, p)| r / (n * p)).sum();
    Ok(fit + latent_quadratic(z, omega.matrix()))
}

/// Exact gradient of [`lz_value`] with respect to `Z`:
/// `(2/n) [ (Z - Zbar) D_G Phi^{-1} + Z Omega ]`.
pub fn grad_lz(
    x: &DataMatrix,
    z: &HiddenSignals,
    g: &GroupAssignment,
    omega: &PrecisionMatrix,
    phi: &NoiseVariances,
) -> Result<DMatrix<f64>> {
    check_parts(x, z, g, &[("precision size", omega.k()), ("noise variances", phi.k())])?;
    if let Some(k) = phi.values().iter().position(|&v| !(v > 0.0)) {
        return Err(HgmError::NonPositiveVariance(k));
    }
    let z_bar = group_means(x, g)?;
    let scale = 2.0 / x.n() as f64;
    let mut grad = z.values() * omega.matrix();
    for c in 0..g.k() {
        let w = g.sizes()[c] as f64 / phi.values()[c];
        let zc = z.column(c);
        let zb = z_bar.column(c);
        for (i, v) in grad.column_mut(c).iter_mut().enumerate() {
            *v += w * (zc[i] - zb[i]);
        }
    }
    Ok(grad * scale)
}

//! Independent numerical oracles and random-instance generators shared by
//! the integration tests. Nothing here calls into the library's solvers.
#![allow(dead_code)]

use hgm_core::model::{DataMatrix, GroupAssignment, HiddenSignals, NoiseVariances, PrecisionMatrix};
use hgm_core::rng::{seeded, HgmRng};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> HgmRng {
    seeded(seed)
}

pub fn normal(rng: &mut HgmRng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_matrix(rng: &mut HgmRng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

/// `B B^T / k + shift I`, symmetrized exactly.
pub fn random_spd(rng: &mut HgmRng, k: usize, shift: f64) -> DMatrix<f64> {
    let b = normal_matrix(rng, k, k);
    let m = &b * b.transpose() / k as f64 + DMatrix::identity(k, k) * shift;
    DMatrix::from_fn(k, k, |i, j| if i <= j { m[(i, j)] } else { m[(j, i)] })
}

/// Labels with every group non-empty: the first `k` variables seed the
/// groups, the rest are uniform.
pub fn random_groups(rng: &mut HgmRng, p: usize, k: usize) -> GroupAssignment {
    let mut labels: Vec<usize> = (0..p).map(|j| if j < k { j } else { rng.random_range(0..k) }).collect();
    for j in (1..p).rev() {
        labels.swap(j, rng.random_range(0..=j));
    }
    GroupAssignment::new(labels, k).unwrap()
}

pub struct Instance {
    pub x: DataMatrix,
    pub g: GroupAssignment,
    pub omega: PrecisionMatrix,
    pub phi: NoiseVariances,
    pub z: HiddenSignals,
}

/// A small random instance with `n <= 20`, `p <= 30`, `K <= 5`.
pub fn small_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let n = r.random_range(3..=20);
    let k = r.random_range(1..=5);
    let p = r.random_range(k..=30);
    let g = random_groups(&mut r, p, k);
    let x = DataMatrix::new(normal_matrix(&mut r, n, p)).unwrap();
    let omega = PrecisionMatrix::new(random_spd(&mut r, k, 0.3)).unwrap();
    let phi = NoiseVariances::new((0..k).map(|_| r.random_range(0.2..2.0)).collect()).unwrap();
    let z = HiddenSignals::new(normal_matrix(&mut r, n, k)).unwrap();
    Instance { x, g, omega, phi, z }
}

/// Straight-line `sum_j |X_j - Z_{g(j)}|^2 / (n phi_{g(j)}) + tr(Z Omega Z^T) / n`.
pub fn lz_naive(x: &DMatrix<f64>, labels: &[usize], omega: &DMatrix<f64>, phi: &[f64], z: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let mut fit = 0.0;
    for (j, &l) in labels.iter().enumerate() {
        let mut d = 0.0;
        for i in 0..n {
            let e = x[(i, j)] - z[(i, l)];
            d += e * e;
        }
        fit += d / (n as f64 * phi[l]);
    }
    let k = z.ncols();
    let mut quad = 0.0;
    for i in 0..n {
        for a in 0..k {
            for b in 0..k {
                quad += z[(i, a)] * omega[(a, b)] * z[(i, b)];
            }
        }
    }
    fit + quad / n as f64
}

/// Residual sums of squares per group, computed directly.
pub fn rss_naive(x: &DMatrix<f64>, labels: &[usize], z: &DMatrix<f64>) -> Vec<f64> {
    let mut rss = vec![0.0; z.ncols()];
    for (j, &l) in labels.iter().enumerate() {
        for i in 0..x.nrows() {
            let e = x[(i, j)] - z[(i, l)];
            rss[l] += e * e;
        }
    }
    rss
}

/// The `phi`-dependent part of the likelihood written in `t = 1 / phi`:
/// `t RSS / n - m log t`.
pub fn phi_inverse_objective(t: f64, rss: f64, m: usize, n: usize) -> f64 {
    t * rss / n as f64 - m as f64 * t.ln()
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det_naive(m: &DMatrix<f64>) -> f64 {
    let mut a = m.clone();
    let k = a.nrows();
    let mut det = 1.0;
    for c in 0..k {
        let piv = (c..k).max_by(|&r, &s| a[(r, c)].abs().total_cmp(&a[(s, c)].abs())).unwrap();
        if a[(piv, c)] == 0.0 {
            return 0.0;
        }
        if piv != c {
            a.swap_rows(piv, c);
            det = -det;
        }
        det *= a[(c, c)];
        for r in c + 1..k {
            let f = a[(r, c)] / a[(c, c)];
            for s in c..k {
                a[(r, s)] -= f * a[(c, s)];
            }
        }
    }
    det
}

/// Sylvester's criterion on leading principal minors.
pub fn is_pd_naive(m: &DMatrix<f64>) -> bool {
    (1..=m.nrows()).all(|s| det_naive(&m.view((0, 0), (s, s)).into_owned()) > 0.0)
}

/// `tr(A Omega) - log det Omega + lambda sum |Omega_ij|`, `+inf` off the PD cone.
pub fn glasso_objective_naive(a: &DMatrix<f64>, omega: &DMatrix<f64>, lambda: f64) -> f64 {
    if !is_pd_naive(omega) {
        return f64::INFINITY;
    }
    let k = a.nrows();
    let mut tr = 0.0;
    let mut l1 = 0.0;
    for i in 0..k {
        for j in 0..k {
            tr += a[(i, j)] * omega[(j, i)];
            l1 += omega[(i, j)].abs();
        }
    }
    tr - det_naive(omega).ln() + lambda * l1
}

/// `0.5 b^T A b - b_i + lambda |b|_1`.
pub fn scio_objective_naive(a: &DMatrix<f64>, beta: &[f64], i: usize, lambda: f64) -> f64 {
    let k = beta.len();
    let mut q = 0.0;
    for r in 0..k {
        for c in 0..k {
            q += beta[r] * a[(r, c)] * beta[c];
        }
    }
    0.5 * q - beta[i] + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Golden-section search for the minimizer of a unimodal `f` on `[lo, hi]`.
pub fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// One-sided bracket along a coordinate: the largest step (doubling from
/// `start`) that stays finite and keeps descending, so the convex `f` is
/// finite on the whole bracket.
fn bracket(f: &impl Fn(f64) -> f64, x0: f64, dir: f64, start: f64) -> f64 {
    let f0 = f(x0);
    let mut s = start;
    for _ in 0..200 {
        let v = f(x0 + dir * s);
        if !v.is_finite() {
            s *= 0.5;
        } else if v < f0 {
            s *= 2.0;
        } else {
            return s;
        }
    }
    s
}

/// Cyclic exact coordinate minimization of a convex function that is smooth
/// plus separable, each one-dimensional problem solved by golden section.
pub fn coordinate_minimize(f: impl Fn(&[f64]) -> f64, x0: Vec<f64>, sweeps: usize, tol: f64) -> Vec<f64> {
    let mut x = x0;
    for _ in 0..sweeps {
        let mut moved = 0.0f64;
        for c in 0..x.len() {
            let line = |t: f64| {
                let mut y = x.clone();
                y[c] = t;
                f(&y)
            };
            let up = bracket(&line, x[c], 1.0, 0.1);
            let down = bracket(&line, x[c], -1.0, 0.1);
            let t = golden(&line, x[c] - down, x[c] + up, 1e-13);
            let t = if line(t) < line(x[c]) { t } else { x[c] };
            moved = moved.max((t - x[c]).abs());
            x[c] = t;
        }
        if moved < tol {
            break;
        }
    }
    x
}

fn sym_from_upper(k: usize, theta: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(k, k);
    let mut t = 0;
    for j in 0..k {
        for i in 0..=j {
            m[(i, j)] = theta[t];
            m[(j, i)] = theta[t];
            t += 1;
        }
    }
    m
}

/// Brute-force minimizer of the graphical lasso objective over symmetric
/// matrices, parameterized by the upper triangle.
pub fn glasso_oracle(a: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let k = a.nrows();
    let mut theta = Vec::new();
    for j in 0..k {
        for i in 0..=j {
            theta.push(if i == j { 1.0 / (a[(i, i)] + lambda) } else { 0.0 });
        }
    }
    let f = |t: &[f64]| glasso_objective_naive(a, &sym_from_upper(k, t), lambda);
    sym_from_upper(k, &coordinate_minimize(f, theta, 20_000, 1e-12))
}

/// Brute-force minimizer of the column objective.
pub fn scio_oracle(a: &DMatrix<f64>, i: usize, lambda: f64) -> Vec<f64> {
    let k = a.nrows();
    coordinate_minimize(|b: &[f64]| scio_objective_naive(a, b, i, lambda), vec![0.0; k], 20_000, 1e-12)
}

/// Minimizer of a strictly convex quadratic by one Newton step with a
/// finite-difference gradient and Hessian (central differences are exact on
/// quadratics, so a unit step only adds rounding), plus one refinement.
pub fn quadratic_minimize(f: impl Fn(&[f64]) -> f64, x0: Vec<f64>) -> Vec<f64> {
    let d = x0.len();
    let h = 1.0;
    let mut x = x0;
    for _ in 0..2 {
        let at = |dx: &[(usize, f64)]| {
            let mut y = x.clone();
            for &(c, v) in dx {
                y[c] += v;
            }
            f(&y)
        };
        let f0 = at(&[]);
        let grad = nalgebra::DVector::from_fn(d, |a, _| (at(&[(a, h)]) - at(&[(a, -h)])) / (2.0 * h));
        let mut hess = DMatrix::zeros(d, d);
        for a in 0..d {
            hess[(a, a)] = (at(&[(a, h)]) - 2.0 * f0 + at(&[(a, -h)])) / (h * h);
            for b in 0..a {
                let v = (at(&[(a, h), (b, h)]) - at(&[(a, h), (b, -h)]) - at(&[(a, -h), (b, h)])
                    + at(&[(a, -h), (b, -h)]))
                    / (4.0 * h * h);
                hess[(a, b)] = v;
                hess[(b, a)] = v;
            }
        }
        let step = hess.lu().solve(&grad).expect("non-singular Hessian");
        for (xi, s) in x.iter_mut().zip(step.iter()) {
            *xi -= s;
        }
    }
    x
}

/// Column-stacked copy of a matrix, and its inverse.
pub fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    m.as_slice().to_vec()
}

pub fn unflatten(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(r, c, v)
}

/// Plain Lloyd pass: assign to nearest center (ties to the smallest index),
/// then recompute the means of non-empty clusters.
pub fn lloyd_pass(x: &DMatrix<f64>, centers: &DMatrix<f64>) -> (Vec<usize>, DMatrix<f64>) {
    let (n, p, k) = (x.nrows(), x.ncols(), centers.ncols());
    let labels: Vec<usize> = (0..p)
        .map(|j| {
            let mut best = (0, f64::INFINITY);
            for c in 0..k {
                let d: f64 = (0..n).map(|i| (x[(i, j)] - centers[(i, c)]).powi(2)).sum();
                if d < best.1 {
                    best = (c, d);
                }
            }
            best.0
        })
        .collect();
    let mut out = centers.clone();
    for c in 0..k {
        let members: Vec<usize> = (0..p).filter(|&j| labels[j] == c).collect();
        if !members.is_empty() {
            for i in 0..n {
                out[(i, c)] = members.iter().map(|&j| x[(i, j)]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    (labels, out)
}

pub fn wss_naive(x: &DMatrix<f64>, centers: &DMatrix<f64>, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(j, &l)| (0..x.nrows()).map(|i| (x[(i, j)] - centers[(i, l)]).powi(2)).sum::<f64>())
        .sum()
}

//! Grouping of variables: Hartigan-Wong k-means for initialization,
//! nearest-center reassignment for the alternating updates, and the
//! coherence rate used to score a recovered grouping.
//!
//! Points are the `p` columns of the data matrix, living in `R^n`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HgmError, Result};
use crate::model::{sq_dist, DataMatrix, GroupAssignment, HiddenSignals, NoiseVariances};
use crate::par;
use crate::rng::{seeded, HgmRng};

/// Iteration cap of the optimal-transfer / quick-transfer loop.
pub const HW_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    /// `n x K`, one center per column.
    pub centers: DMatrix<f64>,
    pub labels: GroupAssignment,
    pub within_ss: f64,
    pub restarts_used: usize,
}

/// Distance used when reassigning variables to latent signals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReassignMetric {
    /// `|X_j - Z_k|^2`.
    #[default]
    Euclidean,
    /// `|X_j - Z_k|^2 / (n phi_k) + log phi_k`, the per-variable share of
    /// the likelihood.
    PhiWeighted,
}

fn center<'a>(centers: &'a DMatrix<f64>, k: usize) -> &'a [f64] {
    let n = centers.nrows();
    &centers.as_slice()[k * n..(k + 1) * n]
}

/// k-means++ seeding: first center uniform, later ones drawn with
/// probability proportional to the squared distance to the nearest chosen
/// center.
pub fn kmeanspp_centers(x: &DataMatrix, k: usize, rng: &mut HgmRng) -> Result<DMatrix<f64>> {
    let p = x.p();
    if k == 0 {
        return Err(HgmError::InvalidConfig("k must be at least 1".into()));
    }
    if k > p {
        return Err(HgmError::KTooLarge { k, p });
    }
    let n = x.n();
    let mut chosen = Vec::with_capacity(k);
    let first = rng.random_range(0..p);
    chosen.push(first);
    let mut d2: Vec<f64> = (0..p).map(|j| sq_dist(x.column(j), x.column(first))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (j, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(j);
                    break;
                }
            }
            // rounding at the tail: take the last point with positive weight
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("total > 0"))
        } else {
            let free: Vec<usize> = (0..p).filter(|j| !chosen.contains(j)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(pick);
        for (j, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.column(j), x.column(pick)));
        }
    }
    let mut centers = DMatrix::zeros(n, k);
    for (c, &j) in chosen.iter().enumerate() {
        centers.column_mut(c).copy_from_slice(x.column(j));
    }
    Ok(centers)
}

/// Moves, for each empty group in index order, the variable farthest from
/// its own center (among groups with more than one member) into it.
fn repair_empty(
    labels: &mut [usize],
    counts: &mut [usize],
    cost: impl Fn(usize, usize) -> f64,
) -> usize {
    let mut repaired = 0;
    for e in 0..counts.len() {
        if counts[e] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (j, &l) in labels.iter().enumerate() {
            if counts[l] > 1 {
                let d = cost(j, l);
                if best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((j, d));
                }
            }
        }
        if let Some((j, _)) = best {
            counts[labels[j]] -= 1;
            labels[j] = e;
            counts[e] += 1;
            repaired += 1;
        }
    }
    repaired
}

fn recompute_centers(x: &DataMatrix, labels: &[usize], k: usize) -> (DMatrix<f64>, Vec<usize>) {
    let n = x.n();
    let mut centers = DMatrix::zeros(n, k);
    let mut counts = vec![0usize; k];
    for (j, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (d, v) in centers.column_mut(l).iter_mut().zip(x.column(j)) {
            *d += v;
        }
    }
    for (l, &c) in counts.iter().enumerate() {
        if c > 0 {
            let inv = 1.0 / c as f64;
            centers.column_mut(l).iter_mut().for_each(|v| *v *= inv);
        }
    }
    (centers, counts)
}

/// Total within-cluster sum of squares.
pub fn within_ss(x: &DataMatrix, centers: &DMatrix<f64>, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(j, &l)| sq_dist(x.column(j), center(centers, l)))
        .sum()
}

/// Squared distance with early exit once `bound` is reached.
#[inline]
fn sq_dist_bounded(a: &[f64], b: &[f64], bound: f64) -> f64 {
    let mut acc = 0.0;
    for (u, v) in a.iter().zip(b) {
        let d = u - v;
        acc += d * d;
        if acc >= bound {
            return acc;
        }
    }
    acc
}

struct HwState<'a> {
    x: &'a DataMatrix,
    c: DMatrix<f64>,
    ic1: Vec<usize>,
    ic2: Vec<usize>,
    nc: Vec<usize>,
    an1: Vec<f64>,
    an2: Vec<f64>,
    ncp: Vec<i64>,
    d: Vec<f64>,
    itran: Vec<bool>,
    live: Vec<i64>,
    indx: usize,
}

impl HwState<'_> {
    fn transfer(&mut self, i: usize, l1: usize, l2: usize) {
        let al1 = self.nc[l1] as f64;
        let alw = al1 - 1.0;
        let al2 = self.nc[l2] as f64;
        let alt = al2 + 1.0;
        let n = self.x.n();
        let col = self.x.column(i);
        let cs = self.c.as_mut_slice();
        for r in 0..n {
            cs[l1 * n + r] = (cs[l1 * n + r] * al1 - col[r]) / alw;
            cs[l2 * n + r] = (cs[l2 * n + r] * al2 + col[r]) / alt;
        }
        self.nc[l1] -= 1;
        self.nc[l2] += 1;
        self.an2[l1] = alw / al1;
        self.an1[l1] = if alw > 1.0 { alw / (alw - 1.0) } else { f64::INFINITY };
        self.an1[l2] = alt / al2;
        self.an2[l2] = alt / (alt + 1.0);
        self.ic1[i] = l2;
        self.ic2[i] = l1;
    }

    fn optimal_transfer(&mut self) {
        let m = self.ic1.len() as i64;
        let k = self.nc.len();
        for l in 0..k {
            if self.itran[l] {
                self.live[l] = m + 1;
            }
        }
        for i in 0..self.ic1.len() {
            let step = i as i64 + 1;
            self.indx += 1;
            let l1 = self.ic1[i];
            if self.nc[l1] != 1 {
                let xi = self.x.column(i);
                if self.ncp[l1] != 0 {
                    self.d[i] = sq_dist(xi, center(&self.c, l1)) * self.an1[l1];
                }
                let ll = self.ic2[i];
                let mut l2 = ll;
                let mut r2 = sq_dist(xi, center(&self.c, ll)) * self.an2[ll];
                for l in 0..k {
                    if (step >= self.live[l1] && step >= self.live[l]) || l == l1 || l == ll {
                        continue;
                    }
                    let rr = r2 / self.an2[l];
                    let dc = sq_dist_bounded(xi, center(&self.c, l), rr);
                    if dc < rr {
                        r2 = dc * self.an2[l];
                        l2 = l;
                    }
                }
                if r2 >= self.d[i] {
                    self.ic2[i] = l2;
                } else {
                    self.indx = 0;
                    self.live[l1] = m + step;
                    self.live[l2] = m + step;
                    self.ncp[l1] = step;
                    self.ncp[l2] = step;
                    self.transfer(i, l1, l2);
                }
            }
            if self.indx == self.ic1.len() {
                return;
            }
        }
        for l in 0..k {
            self.itran[l] = false;
            self.live[l] -= m;
        }
    }

    fn quick_transfer(&mut self) {
        let m = self.ic1.len();
        let max_steps = 50 * m as i64;
        let mut icoun = 0usize;
        let mut istep: i64 = 0;
        loop {
            for i in 0..m {
                icoun += 1;
                istep += 1;
                let l1 = self.ic1[i];
                let l2 = self.ic2[i];
                if self.nc[l1] != 1 {
                    let xi = self.x.column(i);
                    if istep <= self.ncp[l1] {
                        self.d[i] = sq_dist(xi, center(&self.c, l1)) * self.an1[l1];
                    }
                    if istep < self.ncp[l1] || istep < self.ncp[l2] {
                        let r2 = self.d[i] / self.an2[l2];
                        let dd = sq_dist_bounded(xi, center(&self.c, l2), r2);
                        if dd < r2 {
                            icoun = 0;
                            self.indx = 0;
                            self.itran[l1] = true;
                            self.itran[l2] = true;
                            self.ncp[l1] = istep + m as i64;
                            self.ncp[l2] = istep + m as i64;
                            self.transfer(i, l1, l2);
                        }
                    }
                }
                if icoun == m || istep >= max_steps {
                    return;
                }
            }
        }
    }
}

/// Hartigan-Wong k-means (optimal-transfer and quick-transfer stages) from
/// the given initial centers.
pub fn hartigan_wong(x: &DataMatrix, initial_centers: &DMatrix<f64>, max_iter: usize) -> Result<KmeansResult> {
    let p = x.p();
    let k = initial_centers.ncols();
    if initial_centers.nrows() != x.n() {
        return Err(HgmError::DimensionMismatch {
            what: "initial center length",
            expected: x.n(),
            found: initial_centers.nrows(),
        });
    }
    if k == 0 {
        return Err(HgmError::InvalidConfig("k must be at least 1".into()));
    }
    if k > p {
        return Err(HgmError::KTooLarge { k, p });
    }

    let mut ic1 = vec![0usize; p];
    let mut ic2 = vec![0usize; p];
    for j in 0..p {
        let xj = x.column(j);
        let (mut b1, mut d1) = (0usize, f64::INFINITY);
        let (mut b2, mut d2) = (0usize, f64::INFINITY);
        for l in 0..k {
            let d = sq_dist(xj, center(initial_centers, l));
            if d < d1 {
                b2 = b1;
                d2 = d1;
                b1 = l;
                d1 = d;
            } else if d < d2 {
                b2 = l;
                d2 = d;
            }
        }
        ic1[j] = b1;
        ic2[j] = if k > 1 && b2 == b1 { (b1 + 1) % k } else { b2 };
    }
    let mut counts = vec![0usize; k];
    ic1.iter().for_each(|&l| counts[l] += 1);
    if counts.contains(&0) {
        repair_empty(&mut ic1, &mut counts, |j, l| sq_dist(x.column(j), center(initial_centers, l)));
        for j in 0..p {
            if ic2[j] == ic1[j] && k > 1 {
                ic2[j] = (ic1[j] + 1) % k;
            }
        }
    }
    let (centers, nc) = recompute_centers(x, &ic1, k);

    if k == 1 {
        let labels = GroupAssignment::new(ic1, 1)?;
        let wss = within_ss(x, &centers, labels.labels());
        return Ok(KmeansResult {
            centers,
            labels,
            within_ss: wss,
            restarts_used: 1,
        });
    }

    let an2 = nc.iter().map(|&a| a as f64 / (a as f64 + 1.0)).collect();
    let an1 = nc
        .iter()
        .map(|&a| if a > 1 { a as f64 / (a as f64 - 1.0) } else { f64::INFINITY })
        .collect();
    let mut st = HwState {
        x,
        c: centers,
        ic1,
        ic2,
        nc,
        an1,
        an2,
        ncp: vec![-1; k],
        d: vec![0.0; p],
        itran: vec![true; k],
        live: vec![0; k],
        indx: 0,
    };
    for _ in 0..max_iter {
        st.optimal_transfer();
        if st.indx == p {
            break;
        }
        st.quick_transfer();
        if k == 2 {
            break;
        }
        st.ncp.iter_mut().for_each(|v| *v = 0);
    }
    let (centers, _) = recompute_centers(x, &st.ic1, k);
    let labels = GroupAssignment::new(st.ic1, k)?;
    let wss = within_ss(x, &centers, labels.labels());
    Ok(KmeansResult {
        centers,
        labels,
        within_ss: wss,
        restarts_used: 1,
    })
}

/// Best of `restarts` k-means++-seeded Hartigan-Wong runs by within-cluster
/// sum of squares (ties keep the earlier run). Deterministic in
/// `(seed, restarts)`.
pub fn kmeans_init(x: &DataMatrix, k: usize, seed: u64, restarts: usize) -> Result<KmeansResult> {
    if k == 0 {
        return Err(HgmError::InvalidConfig("k must be at least 1".into()));
    }
    if k > x.p() {
        return Err(HgmError::KTooLarge { k, p: x.p() });
    }
    let mut rng = seeded(seed);
    let mut best: Option<KmeansResult> = None;
    for _ in 0..restarts.max(1) {
        let init = kmeanspp_centers(x, k, &mut rng)?;
        let run = hartigan_wong(x, &init, HW_MAX_ITER)?;
        if best.as_ref().is_none_or(|b| run.within_ss < b.within_ss) {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one restart");
    best.restarts_used = restarts.max(1);
    Ok(best)
}

/// Result of a nearest-center reassignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Reassignment {
    pub groups: GroupAssignment,
    /// Number of empty groups that had to be refilled.
    pub repaired: usize,
}

/// Assigns every variable to its closest latent signal (ties go to the
/// smallest group index), then refills empty groups.
///
/// `phi` is required for [`ReassignMetric::PhiWeighted`] and ignored otherwise.
pub fn reassign_groups(
    x: &DataMatrix,
    z: &HiddenSignals,
    metric: ReassignMetric,
    phi: Option<&NoiseVariances>,
) -> Result<Reassignment> {
    if z.n() != x.n() {
        return Err(HgmError::DimensionMismatch {
            what: "latent signal rows vs observations",
            expected: x.n(),
            found: z.n(),
        });
    }
    let k = z.k();
    let n = x.n() as f64;
    let weights: Option<Vec<(f64, f64)>> = match metric {
        ReassignMetric::Euclidean => None,
        ReassignMetric::PhiWeighted => {
            let phi = phi.ok_or_else(|| HgmError::InvalidConfig("phi-weighted reassignment needs phi".into()))?;
            if phi.k() != k {
                return Err(HgmError::DimensionMismatch {
                    what: "noise variances",
                    expected: k,
                    found: phi.k(),
                });
            }
            Some(phi.values().iter().map(|&v| (1.0 / (n * v), libm::log(v))).collect())
        }
    };
    let cost = |j: usize, l: usize| {
        let d = sq_dist(x.column(j), z.column(l));
        match &weights {
            None => d,
            Some(w) => d * w[l].0 + w[l].1,
        }
    };
    let mut labels = par::map_indexed(x.p(), |j| {
        let mut best = 0;
        let mut best_cost = cost(j, 0);
        for l in 1..k {
            let c = cost(j, l);
            if c < best_cost {
                best = l;
                best_cost = c;
            }
        }
        best
    });
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    let repaired = repair_empty(&mut labels, &mut counts, cost);
    Ok(Reassignment {
        groups: GroupAssignment::new(labels, k)?,
        repaired,
    })
}

/// For every true group, the largest fraction of it captured by a single
/// estimated group.
pub fn coherence_rates(est: &GroupAssignment, truth: &GroupAssignment) -> Result<Vec<f64>> {
    if est.p() != truth.p() {
        return Err(HgmError::DimensionMismatch {
            what: "estimated vs true group labels",
            expected: truth.p(),
            found: est.p(),
        });
    }
    let ke = est.k();
    let mut table = vec![0usize; truth.k() * ke];
    for (&t, &e) in truth.labels().iter().zip(est.labels()) {
        table[t * ke + e] += 1;
    }
    Ok(truth
        .sizes()
        .iter()
        .enumerate()
        .map(|(t, &size)| {
            let best = table[t * ke..(t + 1) * ke].iter().copied().max().unwrap_or(0);
            best as f64 / size as f64
        })
        .collect())
}

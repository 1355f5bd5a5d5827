//! Depth-first subset enumeration on the triangular factor of the centered
//! data.
//!
//! With `X_c` and `y_c` centered, `[X_c | y_c] = Q R` and every inner product
//! between columns is preserved by the columns of `R`. A node of the search
//! tree holds the columns still available for inclusion, orthogonalized
//! (modified Gram-Schmidt) against the columns already included, together
//! with the residual of `y`. Adding a column costs one projection per
//! remaining column on vectors of length `p + 1` instead of `n`.
//!
//! In branch-and-bound mode each node also computes, for every child, the
//! RSS of the largest model in the child's subtree. RSS never increases when
//! a column is added, so that value bounds every model below the child, and
//! the child is dropped when it cannot reach any per-size top list or the
//! BIC window.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector};

use super::Mask;
use crate::error::{Error, Result};
use crate::numerics::PivotedQr;

/// Relative norm below which an orthogonalized column is treated as
/// dependent on the columns already in the model.
const DEPENDENCE_TOLERANCE: f64 = 1e-9;
/// RSS below this fraction of TSS is a numerically perfect fit.
const DEGENERATE_FRACTION: f64 = 1e-12;
const BIC_SLACK: f64 = 1e-7;
const RSS_SLACK: f64 = 1e-10;

/// Raw RSS values produced by the enumeration.
#[derive(Debug, Clone)]
pub struct SubsetScores {
    /// `(mask, rss)` for every kept subset, in visiting order.
    pub models: Vec<(Mask, f64)>,
    pub tss: f64,
    pub rank_deficient: u64,
    pub degenerate: u64,
    pub evaluated: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    rss: f64,
    mask: Mask,
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rss.total_cmp(&other.rss).then(self.mask.cmp(&other.mask))
    }
}

/// How much of the subset lattice is visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Every subset, no pruning.
    Exhaustive,
    /// Every subset that can still lie inside the BIC window; the models
    /// inside the window are exactly those of `Exhaustive`.
    Window,
    /// Window pruning plus the per-size beam of the given width.
    BranchAndBound(usize),
}

struct Dfs {
    rows: usize,
    col_norm2: Vec<f64>,
    max_size: usize,
    strategy: Strategy,
    nbest: Option<usize>,
    nf: f64,
    ln_n: f64,
    tss: f64,
    bic_window: f64,
    best_bic: f64,
    binom: Vec<Vec<u64>>,
    models: Vec<(Mask, f64)>,
    heaps: Vec<BinaryHeap<HeapEntry>>,
    rank_deficient: u64,
    degenerate: u64,
    evaluated: u64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Dfs {
    fn record(&mut self, mask: Mask, size: usize, rss: f64) {
        self.evaluated += 1;
        if rss <= DEGENERATE_FRACTION * self.tss {
            self.degenerate += 1;
            return;
        }
        let bic = self.nf * (rss / self.tss).ln() + size as f64 * self.ln_n;
        if bic < self.best_bic {
            self.best_bic = bic;
        }
        match self.nbest {
            None => self.models.push((mask, rss)),
            Some(limit) => {
                let heap = &mut self.heaps[size];
                let entry = HeapEntry { rss, mask };
                if heap.len() < limit {
                    heap.push(entry);
                } else if heap.peek().is_some_and(|worst| entry < *worst) {
                    heap.pop();
                    heap.push(entry);
                }
            }
        }
    }

    /// Number of subsets of `rest` free columns with at most `extra` members.
    fn subtree_count(&self, rest: usize, extra: usize) -> u64 {
        (0..=rest.min(extra)).fold(0u64, |acc, s| acc.saturating_add(self.binom[rest][s]))
    }

    fn dependent(&self, var: usize, residual_norm2: f64) -> bool {
        let base = self.col_norm2[var];
        base <= 0.0 || residual_norm2 <= DEPENDENCE_TOLERANCE * DEPENDENCE_TOLERANCE * base
    }

    /// `bounds[k]` = RSS of the model that adds columns `k..len` to the node.
    fn suffix_bounds(&self, vars: &[usize], cols: &[f64]) -> Vec<f64> {
        let m = self.rows;
        let len = vars.len();
        let mut work = cols.to_vec();
        let mut bounds = vec![0.0; len];
        for k in (0..len).rev() {
            let (head, tail) = work.split_at_mut(k * m);
            let (ck, rest) = tail.split_at_mut(m);
            let nrm2 = dot(ck, ck);
            if !self.dependent(vars[k], nrm2) {
                let inv = 1.0 / nrm2.sqrt();
                ck.iter_mut().for_each(|v| *v *= inv);
                let y = &mut rest[(len - k - 1) * m..];
                let d = dot(ck, y);
                y.iter_mut().zip(ck.iter()).for_each(|(yv, q)| *yv -= d * q);
                for j in 0..k {
                    let cj = &mut head[j * m..(j + 1) * m];
                    let d = dot(ck, cj);
                    cj.iter_mut().zip(ck.iter()).for_each(|(c, q)| *c -= d * q);
                }
            }
            let y = &work[len * m..];
            bounds[k] = dot(y, y);
        }
        bounds
    }

    fn prunable(&self, bound: f64, child_size: usize, rest: usize) -> bool {
        if bound > DEGENERATE_FRACTION * self.tss {
            let lower = self.nf * (bound / self.tss).ln() + child_size as f64 * self.ln_n;
            if lower > self.best_bic + self.bic_window + BIC_SLACK {
                return true;
            }
        }
        let Some(limit) = self.nbest else {
            return false;
        };
        let top = (child_size + rest).min(self.max_size);
        (child_size..=top).all(|s| {
            let heap = &self.heaps[s];
            heap.len() >= limit
                && heap.peek().is_some_and(|worst| worst.rss < bound * (1.0 - RSS_SLACK))
        })
    }

    fn visit(&mut self, mask: Mask, size: usize, vars: &[usize], cols: &[f64], rss: f64) {
        self.record(mask, size, rss);
        let len = vars.len();
        if size >= self.max_size || len == 0 {
            return;
        }
        let m = self.rows;
        let bounds = (self.strategy != Strategy::Exhaustive).then(|| self.suffix_bounds(vars, cols));
        for k in 0..len {
            let ck = &cols[k * m..(k + 1) * m];
            let nrm2 = dot(ck, ck);
            let rest = len - k - 1;
            if self.dependent(vars[k], nrm2) {
                let skipped = self.subtree_count(rest, self.max_size - size - 1);
                self.rank_deficient = self.rank_deficient.saturating_add(skipped);
                continue;
            }
            if let Some(b) = &bounds {
                if self.prunable(b[k], size + 1, rest) {
                    continue;
                }
            }
            let inv = 1.0 / nrm2.sqrt();
            let q: Vec<f64> = ck.iter().map(|v| v * inv).collect();
            let mut child = Vec::with_capacity(m * (rest + 1));
            for j in k + 1..=len {
                let src = &cols[j * m..(j + 1) * m];
                let d = dot(&q, src);
                child.extend(src.iter().zip(q.iter()).map(|(s, qv)| s - d * qv));
            }
            let y = &child[rest * m..];
            let child_rss = dot(y, y);
            self.visit(mask.with(vars[k]), size + 1, &vars[k + 1..], &child, child_rss);
        }
    }
}

fn binomials(max: usize) -> Vec<Vec<u64>> {
    let mut t = vec![vec![0u64; max + 1]; max + 1];
    for n in 0..=max {
        t[n][0] = 1;
        for k in 1..=n {
            t[n][k] = t[n - 1][k - 1].saturating_add(if k <= n - 1 { t[n - 1][k] } else { 0 });
        }
    }
    t
}

/// Ordering that puts the columns with the largest drop-one RSS increase in
/// the full model first, so that children excluding them are pruned early.
fn importance_order(r: &DMatrix<f64>, p: usize) -> Vec<usize> {
    let x = r.columns(0, p).into_owned();
    let y = r.column(p).into_owned();
    let qr = PivotedQr::new(&x);
    let mut score: Vec<f64> = match (qr.solve(&y), qr.unscaled_covariance()) {
        (Ok(b), Ok(cov)) => (0..p).map(|j| b[j] * b[j] / cov[(j, j)]).collect(),
        _ => (0..p)
            .map(|j| {
                let c = r.column(j);
                let nrm = c.norm_squared();
                if nrm > 0.0 {
                    c.dot(&y).powi(2) / nrm
                } else {
                    0.0
                }
            })
            .collect(),
    };
    for s in score.iter_mut() {
        if !s.is_finite() {
            *s = 0.0;
        }
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    order
}

/// Computes RSS for the subsets of the columns of `x` (each model with an
/// intercept) up to `max_size` columns.
///
/// `Exhaustive` keeps every subset. `Window` drops subtrees whose BIC cannot
/// come within `bic_window` of the best. `BranchAndBound(k)` additionally
/// keeps only the `k` lowest-RSS subsets of each size.
pub fn enumerate_subsets(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    max_size: usize,
    strategy: Strategy,
    bic_window: f64,
) -> Result<SubsetScores> {
    let nbest = match strategy {
        Strategy::BranchAndBound(k) => Some(k),
        _ => None,
    };
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} rows but response length {}", y.len())));
    }
    if n < 2 {
        return Err(Error::InsufficientObservations { n, needed: 1 });
    }
    let max_size = max_size.min(p);
    let y_mean = y.mean();
    let yc = y.map(|v| v - y_mean);
    let tss = yc.norm_squared();
    if !(tss > 0.0) {
        return Err(Error::ConstantResponse("response".into()));
    }

    let mut aug = DMatrix::zeros(n, p + 1);
    let mut col_norm2 = vec![0.0; p];
    for j in 0..p {
        let c = x.column(j);
        let mean = c.mean();
        let raw = c.norm_squared();
        let centered = c.map(|v| v - mean);
        let cn = centered.norm_squared();
        // A column that is constant up to rounding is absorbed by the intercept.
        col_norm2[j] = if cn <= 1e-24 * raw.max(f64::MIN_POSITIVE) { 0.0 } else { cn };
        aug.set_column(j, &centered);
    }
    aug.set_column(p, &yc);
    let r = PivotedQr::new(&aug).r_factor();
    let rows = r.nrows();

    let order = match strategy {
        Strategy::Exhaustive => (0..p).collect(),
        _ => importance_order(&r, p),
    };
    let mut cols = Vec::with_capacity(rows * (p + 1));
    for &j in &order {
        cols.extend(r.column(j).iter());
    }
    cols.extend(r.column(p).iter());

    let mut dfs = Dfs {
        rows,
        col_norm2,
        max_size,
        strategy,
        nbest,
        nf: n as f64,
        ln_n: (n as f64).ln(),
        tss,
        bic_window,
        best_bic: f64::INFINITY,
        binom: binomials(p),
        models: Vec::new(),
        heaps: (0..=p).map(|_| BinaryHeap::new()).collect(),
        rank_deficient: 0,
        degenerate: 0,
        evaluated: 0,
    };
    dfs.visit(Mask::EMPTY, 0, &order, &cols, tss);

    let models = match nbest {
        None => dfs.models,
        Some(_) => {
            let mut all: Vec<(Mask, f64)> = Vec::new();
            for heap in dfs.heaps {
                let mut v = heap.into_sorted_vec();
                all.extend(v.drain(..).map(|e| (e.mask, e.rss)));
            }
            all
        }
    };
    Ok(SubsetScores {
        models,
        tss,
        rank_deficient: dfs.rank_deficient,
        degenerate: dfs.degenerate,
        evaluated: dfs.evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{intercept_design, qr::ols_fit_matrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exhaustive_rss_matches_direct_fits() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, p) = (40, 6);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(n, |i, _| x[(i, 1)] * 2.0 - x[(i, 4)] + rng.random::<f64>());
        let scores = enumerate_subsets(&x, &y, p, Strategy::Exhaustive, 6.0).unwrap();
        assert_eq!(scores.models.len(), 1 << p);
        for &(mask, rss) in &scores.models {
            let d = intercept_design(&x.select_columns(&mask.indices()));
            let fit = ols_fit_matrix(&d, &y).unwrap();
            assert!((fit.rss - rss).abs() < 1e-10 * scores.tss, "{mask:?}");
        }
    }

    #[test]
    fn max_size_limits_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = DMatrix::from_fn(30, 5, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(30, |_, _| rng.random::<f64>());
        let scores = enumerate_subsets(&x, &y, 2, Strategy::Exhaustive, 6.0).unwrap();
        assert_eq!(scores.models.len(), 1 + 5 + 10);
        assert!(scores.models.iter().all(|(m, _)| m.size() <= 2));
    }

    #[test]
    fn constant_response_is_an_error() {
        let x = DMatrix::from_fn(10, 2, |i, j| (i * (j + 1)) as f64);
        let y = DVector::from_element(10, 3.0);
        assert!(matches!(enumerate_subsets(&x, &y, 2, Strategy::Exhaustive, 6.0), Err(Error::ConstantResponse(_))));
    }

    #[test]
    fn constant_column_counts_as_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = DMatrix::from_fn(20, 3, |_, _| rng.random::<f64>());
        x.column_mut(1).fill(4.2);
        let y = DVector::from_fn(20, |_, _| rng.random::<f64>());
        let scores = enumerate_subsets(&x, &y, 3, Strategy::Exhaustive, 6.0).unwrap();
        assert_eq!(scores.models.len(), 4);
        assert_eq!(scores.rank_deficient, 4);
        assert!(scores.models.iter().all(|(m, _)| !m.contains(1)));
    }

    fn in_window(scores: &SubsetScores, window: f64) -> Vec<(Mask, f64)> {
        let n = 60.0_f64;
        let bic: Vec<(Mask, f64)> = scores
            .models
            .iter()
            .map(|&(m, rss)| (m, n * (rss / scores.tss).ln() + m.size() as f64 * n.ln()))
            .collect();
        let best = bic.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
        let mut kept: Vec<(Mask, f64)> = bic.into_iter().filter(|b| b.1 <= best + window).collect();
        kept.sort_by(|a, b| a.0.cmp(&b.0));
        kept
    }

    #[test]
    fn window_pruning_keeps_the_exhaustive_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (n, p) = (60, 10);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(n, |i, _| 3.0 * x[(i, 0)] - 2.0 * x[(i, 5)] + 0.5 * rng.random::<f64>());
        let window = 2.0 * 20f64.ln();
        let full = enumerate_subsets(&x, &y, p, Strategy::Exhaustive, window).unwrap();
        let pruned = enumerate_subsets(&x, &y, p, Strategy::Window, window).unwrap();
        assert!(pruned.evaluated < full.evaluated);
        let (a, b) = (in_window(&full, window), in_window(&pruned, window));
        assert_eq!(a.len(), b.len());
        for (u, v) in a.iter().zip(&b) {
            assert_eq!(u.0, v.0);
            assert!((u.1 - v.1).abs() < 1e-9);
        }
    }
}

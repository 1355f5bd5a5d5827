use nalgebra::{DMatrix, DVector};

use super::{centered_tss, DesignMatrix};
use crate::error::{Error, Result};

/// Relative threshold on |R_kk| / |R_00| below which a pivoted column is
/// treated as linearly dependent.
pub const RANK_TOLERANCE: f64 = 1e-9;

/// Householder QR with column pivoting, `A P = Q R`.
///
/// Householder vectors are stored below the diagonal with an implicit unit
/// leading entry (LAPACK `geqp3` layout).
#[derive(Debug, Clone)]
pub struct PivotedQr {
    qr: DMatrix<f64>,
    tau: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (n, p) = a.shape();
        let mut qr = a.clone();
        let kmax = n.min(p);
        let mut tau = vec![0.0; kmax];
        let mut perm: Vec<usize> = (0..p).collect();

        for k in 0..kmax {
            // Pivot: remaining column with the largest trailing norm.
            let mut best = k;
            let mut best_norm = -1.0;
            for j in k..p {
                let s: f64 = qr.view((k, j), (n - k, 1)).iter().map(|v| v * v).sum();
                if s > best_norm {
                    best_norm = s;
                    best = j;
                }
            }
            if best != k {
                qr.swap_columns(k, best);
                perm.swap(k, best);
            }

            let x0 = qr[(k, k)];
            let norm = best_norm.max(0.0).sqrt();
            if norm == 0.0 {
                tau[k] = 0.0;
                continue;
            }
            let beta = if x0 >= 0.0 { -norm } else { norm };
            let t = (beta - x0) / beta;
            let scale = 1.0 / (x0 - beta);
            for i in k + 1..n {
                qr[(i, k)] *= scale;
            }
            qr[(k, k)] = beta;
            tau[k] = t;

            for j in k + 1..p {
                let mut dot = qr[(k, j)];
                for i in k + 1..n {
                    dot += qr[(i, k)] * qr[(i, j)];
                }
                dot *= t;
                qr[(k, j)] -= dot;
                for i in k + 1..n {
                    let v = qr[(i, k)];
                    qr[(i, j)] -= dot * v;
                }
            }
        }

        let r00 = if kmax > 0 { qr[(0, 0)].abs() } else { 0.0 };
        let mut rank = 0;
        while rank < kmax && r00 > 0.0 && qr[(rank, rank)].abs() > RANK_TOLERANCE * r00 {
            rank += 1;
        }
        Self { qr, tau, perm, rank }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn nrows(&self) -> usize {
        self.qr.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.qr.ncols()
    }

    /// The triangular factor with columns returned to their original order
    /// (`min(n, p)` rows): column `j` holds the coordinates of input column
    /// `j` in the orthonormal basis `Q`.
    pub fn r_factor(&self) -> DMatrix<f64> {
        let kmax = self.tau.len();
        let mut r = DMatrix::zeros(kmax, self.ncols());
        if kmax == 0 {
            return r;
        }
        for (k, &orig) in self.perm.iter().enumerate() {
            for i in 0..=k.min(kmax.saturating_sub(1)) {
                r[(i, orig)] = self.qr[(i, k)];
            }
        }
        r
    }

    /// `perm[k]` is the original index of the k-th pivoted column.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    fn reflect(&self, k: usize, b: &mut [f64]) {
        let t = self.tau[k];
        if t == 0.0 {
            return;
        }
        let n = self.qr.nrows();
        let mut dot = b[k];
        for i in k + 1..n {
            dot += self.qr[(i, k)] * b[i];
        }
        dot *= t;
        b[k] -= dot;
        for i in k + 1..n {
            b[i] -= dot * self.qr[(i, k)];
        }
    }

    pub fn apply_qt(&self, b: &mut [f64]) {
        for k in 0..self.tau.len() {
            self.reflect(k, b);
        }
    }

    pub fn apply_q(&self, b: &mut [f64]) {
        for k in (0..self.tau.len()).rev() {
            self.reflect(k, b);
        }
    }

    /// Least-squares solution; requires full column rank.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let p = self.ncols();
        if b.len() != self.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "response length {} != {} rows",
                b.len(),
                self.nrows()
            )));
        }
        if self.rank < p {
            return Err(Error::RankDeficient { rank: self.rank, columns: p });
        }
        let mut c = b.as_slice().to_vec();
        self.apply_qt(&mut c);
        let mut z = vec![0.0; p];
        for k in (0..p).rev() {
            let mut s = c[k];
            for j in k + 1..p {
                s -= self.qr[(k, j)] * z[j];
            }
            z[k] = s / self.qr[(k, k)];
        }
        let mut x = DVector::zeros(p);
        for (k, &orig) in self.perm.iter().enumerate() {
            x[orig] = z[k];
        }
        Ok(x)
    }

    /// Orthogonal projection of `b` onto the span of the first `rank`
    /// pivoted columns. Works for rank-deficient designs.
    pub fn fitted(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut c = b.as_slice().to_vec();
        self.apply_qt(&mut c);
        for v in c.iter_mut().skip(self.rank) {
            *v = 0.0;
        }
        self.apply_q(&mut c);
        DVector::from_vec(c)
    }

    pub fn residuals(&self, b: &DVector<f64>) -> DVector<f64> {
        b - self.fitted(b)
    }

    /// Column-wise residual matrix `M_A B`.
    pub fn residual_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        for j in 0..b.ncols() {
            let r = self.residuals(&b.column(j).into_owned());
            out.set_column(j, &r);
        }
        out
    }

    /// `(A'A)^{-1}` via `P R^{-1} R^{-T} P'`; requires full column rank.
    pub fn unscaled_covariance(&self) -> Result<DMatrix<f64>> {
        let p = self.ncols();
        if self.rank < p {
            return Err(Error::RankDeficient { rank: self.rank, columns: p });
        }
        // R^{-1}, upper triangular.
        let mut rinv = DMatrix::zeros(p, p);
        for j in 0..p {
            rinv[(j, j)] = 1.0 / self.qr[(j, j)];
            for i in (0..j).rev() {
                let mut s = 0.0;
                for k in i + 1..=j {
                    s += self.qr[(i, k)] * rinv[(k, j)];
                }
                rinv[(i, j)] = -s / self.qr[(i, i)];
            }
        }
        let inner = &rinv * rinv.transpose();
        let mut out = DMatrix::zeros(p, p);
        for a in 0..p {
            for b in 0..p {
                out[(self.perm[a], self.perm[b])] = inner[(a, b)];
            }
        }
        Ok(out)
    }
}

/// Ordinary least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresFit {
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    pub rss: f64,
    /// Centered R², clamped to [0, 1].
    pub r_squared: f64,
    /// `sigma2 * (X'X)^{-1}` with `sigma2 = rss / (n - p)`.
    pub coefficient_covariance: DMatrix<f64>,
    pub sigma2: f64,
    pub rank: usize,
}

/// Fits `response ~ design` (no implicit intercept) through a pivoted QR.
pub fn ols_fit(design: &DesignMatrix, response: &DVector<f64>) -> Result<LeastSquaresFit> {
    ols_fit_matrix(design.values(), response)
}

pub(crate) fn ols_fit_matrix(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LeastSquaresFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design has {n} rows but response has {}",
            y.len()
        )));
    }
    if n <= p {
        return Err(Error::InsufficientObservations { n, needed: p });
    }
    let qr = PivotedQr::new(x);
    let coefficients = qr.solve(y)?;
    let residuals = y - x * &coefficients;
    let rss = residuals.norm_squared();
    let tss = centered_tss(y);
    let r_squared = if tss > 0.0 { (1.0 - rss / tss).clamp(0.0, 1.0) } else { 0.0 };
    let sigma2 = rss / (n - p) as f64;
    let coefficient_covariance = qr.unscaled_covariance()? * sigma2;
    Ok(LeastSquaresFit {
        coefficients,
        residuals,
        rss,
        r_squared,
        coefficient_covariance,
        sigma2,
        rank: qr.rank(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::intercept_design;

    fn toy_design() -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_row_slice(
            6,
            2,
            &[1.0, 0.5, 1.0, 1.5, 1.0, 2.0, 1.0, 3.5, 1.0, 4.0, 1.0, 6.0],
        );
        let y = DVector::from_vec(vec![1.2, 2.9, 3.1, 5.8, 6.6, 9.4]);
        (x, y)
    }

    #[test]
    fn matches_hand_normal_equations() {
        // Oracle: solve the 2x2 normal equations by Cramer's rule.
        let (x, y) = toy_design();
        let (mut s1, mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..6 {
            let xi = x[(i, 1)];
            s1 += 1.0;
            sx += xi;
            sxx += xi * xi;
            sy += y[i];
            sxy += xi * y[i];
        }
        let det = s1 * sxx - sx * sx;
        let b0 = (sxx * sy - sx * sxy) / det;
        let b1 = (s1 * sxy - sx * sy) / det;
        let fit = ols_fit_matrix(&x, &y).unwrap();
        assert!((fit.coefficients[0] - b0).abs() < 1e-10);
        assert!((fit.coefficients[1] - b1).abs() < 1e-10);
        // Residuals orthogonal to the design.
        let g = x.transpose() * &fit.residuals;
        assert!(g.amax() < 1e-10);
        assert!((fit.rss - fit.residuals.norm_squared()).abs() < 1e-15);
    }

    #[test]
    fn perfect_fit_has_unit_r_squared() {
        let x1 = DMatrix::from_column_slice(5, 1, &[1.0, -2.0, 3.0, 0.5, 4.0]);
        let y = DVector::from_vec(vec![2.0, -4.0, 6.0, 1.0, 8.0]);
        let fit = ols_fit_matrix(&intercept_design(&x1), &y).unwrap();
        assert!(fit.rss < 1e-20);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn intercept_only_gives_mean() {
        let y = DVector::from_vec(vec![1.0, 4.0, 2.0, 9.0]);
        let x = DMatrix::from_element(4, 1, 1.0);
        let fit = ols_fit_matrix(&x, &y).unwrap();
        assert!((fit.coefficients[0] - 4.0).abs() < 1e-12);
        assert!(fit.r_squared.abs() < 1e-12);
    }

    #[test]
    fn covariance_matches_explicit_inverse() {
        let (x, y) = toy_design();
        let fit = ols_fit_matrix(&x, &y).unwrap();
        let inv = (x.transpose() * &x).try_inverse().unwrap() * fit.sigma2;
        assert!((fit.coefficient_covariance - inv).amax() < 1e-10);
    }

    #[test]
    fn rank_deficiency_detected() {
        let x = DMatrix::from_row_slice(4, 3, &[
            1.0, 1.0, 2.0, //
            1.0, 2.0, 4.0, //
            1.0, 3.0, 6.0, //
            1.0, 5.0, 10.0,
        ]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        match ols_fit_matrix(&x, &y) {
            Err(Error::RankDeficient { rank, columns }) => {
                assert_eq!(rank, 2);
                assert_eq!(columns, 3);
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        // Projection still works on the rank-2 span.
        let qr = PivotedQr::new(&x);
        let r = qr.residuals(&y);
        assert!((x.transpose() * r).amax() < 1e-10);
    }

    #[test]
    fn shape_errors() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(ols_fit_matrix(&x, &y), Err(Error::DimensionMismatch(_))));
        let x = DMatrix::from_element(2, 2, 1.0);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            ols_fit_matrix(&x, &y),
            Err(Error::InsufficientObservations { .. })
        ));
    }
}

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const SYMMETRY_TOLERANCE: f64 = 1e-10;
const OFF_DIAGONAL_TOLERANCE: f64 = 1e-12;
const SINGULAR_TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors, one per column, in the order of `values`.
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.vectors * DMatrix::from_diagonal(&self.values) * self.vectors.transpose()
    }

    /// `A^{-1/2}`; fails when any eigenvalue is at most `1e-12 * max`.
    pub fn inverse_sqrt(&self) -> Result<DMatrix<f64>> {
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.min();
        if !(max > 0.0) || min <= SINGULAR_TOLERANCE * max {
            return Err(Error::SingularInverseSqrt { min, max });
        }
        let d = self.values.map(|v| 1.0 / v.sqrt());
        Ok(&self.vectors * DMatrix::from_diagonal(&d) * self.vectors.transpose())
    }
}

/// Cyclic Jacobi eigensolver.
///
/// The input is checked for symmetry to `1e-10` relative to its largest
/// entry and then symmetrized. Sweeps stop once the off-diagonal norm falls
/// below `1e-12` times the Frobenius norm.
pub fn sym_eigen(matrix: &DMatrix<f64>) -> Result<SymEigen> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "eigen-decomposition needs a square matrix, got {}x{}",
            n,
            matrix.ncols()
        )));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eigen input".into()));
    }
    let scale = matrix.amax();
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let mut a = (matrix + matrix.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);

    let frob = a.norm();
    let threshold = OFF_DIAGONAL_TOLERANCE * frob;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..i {
                off += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= threshold {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let vectors = v.select_columns(&order);
    Ok(SymEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_and_diagonal() {
        let e = sym_eigen(&DMatrix::from_element(1, 1, 3.5)).unwrap();
        assert_eq!(e.values[0], 3.5);
        let e = sym_eigen(&DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 2.0]))).unwrap();
        assert_eq!(e.values.as_slice(), &[2.0, 5.0]);
        assert_eq!(e.min(), 2.0);
    }

    #[test]
    fn cubic_root_oracle() {
        // Oracle: roots of the characteristic cubic via the trigonometric
        // formula for a real symmetric 3x3 matrix.
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, -2.0, 1.0, 2.0, 0.5, -2.0, 0.5, 3.0]);
        let tr = a.trace();
        let m = tr / 3.0;
        let shifted = &a - DMatrix::identity(3, 3) * m;
        let q: f64 = shifted.determinant() / 2.0;
        let p: f64 = shifted.norm_squared() / 6.0;
        let phi = (q / p.powf(1.5)).clamp(-1.0, 1.0).acos() / 3.0;
        let l1 = m + 2.0 * p.sqrt() * phi.cos();
        let l3 = m + 2.0 * p.sqrt() * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        let l2 = tr - l1 - l3;
        let mut roots = [l1, l2, l3];
        roots.sort_by(f64::total_cmp);
        let e = sym_eigen(&a).unwrap();
        for k in 0..3 {
            assert!((e.values[k] - roots[k]).abs() < 1e-9, "{} vs {}", e.values[k], roots[k]);
        }
        assert!((e.reconstruct() - &a).norm() <= 1e-9 * a.norm());
    }

    #[test]
    fn inverse_sqrt_whitens() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.2, 1.0, 3.0, 0.5, 0.2, 0.5, 2.0]);
        let r = sym_eigen(&a).unwrap().inverse_sqrt().unwrap();
        let i = &r * &a * &r;
        assert!((i - DMatrix::identity(3, 3)).amax() < 1e-8);
    }

    #[test]
    fn errors() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 1.0]);
        assert!(matches!(sym_eigen(&a), Err(Error::NotSymmetric(_))));
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            sym_eigen(&s).unwrap().inverse_sqrt(),
            Err(Error::SingularInverseSqrt { .. })
        ));
    }
}

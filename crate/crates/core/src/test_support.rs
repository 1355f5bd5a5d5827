//! Small synthetic IV systems for unit tests.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::engine::Dataset;
use crate::numerics::DesignMatrix;

fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
}

fn labelled(prefix: &str, m: DMatrix<f64>) -> DesignMatrix {
    let labels = (1..=m.ncols()).map(|k| format!("{prefix}{k}")).collect();
    DesignMatrix::new(m, labels).unwrap()
}

/// `W = Z a + X b + u`, `Y = W 1 + X c + e + 0.5 u`.
///
/// Every instrument loads on every endogenous column with coefficient 1
/// unless `instrument_strength` overrides it; `x_effect[k]` enters both stages.
pub fn iv_system(seed: u64, n: usize, p_w: usize, p_x: usize, p_z: usize, x_effect: &[f64]) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normal_matrix(&mut rng, n, p_x);
    let z = normal_matrix(&mut rng, n, p_z);
    let u = normal_matrix(&mut rng, n, p_w);
    let e: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let mut w = u.clone();
    for c in 0..p_w {
        for k in 0..p_z {
            let load = if (k + c) % 2 == 0 { 1.0 } else { 0.6 };
            w.column_mut(c).axpy(load, &z.column(k), 1.0);
        }
        for (k, &b) in x_effect.iter().enumerate().take(p_x) {
            w.column_mut(c).axpy(0.5 * b, &x.column(k), 1.0);
        }
    }
    let mut y = e;
    for c in 0..p_w {
        y += w.column(c);
        y.axpy(0.5, &u.column(c), 1.0);
    }
    for (k, &b) in x_effect.iter().enumerate().take(p_x) {
        y.axpy(b, &x.column(k), 1.0);
    }
    Dataset::new("y", y, labelled("w", w), labelled("x", x), labelled("z", z)).unwrap()
}

/// Textbook 2SLS through explicit normal equations; intercept first.
pub fn two_sls_oracle(data: &Dataset) -> DVector<f64> {
    let n = data.n();
    let ones = DMatrix::from_element(n, 1, 1.0);
    let v = stack(&[&ones, data.instruments.values(), data.covariates.values()]);
    let u = stack(&[&ones, data.endogenous.values(), data.covariates.values()]);
    let pv = &v * (v.transpose() * &v).try_inverse().unwrap() * v.transpose();
    let u_hat = &pv * &u;
    (u_hat.transpose() * &u_hat).try_inverse().unwrap() * u_hat.transpose() * &data.outcome
}

pub fn stack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks[0].nrows();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, cols);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    out
}

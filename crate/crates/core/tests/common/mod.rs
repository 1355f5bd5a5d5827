#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tsbma::engine::Dataset;
use tsbma::numerics::DesignMatrix;

pub fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
}

fn labelled(prefix: &str, m: DMatrix<f64>) -> DesignMatrix {
    let labels = (1..=m.ncols()).map(|k| format!("{prefix}{k}")).collect();
    DesignMatrix::new(m, labels).unwrap()
}

/// Endogenous columns load on every instrument and on the first covariate;
/// the structural error shares a component with them.
pub fn iv_data(seed: u64, n: usize, p_w: usize, p_x: usize, p_z: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normal_matrix(&mut rng, n, p_x);
    let z = normal_matrix(&mut rng, n, p_z);
    let u = normal_matrix(&mut rng, n, p_w);
    let e = normal_matrix(&mut rng, n, 1);
    let mut w = u.clone();
    for c in 0..p_w {
        for k in 0..p_z {
            w.column_mut(c).axpy(if (k + c) % 2 == 0 { 0.9 } else { 0.5 }, &z.column(k), 1.0);
        }
        if p_x > 0 {
            w.column_mut(c).axpy(0.4, &x.column(0), 1.0);
        }
    }
    let mut y: DVector<f64> = e.column(0).into_owned();
    for c in 0..p_w {
        y.axpy(1.0, &w.column(c), 1.0);
        y.axpy(0.5, &u.column(c), 1.0);
    }
    if p_x > 0 {
        y.axpy(0.7, &x.column(0), 1.0);
    }
    Dataset::new("y", y, labelled("w", w), labelled("x", x), labelled("z", z)).unwrap()
}

pub fn stack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks[0].nrows();
    let p: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, p);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    out
}

/// Textbook two-stage least squares through explicit normal equations.
/// Returns `(intercept, W..., X...)`.
pub fn two_sls_oracle(data: &Dataset) -> DVector<f64> {
    let ones = DMatrix::from_element(data.n(), 1, 1.0);
    let v = stack(&[&ones, data.instruments.values(), data.covariates.values()]);
    let pv = &v * (v.transpose() * &v).try_inverse().unwrap() * v.transpose();
    let u = stack(&[&ones, &(&pv * data.endogenous.values()), data.covariates.values()]);
    (u.transpose() * &u).try_inverse().unwrap() * u.transpose() * &data.outcome
}

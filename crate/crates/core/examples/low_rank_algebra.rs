//! Woodbury inverse and log-determinant of `LLᵀ + Δ` against dense
//! factorizations.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sufa::model::{logdet_lowrank, woodbury_inverse, LowRankDiag};

fn main() -> sufa::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (d, k) = (200, 8);
    let l = DMatrix::from_fn(d, k, |_, _| StandardNormal.sample(&mut rng));
    let log_delta = DVector::from_fn(d, |i, _| -1.0 + 0.01 * i as f64);

    let dense: DMatrix<f64> = &l * l.transpose() + DMatrix::from_diagonal(&log_delta.map(f64::exp));
    let chol = dense.clone().cholesky().expect("positive definite");
    let dense_logdet = 2.0 * chol.l().diagonal().map(f64::ln).sum();

    let inv = woodbury_inverse(&l, &log_delta)?;
    let logdet = logdet_lowrank(&l, &log_delta)?;
    let resid = (&inv * &dense - DMatrix::identity(d, d)).norm();
    println!("‖Σ⁻¹Σ − I‖ = {resid:.2e}");
    println!("log det: low-rank {logdet:.10} dense {dense_logdet:.10}");

    let f = LowRankDiag::factor(&l, &log_delta)?;
    let b = DMatrix::from_fn(d, 3, |_, _| StandardNormal.sample(&mut rng));
    let x = f.solve(&b);
    println!("solve residual {:.2e}", (&dense * x - b).norm());
    Ok(())
}

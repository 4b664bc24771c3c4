//! Dirichlet–Laplace shrinkage: prior draws and repeated Gibbs sweeps given a
//! sparse loading matrix.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sufa::priors::{gibbs_sweep, initial_dl_state, DLState, DlGibbsOptions, TauOrder};

fn main() -> sufa::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (d, q, a) = (30, 4, 0.5);

    let prior = DLState::sample_prior(d, q, a, &mut rng)?;
    let lambda = prior.sample_loadings(&mut rng);
    let tiny = lambda.iter().filter(|v| v.abs() < 1e-3).count();
    println!("prior draw: tau = {:.3}, {tiny}/{} loadings below 1e-3", prior.tau, d * q);

    // Half the rows carry signal, half are exactly zero.
    let sparse = DMatrix::from_fn(d, q, |i, j| if i < d / 2 && (i + j) % 3 == 0 { 1.5 } else { 0.0 });
    let mut state = initial_dl_state(&sparse, a, TauOrder::Standard, &mut rng)?;
    let mut on = 0.0;
    let mut off = 0.0;
    let sweeps = 500;
    for _ in 0..sweeps {
        state = gibbs_sweep(&sparse, &state, DlGibbsOptions::default(), &mut rng)?;
        let v = state.loading_variances();
        on += (v[(0, 0)]).sqrt() / sweeps as f64;
        off += (v[(d - 1, 0)]).sqrt() / sweeps as f64;
    }
    println!("mean prior sd: signal entry {on:.3}, zero entry {off:.2e}");
    Ok(())
}

//! Per-study gradient terms evaluated on a thread pool reduce to exactly the
//! same bits as the sequential path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use sufa::datagen::{simulate, Scenario, SimSpec, StudyMode};
use sufa::likelihood::{parallel_grad_reduce, Executor};
use sufa::model::sufficient_stats;
use sufa::priors::{default_hyperparameters, initial_dl_state, sample_params_from_prior, TauOrder};

fn main() -> sufa::Result<()> {
    let mut spec = SimSpec::new(Scenario::FM2, StudyMode::slight(), 60, 8, 8, 4);
    spec.n_multiplier = 5;
    let sim = simulate(&spec)?;
    let studies = sim.data.iter().map(sufficient_stats).collect::<sufa::Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let hyper = default_hyperparameters();
    let dl0 = initial_dl_state(&sim.truth.lambda.map(|v| v + 0.1), 0.5, TauOrder::Standard, &mut rng)?;
    let params = sample_params_from_prior(&dl0, &[1; 8], &hyper, &mut rng)?;

    let mut reference = None;
    for workers in [1, 2, 4] {
        let exec = Executor::with_workers(workers)?;
        let t = Instant::now();
        let (ll, g) = parallel_grad_reduce(&params, &dl0, &hyper, &studies, &exec)?;
        let secs = t.elapsed().as_secs_f64();
        let flat = g.to_flat();
        let same = match &reference {
            None => {
                reference = Some((ll, flat));
                true
            }
            Some((ll0, f0)) => ll.to_bits() == ll0.to_bits() && flat.iter().zip(f0.iter()).all(|(a, b)| a.to_bits() == b.to_bits()),
        };
        println!("{workers} worker(s): loglik {ll:.6}, {:.2} ms, bit-identical {same}", 1e3 * secs);
    }
    Ok(())
}

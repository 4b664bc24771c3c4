//! Simulate a multi-study dataset, fit the model, and compare the recovered
//! shared loadings with the truth.
//!
//! cargo run --release --example simulate_and_fit

use sufa::datagen::{simulate, Scenario, SimSpec, StudyMode};
use sufa::hmc::{run_chain, ChainConfig};
use sufa::likelihood::Executor;
use sufa::model::{sufficient_stats, ModelDims};
use sufa::postprocess::{alignment_r2, summarize};

fn main() -> sufa::Result<()> {
    let spec = SimSpec::new(Scenario::FM1, StudyMode::slight(), 20, 3, 2, 42);
    let sim = simulate(&spec)?;
    let studies = sim.data.iter().map(sufficient_stats).collect::<sufa::Result<Vec<_>>>()?;
    let n_s: Vec<usize> = studies.iter().map(|s| s.n).collect();
    println!("n_s = {n_s:?}, true q_s = {:?}", sim.truth.q_s);

    let dims = ModelDims::new(spec.d, spec.q, vec![1, 1], n_s)?;
    let chain = ChainConfig { iterations: 2000, burn_in: 1000, thin: 5, seed: 7, ..Default::default() };
    let out = run_chain(&studies, &dims, &Default::default(), &chain, &Executor::Sequential)?;
    println!("{} draws, acceptance {:.2}, {:.1}s", out.draws.len(), out.acceptance_rate(), out.elapsed_secs);

    let summary = summarize(&out, 0.95)?;
    println!("alignment R2 vs truth: {:.3}", alignment_r2(&sim.truth.lambda, &summary.lambda_mean)?);
    let zeros = summary.lambda_sparse.iter().filter(|v| **v == 0.0).count();
    println!("{zeros} of {} shared loadings set to zero", summary.lambda_sparse.len());
    Ok(())
}

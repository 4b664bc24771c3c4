//! Choosing the number of shared factors with WBIC: fit at the tempered
//! posterior for two candidate ranks and keep the smaller criterion.

use sufa::datagen::{simulate, Scenario, SimSpec, StudyMode};
use sufa::hmc::{run_chain, ChainConfig, Temperature};
use sufa::likelihood::Executor;
use sufa::model::{sufficient_stats, ModelDims};
use sufa::postprocess::wbic;

fn main() -> sufa::Result<()> {
    let mut spec = SimSpec::new(Scenario::FM1, StudyMode::slight(), 20, 3, 2, 8);
    spec.n_multiplier = 10;
    let sim = simulate(&spec)?;
    let studies = sim.data.iter().map(sufficient_stats).collect::<sufa::Result<Vec<_>>>()?;
    let n_s: Vec<usize> = studies.iter().map(|s| s.n).collect();

    for q in [1, 3, 6] {
        let dims = ModelDims::new(spec.d, q, vec![0, 0], n_s.clone())?;
        let chain = ChainConfig {
            iterations: 1500,
            burn_in: 500,
            thin: 5,
            seed: 1,
            temperature: Temperature::WbicPooled,
            ..Default::default()
        };
        let out = run_chain(&studies, &dims, &Default::default(), &chain, &Executor::Sequential)?;
        println!("q = {q}: WBIC = {:.1} (acceptance {:.2})", wbic(&out, &studies)?, out.acceptance_rate());
    }
    println!("true q = {}", spec.q);
    Ok(())
}

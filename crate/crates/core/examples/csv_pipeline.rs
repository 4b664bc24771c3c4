//! File-based workflow: simulate to CSV, fit from a run config, and reload
//! the persisted draws.

use sufa::datagen::{Scenario, SimSpec, StudyMode};
use sufa::hmc::ChainConfig;
use sufa::io::{read_draws, CsvSchema, Centering, RunConfig};
use sufa::likelihood::Executor;
use sufa::pipeline::{fit_to_dir, simulate_to_dir};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join(format!("sufa-csv-{}", std::process::id()));
    let sim_dir = root.join("sim");
    simulate_to_dir(&SimSpec::new(Scenario::FM3, StudyMode::complete(), 25, 3, 3, 2), &sim_dir)?;

    let cfg = RunConfig {
        studies: (1..=3).map(|s| sim_dir.join(format!("study{s}.csv"))).collect(),
        schema: CsvSchema::default(),
        centering: Centering::PerStudy,
        dims: None,
        rank_threshold: 0.9,
        hyper: Default::default(),
        chain: ChainConfig { iterations: 1000, burn_in: 500, thin: 5, ..Default::default() },
        credible_level: 0.95,
        output: root.join("fit"),
        seed: 17,
    };
    let outcome = fit_to_dir(&cfg, &Executor::Sequential)?;
    println!("selected dims: q = {}, q_s = {:?}", outcome.dims.q, outcome.dims.q_s);

    let (index, draws) = read_draws(&cfg.output)?;
    println!("reloaded {} draws of {} features", draws.len(), index.feature_names.len());
    let mut files: Vec<_> = std::fs::read_dir(&cfg.output)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    files.sort();
    println!("outputs: {}", files.join(", "));
    std::fs::remove_dir_all(&root)?;
    Ok(())
}

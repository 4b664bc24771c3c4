use std::fs;
use std::path::Path;

use sufa::datagen::{Scenario, SimSpec, StudyMode};
use sufa::hmc::ChainConfig;
use sufa::io::{read_draws, read_stats, sha256_file, CsvSchema, Centering, DimsOverride, RunConfig};
use sufa::likelihood::{evaluate, Executor};
use sufa::pipeline::{fit_to_dir, simulate_to_dir};

fn config(sim: &Path, out: &Path, seed: u64) -> RunConfig {
    RunConfig {
        studies: vec![sim.join("study1.csv"), sim.join("study2.csv")],
        schema: CsvSchema::default(),
        centering: Centering::PerStudy,
        dims: Some(DimsOverride { q: 3, q_s: vec![1, 1] }),
        rank_threshold: 0.95,
        hyper: Default::default(),
        chain: ChainConfig {
            iterations: 300,
            burn_in: 100,
            thin: 4,
            ..Default::default()
        },
        credible_level: 0.9,
        output: out.to_path_buf(),
        seed,
    }
}

fn hashes(dir: &Path) -> Vec<(String, String)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file() && p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), sha256_file(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn persisted_draws_reproduce_log_posteriors() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SimSpec::new(Scenario::FM1, StudyMode::slight(), 20, 3, 2, 11);
    simulate_to_dir(&spec, &tmp.path().join("sim")).unwrap();
    let cfg = config(&tmp.path().join("sim"), &tmp.path().join("fit"), 5);
    let outcome = fit_to_dir(&cfg, &Executor::Sequential).unwrap();
    let (index, draws) = read_draws(&cfg.output).unwrap();
    assert_eq!(index.num_draws, 50);
    assert_eq!(draws, outcome.output.draws);
    let studies = read_stats(&cfg.output.join("stats.json")).unwrap();
    for d in &draws {
        let ev = evaluate(&d.params, &d.dl, &index.hyper, &studies, &index.betas, &Executor::Sequential).unwrap();
        assert!((ev.tempered_loglik + ev.log_prior - d.log_posterior).abs() <= 1e-10 * d.log_posterior.abs().max(1.0));
        assert!((ev.loglik - d.loglik).abs() <= 1e-10 * d.loglik.abs().max(1.0));
    }
    for name in ["manifest.json", "lambda_mean.csv", "shared_correlation.csv", "draws.json", "config.json"] {
        assert!(cfg.output.join(name).exists(), "{name}");
    }
    assert!(!cfg.output.join(".sufa.lock").exists());
}

#[test]
fn reruns_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SimSpec::new(Scenario::FM3, StudyMode::complete(), 20, 3, 2, 4);
    simulate_to_dir(&spec, &tmp.path().join("a")).unwrap();
    simulate_to_dir(&spec, &tmp.path().join("b")).unwrap();
    assert_eq!(hashes(&tmp.path().join("a")), hashes(&tmp.path().join("b")));

    let sim = tmp.path().join("a");
    fit_to_dir(&config(&sim, &tmp.path().join("f1"), 9), &Executor::Sequential).unwrap();
    fit_to_dir(&config(&sim, &tmp.path().join("f2"), 9), &Executor::with_workers(2).unwrap()).unwrap();
    let strip = |v: Vec<(String, String)>| v.into_iter().filter(|(n, _)| n != "config.json").collect::<Vec<_>>();
    assert_eq!(strip(hashes(&tmp.path().join("f1"))), strip(hashes(&tmp.path().join("f2"))));
}

#[test]
fn busy_output_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let _held = sufa::io::OutputLock::acquire(tmp.path()).unwrap();
    let spec = SimSpec::new(Scenario::FM1, StudyMode::slight(), 20, 3, 2, 1);
    let e = simulate_to_dir(&spec, tmp.path()).unwrap_err();
    assert_eq!(e.exit_code(), 1);
}

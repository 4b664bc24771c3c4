//! End-to-end runs shared by the command-line tool and the examples.

use std::path::Path;
use std::time::Instant;

use log::info;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::datagen::{simulate, SimSpec, SimulatedData, Scenario, StudyMode};
use crate::error::{Result, SufaError};
use crate::hmc::{run_chain, ChainConfig, McmcOutput};
use crate::identifiability::{select_num_factors, RankSelection};
use crate::io::{
    center, load_studies, numbered, write_draws, write_json, write_matrix_csv, write_stats,
    write_summary, DrawsMeta, Manifest, OutputLock, RunConfig,
};
use crate::likelihood::Executor;
use crate::model::{sufficient_stats, ModelDims, StudySummary};
use crate::postprocess::{summarize, PosteriorSummary, MIN_CI_DRAWS};

/// Centered study matrices ready for fitting.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub names: Vec<String>,
    pub data: Vec<DMatrix<f64>>,
    pub studies: Vec<StudySummary>,
}

/// Loads, aligns and centers the studies named in `cfg`.
pub fn prepare(cfg: &RunConfig) -> Result<PreparedData> {
    let loaded = load_studies(&cfg.studies, &cfg.schema)?;
    let data = loaded
        .data
        .iter()
        .zip(&loaded.groups)
        .map(|(y, g)| center(y, cfg.centering, g.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    let studies = data.iter().map(sufficient_stats).collect::<Result<Vec<_>>>()?;
    Ok(PreparedData {
        names: loaded.names,
        data,
        studies,
    })
}

/// Rows of every study stacked into one matrix.
pub fn stack_rows(data: &[DMatrix<f64>]) -> DMatrix<f64> {
    let d = data.first().map(|m| m.ncols()).unwrap_or(0);
    let n: usize = data.iter().map(|m| m.nrows()).sum();
    let mut out = DMatrix::zeros(n, d);
    let mut at = 0;
    for m in data {
        out.rows_mut(at, m.nrows()).copy_from(m);
        at += m.nrows();
    }
    out
}

/// Rank selection on the stacked studies.
pub fn select_rank(data: &[DMatrix<f64>], threshold: f64) -> Result<RankSelection> {
    select_num_factors(&stack_rows(data), threshold, data.len())
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub dims: ModelDims,
    pub selection: Option<RankSelection>,
    pub output: McmcOutput,
    pub prepared: PreparedData,
    pub summary: Option<PosteriorSummary>,
}

/// Runs the fitting pipeline in memory.
pub fn fit(cfg: &RunConfig, exec: &Executor) -> Result<FitOutcome> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    let d = prepared.names.len();
    let n_s: Vec<usize> = prepared.studies.iter().map(|s| s.n).collect();
    let (dims, selection) = match &cfg.dims {
        Some(o) => (ModelDims::new(d, o.q, o.q_s.clone(), n_s)?, None),
        None => {
            let sel = select_rank(&prepared.data, cfg.rank_threshold)?;
            info!("selected q = {} and q_s = {:?}", sel.q, sel.q_s);
            (ModelDims::new(d, sel.q, sel.q_s.clone(), n_s)?, Some(sel))
        }
    };
    let mut chain = cfg.chain.clone();
    chain.seed = cfg.seed;
    let output = run_chain(&prepared.studies, &dims, &cfg.hyper, &chain, exec)?;
    let summary = if output.draws.len() >= MIN_CI_DRAWS {
        Some(summarize(&output, cfg.credible_level)?)
    } else {
        None
    };
    Ok(FitOutcome {
        dims,
        selection,
        output,
        prepared,
        summary,
    })
}

/// Runs [`fit`] and persists draws, statistics, summaries and a manifest.
pub fn fit_to_dir(cfg: &RunConfig, exec: &Executor) -> Result<FitOutcome> {
    cfg.validate()?;
    let _lock = OutputLock::acquire(&cfg.output)?;
    let started = Instant::now();
    let outcome = fit(cfg, exec)?;
    let dir = &cfg.output;
    let mut chain = cfg.chain.clone();
    chain.seed = cfg.seed;
    write_draws(
        dir,
        &outcome.output.draws,
        &DrawsMeta {
            betas: &outcome.output.betas,
            hyper: &cfg.hyper,
            feature_names: &outcome.prepared.names,
            chain: &chain,
            acceptance_rate: outcome.output.acceptance_rate(),
        },
    )?;
    write_stats(&dir.join("stats.json"), &outcome.prepared.studies)?;
    write_json(&dir.join("config.json"), cfg)?;
    write_json(&dir.join("dims.json"), &outcome.dims)?;
    if let Some(s) = &outcome.summary {
        write_summary(dir, s, &outcome.prepared.names)?;
    }
    let mut manifest = Manifest::new("fit", cfg.seed, json(cfg)?, exec.workers());
    for p in &cfg.studies {
        manifest.add_input(p)?;
    }
    manifest.add_outputs(dir)?;
    manifest.timings.insert("chain_secs".into(), outcome.output.elapsed_secs);
    manifest.timings.insert("total_secs".into(), started.elapsed().as_secs_f64());
    manifest.write(dir)?;
    Ok(outcome)
}

pub(crate) fn json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| SufaError::Config(e.to_string()))
}

/// Simulates a dataset and writes study CSVs plus the ground truth into `dir`.
pub fn simulate_to_dir(spec: &SimSpec, dir: &Path) -> Result<SimulatedData> {
    let _lock = OutputLock::acquire(dir)?;
    let started = Instant::now();
    let sim = simulate(spec)?;
    let d = spec.d;
    let names = numbered("x", d);
    for (s, y) in sim.data.iter().enumerate() {
        write_matrix_csv(&dir.join(format!("study{}.csv", s + 1)), &names, y)?;
    }
    let t = &sim.truth;
    write_matrix_csv(&dir.join("truth_lambda.csv"), &numbered("factor", spec.q), &t.lambda)?;
    for (s, p) in t.phi.iter().enumerate() {
        write_matrix_csv(&dir.join(format!("truth_phi{}.csv", s + 1)), &numbered("factor", p.ncols()), p)?;
    }
    write_matrix_csv(&dir.join("truth_shared_covariance.csv"), &names, &t.shared_covariance())?;
    write_json(
        &dir.join("truth.json"),
        &serde_json::json!({
            "spec": spec,
            "delta": t.delta,
            "n_s": t.n_s,
            "q_s": t.q_s,
        }),
    )?;
    let mut manifest = Manifest::new("simulate", spec.seed, json(spec)?, 1);
    manifest.add_outputs(dir)?;
    manifest.timings.insert("total_secs".into(), started.elapsed().as_secs_f64());
    manifest.write(dir)?;
    Ok(sim)
}

/// One row of the scaling table.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub multiplier: usize,
    pub pooled_n: usize,
    pub iterations: usize,
    /// Median over repeats of wall time per iteration.
    pub secs_per_iteration: f64,
    /// Median over repeats of wall time per integrated leapfrog step.
    pub secs_per_leapfrog_step: f64,
    pub stats_secs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchSettings {
    pub d: usize,
    pub q: usize,
    pub studies: usize,
    pub multipliers: Vec<usize>,
    pub iterations: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            d: 50,
            q: 10,
            studies: 5,
            multipliers: vec![1, 10, 25],
            iterations: 500,
            repeats: 5,
            seed: 1,
        }
    }
}

/// Per-iteration sampler time for growing sample sizes with the sums of
/// squares precomputed.
pub fn benchmark(settings: &BenchSettings, exec: &Executor) -> Result<Vec<BenchRow>> {
    if settings.iterations < 2 || settings.repeats == 0 || settings.multipliers.is_empty() {
        return Err(SufaError::Config("benchmark needs iterations >= 2, repeats >= 1 and a multiplier".into()));
    }
    let per = (settings.q / settings.studies).max(1);
    let q_s = if per * settings.studies <= settings.q {
        vec![per; settings.studies]
    } else {
        vec![0; settings.studies]
    };
    let chain = ChainConfig {
        iterations: settings.iterations,
        burn_in: settings.iterations - 1,
        thin: 1,
        seed: settings.seed,
        ..ChainConfig::default()
    };
    let mut cases = Vec::new();
    for &m in &settings.multipliers {
        let mut spec = SimSpec::new(Scenario::FM1, StudyMode::complete(), settings.d, settings.q, settings.studies, settings.seed);
        spec.n_multiplier = m;
        let sim = simulate(&spec)?;
        let t0 = Instant::now();
        let studies = sim.data.iter().map(sufficient_stats).collect::<Result<Vec<_>>>()?;
        let stats_secs = t0.elapsed().as_secs_f64();
        let n_s: Vec<usize> = studies.iter().map(|s| s.n).collect();
        let dims = ModelDims::new(settings.d, settings.q, q_s.clone(), n_s)?;
        cases.push((m, studies, dims, stats_secs));
    }
    // Warm caches once, then interleave repeats so load drift hits every size alike.
    let (_, studies, dims, _) = &cases[0];
    run_chain(studies, dims, &Default::default(), &chain, exec)?;
    let mut runs: Vec<Vec<McmcOutput>> = vec![Vec::new(); cases.len()];
    for _ in 0..settings.repeats {
        for (i, (_, studies, dims, _)) in cases.iter().enumerate() {
            runs[i].push(run_chain(studies, dims, &Default::default(), &chain, exec)?);
        }
    }
    let mut rows = Vec::new();
    for ((m, _, dims, stats_secs), runs) in cases.iter().zip(&runs) {
        let median = |f: &dyn Fn(&McmcOutput) -> f64| {
            let mut v: Vec<f64> = runs.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        rows.push(BenchRow {
            multiplier: *m,
            pooled_n: dims.pooled_n(),
            iterations: settings.iterations,
            secs_per_iteration: median(&|o| o.elapsed_secs / settings.iterations as f64),
            secs_per_leapfrog_step: median(&|o| o.elapsed_secs / o.leapfrog_steps.max(1) as f64),
            stats_secs: *stats_secs,
        });
    }
    Ok(rows)
}

/// `(max − min) / min` of the given timings.
pub fn relative_spread(t: &[f64]) -> f64 {
    let lo = t.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t.iter().copied().fold(0.0, f64::max);
    (hi - lo) / lo
}

//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use crate::datagen::{Scenario, SimSpec, StudyMode, DEFAULT_DELTA};
use crate::error::{Result, SufaError};
use crate::hmc::{ChainConfig, McmcOutput, Temperature};
use crate::identifiability::{check_dimension_condition, detect_information_switching, DIAGNOSTIC_TOL};
use crate::io::{
    read_draws, read_matrix_csv, read_stats, write_json, write_summary, Centering, CsvSchema,
    DimsOverride, Manifest, OutputLock, RunConfig,
};
use crate::likelihood::Executor;
use crate::pipeline::{
    benchmark, fit_to_dir, json, prepare, relative_spread, select_rank, simulate_to_dir, BenchSettings,
};
use crate::postprocess::{align_draws, alignment_r2, apply_alignment, frobenius_error, summarize_params, wbic};

#[derive(Debug, Parser)]
#[command(name = "sufa", version, about = "Subspace factor analysis for multi-study data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load, center, optionally select ranks, run the sampler and persist draws.
    Fit(FitArgs),
    /// Generate a synthetic multi-study dataset with known truth.
    Simulate(SimulateArgs),
    /// Align stored draws and write posterior summaries.
    Postprocess(PostprocessArgs),
    /// WBIC of a run sampled at the WBIC temperature.
    Wbic(RunArgs),
    /// Check the dimension condition and, for a run, information switching.
    CheckIdentifiability(IdentArgs),
    /// Choose q and q_s from the pooled data.
    SelectRank(SelectArgs),
    /// Per-iteration time for growing sample sizes.
    Benchmark(BenchArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Study CSV files (header row of feature names).
    #[arg(long = "data", num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value = "per-study")]
    pub centering: Centering,
    /// Column holding group labels for per-group centering.
    #[arg(long)]
    pub group_column: Option<String>,
    /// Non-feature columns to skip.
    #[arg(long, value_delimiter = ',')]
    pub ignore: Vec<String>,
}

impl DataArgs {
    fn schema(&self) -> CsvSchema {
        CsvSchema {
            group_column: self.group_column.clone(),
            ignore_columns: self.ignore.clone(),
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// JSON run configuration; other data and chain flags are then ignored.
    #[arg(long, conflicts_with = "data")]
    pub config: Option<PathBuf>,
    #[arg(long = "data", num_args = 1..)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value = "per-study")]
    pub centering: Centering,
    #[arg(long)]
    pub group_column: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub ignore: Vec<String>,
    /// Shared factors; omit to select from the data.
    #[arg(long, requires = "q_s")]
    pub q: Option<usize>,
    /// Study-specific factors, comma separated.
    #[arg(long, value_delimiter = ',', requires = "q")]
    pub q_s: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.95)]
    pub threshold: f64,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Upper end of the uniform leapfrog step size.
    #[arg(long)]
    pub max_step: Option<f64>,
    /// Sample at `1/log n` for a later `wbic`.
    #[arg(long)]
    pub wbic_temperature: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "FM1")]
    pub scenario: Scenario,
    /// slight, complete or complete-unscaled.
    #[arg(long, default_value = "slight")]
    pub mode: StudyMode,
    #[arg(long, default_value_t = 50)]
    pub d: usize,
    #[arg(long, default_value_t = 10)]
    pub q: usize,
    #[arg(long, default_value_t = 5)]
    pub studies: usize,
    #[arg(long, default_value_t = 1)]
    pub n_multiplier: usize,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Output directory of a `fit` run.
    #[arg(long)]
    pub run: PathBuf,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Directory written by `simulate`, for scoring against the truth.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Where to write summaries; defaults to `<run>/summary`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IdentArgs {
    #[arg(long, requires = "q_s")]
    pub q: Option<usize>,
    #[arg(long, value_delimiter = ',', requires = "q")]
    pub q_s: Option<Vec<usize>>,
    /// Check posterior-mean study loadings of a `fit` run.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long, default_value_t = DIAGNOSTIC_TOL)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0.95)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 50)]
    pub d: usize,
    #[arg(long, default_value_t = 10)]
    pub q: usize,
    #[arg(long, default_value_t = 5)]
    pub studies: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,10,25")]
    pub multipliers: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    pub iterations: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Directory for the timing table and manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_exit() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let exec = Executor::from_env()?;
    match cli.command {
        Command::Fit(a) => cmd_fit(a, &exec),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Postprocess(a) => cmd_postprocess(a),
        Command::Wbic(a) => cmd_wbic(a),
        Command::CheckIdentifiability(a) => cmd_ident(a),
        Command::SelectRank(a) => cmd_select(a),
        Command::Benchmark(a) => cmd_benchmark(a, &exec),
    }
}

fn fit_config(a: FitArgs) -> Result<RunConfig> {
    if let Some(path) = &a.config {
        let mut cfg = RunConfig::from_json_file(path)?;
        if let Some(out) = a.out {
            cfg.output = out;
        }
        if let Some(seed) = a.seed {
            cfg.seed = seed;
        }
        return Ok(cfg);
    }
    if a.data.is_empty() {
        return Err(SufaError::Config("give --config or at least one --data file".into()));
    }
    let seed = a
        .seed
        .ok_or_else(|| SufaError::Config("--seed is required; runs never draw entropy".into()))?;
    let output = a.out.ok_or_else(|| SufaError::Config("--out is required".into()))?;
    let mut chain = ChainConfig::default();
    if let Some(v) = a.iterations {
        chain.iterations = v;
    }
    if let Some(v) = a.burn_in {
        chain.burn_in = v;
    }
    if let Some(v) = a.thin {
        chain.thin = v;
    }
    if let Some(v) = a.max_step {
        chain.tuning.max_step = v;
    }
    if a.wbic_temperature {
        chain.temperature = Temperature::WbicPooled;
    }
    Ok(RunConfig {
        studies: a.data,
        schema: CsvSchema {
            group_column: a.group_column,
            ignore_columns: a.ignore,
        },
        centering: a.centering,
        dims: a.q.zip(a.q_s).map(|(q, q_s)| DimsOverride { q, q_s }),
        rank_threshold: a.threshold,
        hyper: Default::default(),
        chain,
        credible_level: 0.95,
        output,
        seed,
    })
}

fn cmd_fit(a: FitArgs, exec: &Executor) -> Result<()> {
    let cfg = fit_config(a)?;
    cfg.validate()?;
    let out = fit_to_dir(&cfg, exec)?;
    println!(
        "d = {}, q = {}, q_s = {:?}, n_s = {:?}",
        out.dims.d, out.dims.q, out.dims.q_s, out.dims.n_s
    );
    println!(
        "{} draws, acceptance {:.3}, {:.2}s",
        out.output.draws.len(),
        out.output.acceptance_rate(),
        out.output.elapsed_secs
    );
    println!("wrote {}", cfg.output.display());
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let spec = SimSpec {
        scenario: a.scenario,
        mode: a.mode,
        d: a.d,
        q: a.q,
        studies: a.studies,
        n_multiplier: a.n_multiplier,
        delta: a.delta,
        seed: a.seed,
    };
    let sim = simulate_to_dir(&spec, &a.out)?;
    println!("n_s = {:?}, q_s = {:?}", sim.truth.n_s, sim.truth.q_s);
    println!("wrote {}", a.out.display());
    Ok(())
}

fn load_run(dir: &Path) -> Result<(McmcOutput, Vec<crate::model::StudySummary>, Vec<String>)> {
    let (index, draws) = read_draws(dir)?;
    let studies = read_stats(&dir.join("stats.json"))?;
    let output = McmcOutput {
        draws,
        accepted: Vec::new(),
        tuning_draws: Vec::new(),
        leapfrog_steps: 0,
        betas: index.betas,
        config: index.chain,
        elapsed_secs: 0.0,
    };
    Ok((output, studies, index.feature_names))
}

fn cmd_postprocess(a: PostprocessArgs) -> Result<()> {
    let (output, _, names) = load_run(&a.run)?;
    let params: Vec<_> = output.draws.iter().map(|d| d.params.clone()).collect();
    let summary = summarize_params(&params, a.level)?;
    let out = a.out.unwrap_or_else(|| a.run.join("summary"));
    let _lock = OutputLock::acquire(&out)?;
    write_summary(&out, &summary, &names)?;
    println!("{} draws summarized, pivot draw {}", params.len(), summary.pivot_index);
    if let Some(truth) = &a.truth {
        let (_, lambda) = read_matrix_csv(&truth.join("truth_lambda.csv"))?;
        let (_, sigma) = read_matrix_csv(&truth.join("truth_shared_covariance.csv"))?;
        let r2 = alignment_r2(&lambda, &summary.lambda_mean)?;
        let err = frobenius_error(&sigma, &summary.shared_covariance)? / sigma.norm();
        println!("alignment R2 of shared loadings: {r2:.4}");
        println!("relative Frobenius error of shared covariance: {err:.4}");
        write_json(
            &out.join("scores.json"),
            &serde_json::json!({ "alignment_r2": r2, "relative_frobenius": err }),
        )?;
    }
    let mut manifest = Manifest::new("postprocess", output.config.seed, serde_json::json!({ "level": a.level }), 1);
    manifest.add_input(&a.run.join("draws.bin"))?;
    manifest.add_outputs(&out)?;
    manifest.write(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_wbic(a: RunArgs) -> Result<()> {
    let (output, studies, _) = load_run(&a.run)?;
    let value = wbic(&output, &studies)?;
    println!("WBIC = {value:.6} ({} draws)", output.draws.len());
    Ok(())
}

fn cmd_ident(a: IdentArgs) -> Result<()> {
    if a.q.is_none() && a.run.is_none() {
        return Err(SufaError::Config("give --q with --q-s, or --run".into()));
    }
    let mut ok = true;
    if let (Some(q), Some(q_s)) = (a.q, &a.q_s) {
        let holds = check_dimension_condition(q, q_s);
        ok &= holds;
        println!(
            "dimension condition sum(q_s) = {} <= q = {q}: {}",
            q_s.iter().sum::<usize>(),
            if holds { "holds" } else { "violated" }
        );
    }
    if let Some(run) = &a.run {
        let (output, _, _) = load_run(run)?;
        let params: Vec<_> = output.draws.iter().map(|d| d.params.clone()).collect();
        let lambdas: Vec<DMatrix<f64>> = params.iter().map(|p| p.lambda.clone()).collect();
        let aligned = apply_alignment(&params, &align_draws(&lambdas)?)?;
        let s = aligned[0].a.len();
        let means: Vec<DMatrix<f64>> = (0..s)
            .map(|k| {
                let mut acc = aligned[0].a[k].clone();
                for p in &aligned[1..] {
                    acc += &p.a[k];
                }
                acc / aligned.len() as f64
            })
            .collect();
        let report = detect_information_switching(&means, a.tol)?;
        ok &= !report.switching;
        println!(
            "information switching: {} (intersection dim {}, ranks {:?} of {:?})",
            report.switching, report.intersection_dim, report.ranks, report.declared
        );
    }
    println!("{}", if ok { "identifiable" } else { "not identifiable" });
    Ok(())
}

fn cmd_select(a: SelectArgs) -> Result<()> {
    let cfg = RunConfig {
        studies: a.data.data.clone(),
        schema: a.data.schema(),
        centering: a.data.centering,
        dims: None,
        rank_threshold: a.threshold,
        hyper: Default::default(),
        chain: ChainConfig::default(),
        credible_level: 0.95,
        output: PathBuf::new(),
        seed: 0,
    };
    cfg.validate()?;
    let prepared = prepare(&cfg)?;
    let sel = select_rank(&prepared.data, a.threshold)?;
    println!("q = {}", sel.q);
    println!("q_s = {:?}", sel.q_s);
    println!("cap = {}, explained at q: {:.4}", sel.cap, sel.explained[sel.q - 1]);
    Ok(())
}

fn cmd_benchmark(a: BenchArgs, exec: &Executor) -> Result<()> {
    let settings = BenchSettings {
        d: a.d,
        q: a.q,
        studies: a.studies,
        multipliers: a.multipliers,
        iterations: a.iterations,
        repeats: a.repeats,
        seed: a.seed,
    };
    let rows = benchmark(&settings, exec)?;
    println!("{:>10} {:>10} {:>14} {:>14} {:>10}", "multiplier", "pooled_n", "ms/iteration", "ms/leapfrog", "stats_ms");
    for r in &rows {
        println!(
            "{:>10} {:>10} {:>14.4} {:>14.4} {:>10.3}",
            r.multiplier,
            r.pooled_n,
            r.secs_per_iteration * 1e3,
            r.secs_per_leapfrog_step * 1e3,
            r.stats_secs * 1e3
        );
    }
    let per_it: Vec<f64> = rows.iter().map(|r| r.secs_per_iteration).collect();
    let per_step: Vec<f64> = rows.iter().map(|r| r.secs_per_leapfrog_step).collect();
    println!(
        "relative spread: {:.3} per iteration, {:.3} per leapfrog step",
        relative_spread(&per_it),
        relative_spread(&per_step)
    );
    if let Some(out) = a.out {
        let _lock = OutputLock::acquire(&out)?;
        write_json(&out.join("benchmark.json"), &rows)?;
        let mut manifest = Manifest::new("benchmark", settings.seed, json(&settings)?, exec.workers());
        manifest.add_outputs(&out)?;
        manifest.write(&out)?;
    }
    Ok(())
}

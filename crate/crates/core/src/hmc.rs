//! HMC-within-Gibbs sampler.
//!
//! Each iteration makes one HMC move on `Θ = (Λ, δ̃, A_1, …, A_S)` given the
//! Dirichlet–Laplace auxiliaries, then refreshes the auxiliaries given `Λ`.
//! The mass matrix is the identity and the step size and trajectory length
//! are redrawn every iteration.

use std::time::Instant;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SufaError};
use crate::identifiability::partial_svd;
use crate::likelihood::{evaluate, Evaluation, Executor};
use crate::model::{ModelDims, ParamSet, StudySummary};
use crate::priors::{
    gibbs_sweep, initial_dl_state, log_prior, sample_params_from_prior, DLState, DlGibbsOptions,
    PriorHyper,
};

/// Floor on initial residual variances.
pub const INIT_VARIANCE_FLOOR: f64 = 1e-4;

/// Randomized leapfrog settings: `δt ~ U(0, max_step)` and
/// `L ~ Poisson(mean_steps)` truncated to `[min_steps, max_steps]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmcTuning {
    pub max_step: f64,
    pub mean_steps: f64,
    pub min_steps: usize,
    pub max_steps: usize,
}

impl Default for HmcTuning {
    fn default() -> Self {
        HmcTuning {
            max_step: 0.01,
            mean_steps: 5.0,
            min_steps: 1,
            max_steps: 10,
        }
    }
}

impl HmcTuning {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_step > 0.0
            && self.max_step.is_finite()
            && self.mean_steps > 0.0
            && self.mean_steps.is_finite()
            && self.min_steps >= 1
            && self.min_steps <= self.max_steps;
        if !ok {
            return Err(SufaError::Config(format!("invalid HMC tuning {self:?}")));
        }
        Ok(())
    }
}

/// Draws `(δt, L)`.
pub fn sample_tuning<R: Rng + ?Sized>(tuning: &HmcTuning, rng: &mut R) -> (f64, usize) {
    let dt = loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            break u * tuning.max_step;
        }
    };
    let poisson = Poisson::new(tuning.mean_steps).expect("validated Poisson mean");
    let steps = loop {
        let k: f64 = poisson.sample(rng);
        let k = k as usize;
        if (tuning.min_steps..=tuning.max_steps).contains(&k) {
            break k;
        }
    };
    (dt, steps)
}

/// Metropolis exponent convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptRule {
    /// Accept with probability `min(1, exp(H_old − H_new))`.
    #[default]
    Standard,
    /// `min(1, exp(H_new − H_old))`. Not stationary; kept for comparison.
    Inverted,
}

/// Likelihood temperature.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Temperature {
    /// `β = 1`.
    #[default]
    Posterior,
    /// `β = 1/log(Σ_s n_s)` on every study.
    WbicPooled,
    /// `β_s = 1/log(n_s)` per study.
    WbicPerStudy,
    Fixed(f64),
}

impl Temperature {
    /// Per-study temperatures for sample counts `n_s`.
    pub fn betas(&self, n_s: &[usize]) -> Result<Vec<f64>> {
        let wbic = |n: usize| {
            if n < 3 {
                Err(SufaError::Config(format!(
                    "WBIC temperature needs n >= 3 (1/log n must lie in (0, 1]); got n = {n}"
                )))
            } else {
                Ok(1.0 / (n as f64).ln())
            }
        };
        match *self {
            Temperature::Posterior => Ok(vec![1.0; n_s.len()]),
            Temperature::WbicPooled => Ok(vec![wbic(n_s.iter().sum())?; n_s.len()]),
            Temperature::WbicPerStudy => n_s.iter().map(|&n| wbic(n)).collect(),
            Temperature::Fixed(b) => {
                if !(b > 0.0 && b <= 1.0) {
                    return Err(SufaError::Config(format!("temperature {b} outside (0, 1]")));
                }
                Ok(vec![b; n_s.len()])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Leading eigenvectors of the pooled second-moment matrix.
    #[default]
    Warm,
    /// A draw from the prior.
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub temperature: Temperature,
    pub init: InitMode,
    pub tuning: HmcTuning,
    pub dl: DlGibbsOptions,
    pub accept: AcceptRule,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            iterations: 7500,
            burn_in: 2500,
            thin: 5,
            seed: 0,
            temperature: Temperature::Posterior,
            init: InitMode::Warm,
            tuning: HmcTuning::default(),
            dl: DlGibbsOptions::default(),
            accept: AcceptRule::Standard,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(SufaError::Config(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(SufaError::Config("thinning must be at least 1".into()));
        }
        if let Temperature::Fixed(b) = self.temperature {
            if !(b > 0.0 && b <= 1.0) {
                return Err(SufaError::Config(format!("temperature {b} outside (0, 1]")));
            }
        }
        self.tuning.validate()
    }

    pub fn num_draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// One stored posterior draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub iteration: usize,
    pub params: ParamSet,
    pub dl: DLState,
    /// `Σ_s β_s L_s + log Π(Θ | τ, φ, ψ)` at the stored auxiliaries.
    pub log_posterior: f64,
    /// Untempered marginal log-likelihood.
    pub loglik: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct McmcOutput {
    pub draws: Vec<Draw>,
    /// Acceptance indicator of every iteration, burn-in included.
    pub accepted: Vec<bool>,
    /// `(δt, L)` used at every iteration.
    pub tuning_draws: Vec<(f64, usize)>,
    /// Leapfrog steps integrated over the whole chain.
    pub leapfrog_steps: usize,
    pub betas: Vec<f64>,
    pub config: ChainConfig,
    pub elapsed_secs: f64,
}

impl McmcOutput {
    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|a| **a).count() as f64 / self.accepted.len() as f64
    }

    /// Element-wise posterior mean of the shared covariance `ΛΛᵀ + Δ`.
    pub fn mean_shared_covariance(&self) -> Result<DMatrix<f64>> {
        mean_of(&self.draws, |d| crate::model::shared_covariance(&d.params))
    }

    /// Element-wise posterior mean of `Σ_s`.
    pub fn mean_marginal_covariance(&self, s: usize) -> Result<DMatrix<f64>> {
        mean_of(&self.draws, |d| crate::model::marginal_covariance(&d.params, s))
    }
}

fn mean_of<F>(draws: &[Draw], f: F) -> Result<DMatrix<f64>>
where
    F: Fn(&Draw) -> Result<DMatrix<f64>>,
{
    let first = draws
        .first()
        .ok_or_else(|| SufaError::Input("chain output holds no draws".into()))?;
    let mut acc = f(first)?;
    for d in &draws[1..] {
        acc += f(d)?;
    }
    Ok(acc / draws.len() as f64)
}

/// `H = −log Π + ½‖p‖²`.
pub fn hamiltonian(momentum: &DVector<f64>, log_posterior: f64) -> Result<f64> {
    if !log_posterior.is_finite() {
        return Err(SufaError::numeric("log-posterior is not finite"));
    }
    let h = -log_posterior + 0.5 * momentum.norm_squared();
    if !h.is_finite() {
        return Err(SufaError::numeric("Hamiltonian is not finite"));
    }
    Ok(h)
}

/// `L` velocity-Verlet steps of size `dt` for the target whose log-density
/// gradient is `grad`.
pub fn leapfrog<F>(
    x: &DVector<f64>,
    p: &DVector<f64>,
    dt: f64,
    steps: usize,
    mut grad: F,
) -> Result<(DVector<f64>, DVector<f64>)>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    if !(dt > 0.0) || steps == 0 {
        return Err(SufaError::Config(format!(
            "leapfrog needs dt > 0 and at least one step (dt = {dt}, L = {steps})"
        )));
    }
    let g0 = grad(x)?;
    let (x, p, _) = leapfrog_from(x.clone(), p.clone(), g0, dt, steps, |x| Ok(((), grad(x)?)))?;
    Ok((x, p))
}

/// Leapfrog that reuses the gradient at the start and returns whatever the
/// evaluator attaches to the final position.
fn leapfrog_from<T, F>(
    mut x: DVector<f64>,
    mut p: DVector<f64>,
    g0: DVector<f64>,
    dt: f64,
    steps: usize,
    mut eval: F,
) -> Result<(DVector<f64>, DVector<f64>, T)>
where
    F: FnMut(&DVector<f64>) -> Result<(T, DVector<f64>)>,
{
    p.axpy(0.5 * dt, &g0, 1.0);
    let mut last = None;
    for step in 0..steps {
        x.axpy(dt, &p, 1.0);
        let (extra, g) = eval(&x)?;
        let scale = if step + 1 == steps { 0.5 * dt } else { dt };
        p.axpy(scale, &g, 1.0);
        last = Some(extra);
    }
    Ok((x, p, last.expect("at least one leapfrog step")))
}

/// The tempered target shared by all steps of a chain.
#[derive(Debug, Clone)]
pub struct Target<'a> {
    pub studies: &'a [StudySummary],
    pub hyper: PriorHyper,
    pub betas: Vec<f64>,
    pub exec: Executor,
}

impl Target<'_> {
    pub fn evaluate(&self, params: &ParamSet, dl: &DLState) -> Result<Evaluation> {
        evaluate(params, dl, &self.hyper, self.studies, &self.betas, &self.exec)
    }
}

/// Outcome of one HMC move.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub params: ParamSet,
    pub eval: Evaluation,
    pub accepted: bool,
    pub delta_h: f64,
    /// Leapfrog steps actually integrated; a failed trajectory stops early.
    pub leapfrog_steps: usize,
}

/// One HMC move on `Θ` given `dl`; `current` must be the evaluation at
/// `params`. A rejected or failed proposal returns `params` unchanged.
#[allow(clippy::too_many_arguments)]
pub fn hmc_step<R: Rng + ?Sized>(
    params: &ParamSet,
    current: &Evaluation,
    dl: &DLState,
    target: &Target<'_>,
    dt: f64,
    steps: usize,
    rule: AcceptRule,
    rng: &mut R,
) -> StepResult {
    let x0 = params.to_flat();
    let p0 = DVector::from_fn(x0.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let u: f64 = rng.random();
    let taken = std::cell::Cell::new(0usize);
    let reject = |delta_h: f64| StepResult {
        params: params.clone(),
        eval: current.clone(),
        accepted: false,
        delta_h,
        leapfrog_steps: taken.get(),
    };
    let h0 = match hamiltonian(&p0, current.log_posterior()) {
        Ok(h) => h,
        Err(_) => return reject(f64::NAN),
    };
    let proposal = leapfrog_from(x0, p0, current.grad.to_flat(), dt, steps, |x| {
        taken.set(taken.get() + 1);
        let theta = ParamSet::from_flat(params, x)?;
        let ev = target.evaluate(&theta, dl)?;
        let g = ev.grad.to_flat();
        Ok(((theta, ev), g))
    });
    let (p1, (theta, ev)) = match proposal {
        Ok((_, p1, last)) => (p1, last),
        Err(e) => {
            warn!("HMC proposal failed and is rejected: {e}");
            return reject(f64::NAN);
        }
    };
    let h1 = match hamiltonian(&p1, ev.log_posterior()) {
        Ok(h) => h,
        Err(e) => {
            warn!("HMC proposal failed and is rejected: {e}");
            return reject(f64::NAN);
        }
    };
    let delta_h = h1 - h0;
    let log_ratio = match rule {
        AcceptRule::Standard => -delta_h,
        AcceptRule::Inverted => delta_h,
    };
    if log_ratio >= 0.0 || u.ln() < log_ratio {
        StepResult {
            params: theta,
            eval: ev,
            accepted: true,
            delta_h,
            leapfrog_steps: taken.get(),
        }
    } else {
        reject(delta_h)
    }
}

/// Starting values: warm start from the pooled second-moment matrix, or a
/// prior draw when there is no data.
pub fn initialize<R: Rng + ?Sized>(
    dims: &ModelDims,
    studies: &[StudySummary],
    hyper: &PriorHyper,
    mode: InitMode,
    tau_order: crate::priors::TauOrder,
    rng: &mut R,
) -> Result<(ParamSet, DLState)> {
    check_inputs(dims, studies)?;
    let (d, q) = (dims.d, dims.q);
    let pooled_n = dims.pooled_n();
    if mode == InitMode::Prior || pooled_n == 0 {
        let dl = DLState::sample_prior(d, q, hyper.a, rng)?;
        let params = sample_params_from_prior(&dl, &dims.q_s, hyper, rng)?;
        return Ok((params, dl));
    }
    let mut w = DMatrix::<f64>::zeros(d, d);
    for st in studies {
        w += &st.w;
    }
    let zero: Vec<usize> = (0..d).filter(|&j| !(w[(j, j)] > 0.0)).collect();
    if !zero.is_empty() {
        return Err(SufaError::Input(format!(
            "feature columns {zero:?} have zero variance in the pooled data"
        )));
    }
    let cov = w / pooled_n as f64;
    let svd = partial_svd(&cov, q, rng)?;
    let mut lambda = svd.u.clone();
    for h in 0..q {
        let scale = svd.singular_values[h].max(0.0).sqrt();
        lambda.column_mut(h).scale_mut(scale);
    }
    let log_delta = DVector::from_fn(d, |j, _| {
        let explained: f64 = lambda.row(j).iter().map(|v| v * v).sum();
        (cov[(j, j)] - explained).max(INIT_VARIANCE_FLOOR).ln()
    });
    let normal = Normal::new(0.0, 0.1).expect("valid normal");
    let a = dims
        .q_s
        .iter()
        .map(|&k| DMatrix::from_fn(q, k, |_, _| normal.sample(rng)))
        .collect();
    let params = ParamSet {
        lambda,
        a,
        log_delta,
    };
    let dl = initial_dl_state(&params.lambda, hyper.a, tau_order, rng)?;
    Ok((params, dl))
}

fn check_inputs(dims: &ModelDims, studies: &[StudySummary]) -> Result<()> {
    if studies.len() != dims.num_studies() {
        return Err(SufaError::Config(format!(
            "{} studies supplied but the model declares {}",
            studies.len(),
            dims.num_studies()
        )));
    }
    for (s, st) in studies.iter().enumerate() {
        if st.d() != dims.d {
            return Err(SufaError::Input(format!(
                "study {s} has {} features, the model has d = {}",
                st.d(),
                dims.d
            )));
        }
        if st.n != dims.n_s[s] {
            return Err(SufaError::Config(format!(
                "study {s} has {} samples but the model declares {}",
                st.n, dims.n_s[s]
            )));
        }
    }
    Ok(())
}

/// Runs one chain seeded from `config.seed`, with a warm or prior start.
pub fn run_chain(
    studies: &[StudySummary],
    dims: &ModelDims,
    hyper: &PriorHyper,
    config: &ChainConfig,
    exec: &Executor,
) -> Result<McmcOutput> {
    config.validate()?;
    hyper.validate()?;
    check_inputs(dims, studies)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = initialize(dims, studies, hyper, config.init, config.dl.tau_order, &mut rng)?;
    run_chain_from(studies, dims, hyper, config, exec, start, &mut rng)
}

/// Runs one chain from an explicit starting point.
pub fn run_chain_from<R: Rng + ?Sized>(
    studies: &[StudySummary],
    dims: &ModelDims,
    hyper: &PriorHyper,
    config: &ChainConfig,
    exec: &Executor,
    start: (ParamSet, DLState),
    rng: &mut R,
) -> Result<McmcOutput> {
    config.validate()?;
    hyper.validate()?;
    check_inputs(dims, studies)?;
    let (mut params, mut dl) = start;
    params.check_dims(dims)?;
    dl.validate()?;
    let betas = config.temperature.betas(&dims.n_s)?;
    let target = Target {
        studies,
        hyper: *hyper,
        betas: betas.clone(),
        exec: exec.clone(),
    };
    let started = Instant::now();
    let mut draws = Vec::with_capacity(config.num_draws());
    let mut accepted = Vec::with_capacity(config.iterations);
    let mut tuning_draws = Vec::with_capacity(config.iterations);
    let mut leapfrog_steps = 0;
    for it in 1..=config.iterations {
        let current = target.evaluate(&params, &dl)?;
        let (dt, steps) = sample_tuning(&config.tuning, rng);
        let step = hmc_step(&params, &current, &dl, &target, dt, steps, config.accept, rng);
        params = step.params;
        dl = gibbs_sweep(&params.lambda, &dl, config.dl, rng)?;
        accepted.push(step.accepted);
        leapfrog_steps += step.leapfrog_steps;
        tuning_draws.push((dt, steps));
        if it > config.burn_in && (it - config.burn_in) % config.thin == 0 {
            let lp = step.eval.tempered_loglik + log_prior(&params, &dl, hyper)?;
            draws.push(Draw {
                iteration: it,
                params: params.clone(),
                dl: dl.clone(),
                log_posterior: lp,
                loglik: step.eval.loglik,
                accepted: step.accepted,
            });
        }
    }
    Ok(McmcOutput {
        draws,
        accepted,
        tuning_draws,
        leapfrog_steps,
        betas,
        config: config.clone(),
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}

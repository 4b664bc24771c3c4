//! Marginal log-likelihood over cached sufficient statistics and the analytic
//! gradient of the log-posterior.
//!
//! Every per-study quantity goes through the low-rank form of `Σ_s⁻¹`, so a
//! gradient evaluation costs `O(q d²)` per study whatever the sample size.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, SufaError};
use crate::model::{symmetrize, LowRankDiag, ParamSet, StudySummary};
use crate::priors::{grad_log_prior, log_prior, DLState, PriorHyper};

/// Gradient with the shapes of a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub lambda: DMatrix<f64>,
    pub log_delta: DVector<f64>,
    pub a: Vec<DMatrix<f64>>,
}

impl GradientSet {
    pub fn zeros_like(params: &ParamSet) -> Self {
        GradientSet {
            lambda: DMatrix::zeros(params.d(), params.q()),
            log_delta: DVector::zeros(params.d()),
            a: params.a.iter().map(|a| DMatrix::zeros(a.nrows(), a.ncols())).collect(),
        }
    }

    /// Same layout as [`ParamSet::to_flat`].
    pub fn to_flat(&self) -> DVector<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.lambda.as_slice());
        out.extend_from_slice(self.log_delta.as_slice());
        for a in &self.a {
            out.extend_from_slice(a.as_slice());
        }
        DVector::from_vec(out)
    }

    pub fn is_finite(&self) -> bool {
        self.lambda.iter().all(|v| v.is_finite())
            && self.log_delta.iter().all(|v| v.is_finite())
            && self.a.iter().all(|a| a.iter().all(|v| v.is_finite()))
    }

    fn add_assign(&mut self, other: &GradientSet) {
        self.lambda += &other.lambda;
        self.log_delta += &other.log_delta;
        for (a, b) in self.a.iter_mut().zip(&other.a) {
            *a += b;
        }
    }
}

/// Cached intermediates for one study at one parameter value.
#[derive(Debug, Clone)]
pub struct StudyWorkspace {
    /// `C_s = I + A_sA_sᵀ`.
    pub core: DMatrix<f64>,
    /// Lower Cholesky factor of `C_s`.
    pub core_chol: DMatrix<f64>,
    /// `Λ̃_s = Λ chol(C_s)`, so that `Λ̃_sΛ̃_sᵀ = ΛC_sΛᵀ`.
    pub lambda_tilde: DMatrix<f64>,
    pub factor: LowRankDiag,
    pub sigma_inv: DMatrix<f64>,
    pub sigma_inv_w: DMatrix<f64>,
    /// `G_s = n_sΣ_s⁻¹ − Σ_s⁻¹W_sΣ_s⁻¹`.
    pub g: DMatrix<f64>,
    pub n: usize,
}

impl StudyWorkspace {
    /// `−½(n log|Σ| + tr(Σ⁻¹W)) − n d log(2π)/2`.
    pub fn loglik(&self) -> f64 {
        let d = self.factor.dim() as f64;
        let n = self.n as f64;
        -0.5 * (n * self.factor.logdet + self.sigma_inv_w.trace()) - 0.5 * n * d * (2.0 * PI).ln()
    }
}

fn check_studies(params: &ParamSet, studies: &[StudySummary]) -> Result<()> {
    params.validate()?;
    if studies.len() != params.num_studies() {
        return Err(SufaError::Dimension(format!(
            "{} study summaries for a model with {} studies",
            studies.len(),
            params.num_studies()
        )));
    }
    for (s, st) in studies.iter().enumerate() {
        if st.d() != params.d() {
            return Err(SufaError::Dimension(format!(
                "study {s} has {} features, model has {}",
                st.d(),
                params.d()
            )));
        }
    }
    Ok(())
}

fn tag_study(err: SufaError, s: usize) -> SufaError {
    match err {
        SufaError::Numeric { message, .. } => SufaError::Numeric {
            study: Some(s),
            message,
        },
        other => other,
    }
}

fn workspace_unchecked(params: &ParamSet, s: usize, study: &StudySummary) -> Result<StudyWorkspace> {
    let q = params.q();
    let a = &params.a[s];
    let core = symmetrize(DMatrix::identity(q, q) + a * a.transpose());
    let core_chol = core
        .clone()
        .cholesky()
        .ok_or_else(|| SufaError::numeric("C_s = I + A_sA_sᵀ is not positive definite"))?
        .l();
    let lambda_tilde = &params.lambda * &core_chol;
    let factor = LowRankDiag::factor(&lambda_tilde, &params.log_delta)?;
    let sigma_inv = factor.inverse();
    let sigma_inv_w = factor.solve(&study.w);
    // (Σ⁻¹W)Σ⁻¹ = M diag(1/δ) − (MB)Bᵀ, kept at O(k d²).
    let mut right = sigma_inv_w.clone();
    for (j, mut col) in right.column_iter_mut().enumerate() {
        col *= factor.inv_delta[j];
    }
    right -= (&sigma_inv_w * &factor.b) * factor.b.transpose();
    let g = symmetrize(&sigma_inv * study.n as f64 - right);
    Ok(StudyWorkspace {
        core,
        core_chol,
        lambda_tilde,
        factor,
        sigma_inv,
        sigma_inv_w,
        g,
        n: study.n,
    })
}

/// Builds the cached intermediates for study `s`.
pub fn compute_workspace(
    params: &ParamSet,
    s: usize,
    studies: &[StudySummary],
) -> Result<StudyWorkspace> {
    check_studies(params, studies)?;
    if s >= studies.len() {
        return Err(SufaError::Dimension(format!("study index {s} out of range")));
    }
    workspace_unchecked(params, s, &studies[s]).map_err(|e| tag_study(e, s))
}

fn is_vacuous(study: &StudySummary) -> bool {
    study.n == 0 && study.w.iter().all(|v| *v == 0.0)
}

/// `Σ_s log N(Y_s | 0, Σ_s)` written through `(W_s, n_s)` only.
pub fn marginal_loglik(params: &ParamSet, studies: &[StudySummary]) -> Result<f64> {
    check_studies(params, studies)?;
    let mut total = 0.0;
    for (s, st) in studies.iter().enumerate() {
        if is_vacuous(st) {
            continue;
        }
        let ws = workspace_unchecked(params, s, st).map_err(|e| tag_study(e, s))?;
        total += ws.loglik();
    }
    if !total.is_finite() {
        return Err(SufaError::numeric("log-likelihood is not finite"));
    }
    Ok(total)
}

/// Contribution of one study: log-likelihood and its gradient.
#[derive(Debug, Clone)]
struct StudyTerm {
    loglik: f64,
    d_lambda: DMatrix<f64>,
    d_log_delta: DVector<f64>,
    d_a: DMatrix<f64>,
}

fn study_term(params: &ParamSet, s: usize, study: &StudySummary) -> Result<StudyTerm> {
    let (d, q) = params.lambda.shape();
    let qs = params.a[s].ncols();
    if is_vacuous(study) {
        return Ok(StudyTerm {
            loglik: 0.0,
            d_lambda: DMatrix::zeros(d, q),
            d_log_delta: DVector::zeros(d),
            d_a: DMatrix::zeros(q, qs),
        });
    }
    let ws = workspace_unchecked(params, s, study)?;
    let g_lambda = &ws.g * &params.lambda;
    let d_lambda = -(&g_lambda * &ws.core);
    let d_log_delta = DVector::from_fn(d, |j, _| -0.5 * ws.g[(j, j)] * params.log_delta[j].exp());
    let d_a = -(params.lambda.tr_mul(&g_lambda) * &params.a[s]);
    let term = StudyTerm {
        loglik: ws.loglik(),
        d_lambda,
        d_log_delta,
        d_a,
    };
    let finite = term.loglik.is_finite()
        && term.d_lambda.iter().all(|v| v.is_finite())
        && term.d_log_delta.iter().all(|v| v.is_finite())
        && term.d_a.iter().all(|v| v.is_finite());
    if !finite {
        return Err(SufaError::numeric("non-finite likelihood or gradient"));
    }
    Ok(term)
}

/// How the per-study terms are evaluated.
#[derive(Debug, Clone, Default)]
pub enum Executor {
    #[default]
    Sequential,
    Pool(Arc<rayon::ThreadPool>),
}

impl Executor {
    /// A pool of `workers` threads; one worker means sequential evaluation.
    pub fn with_workers(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(SufaError::Config("worker count must be at least 1".into()));
        }
        if workers == 1 {
            return Ok(Executor::Sequential);
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| SufaError::Config(format!("cannot start worker pool: {e}")))?;
        Ok(Executor::Pool(Arc::new(pool)))
    }

    /// Reads `SUFA_WORKERS`, defaulting to one worker.
    pub fn from_env() -> Result<Self> {
        match std::env::var("SUFA_WORKERS") {
            Ok(v) => {
                let n = v.trim().parse::<usize>().map_err(|_| {
                    SufaError::Config(format!("SUFA_WORKERS must be a positive integer, got {v:?}"))
                })?;
                Executor::with_workers(n)
            }
            Err(_) => Ok(Executor::Sequential),
        }
    }

    pub fn workers(&self) -> usize {
        match self {
            Executor::Sequential => 1,
            Executor::Pool(p) => p.current_num_threads(),
        }
    }

    fn study_terms(&self, params: &ParamSet, studies: &[StudySummary]) -> Vec<Result<StudyTerm>> {
        let run = |(s, st): (usize, &StudySummary)| study_term(params, s, st).map_err(|e| tag_study(e, s));
        match self {
            Executor::Sequential => studies.iter().enumerate().map(run).collect(),
            Executor::Pool(pool) => {
                pool.install(|| studies.par_iter().enumerate().map(run).collect())
            }
        }
    }
}

/// Log-likelihood, tempered log-posterior and its gradient at one point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Untempered marginal log-likelihood.
    pub loglik: f64,
    /// `Σ_s β_s L_s`.
    pub tempered_loglik: f64,
    pub log_prior: f64,
    pub grad: GradientSet,
}

impl Evaluation {
    pub fn log_posterior(&self) -> f64 {
        self.tempered_loglik + self.log_prior
    }
}

/// Evaluates the tempered log-posterior `Σ_s β_s L_s + log Π` and its
/// gradient. Studies are reduced in index order whatever the executor, so
/// the result does not depend on the worker count.
pub fn evaluate(
    params: &ParamSet,
    dl: &DLState,
    hyper: &PriorHyper,
    studies: &[StudySummary],
    betas: &[f64],
    exec: &Executor,
) -> Result<Evaluation> {
    check_studies(params, studies)?;
    if betas.len() != studies.len() {
        return Err(SufaError::Dimension(format!(
            "{} temperatures for {} studies",
            betas.len(),
            studies.len()
        )));
    }
    let terms = exec.study_terms(params, studies);
    let mut grad = GradientSet::zeros_like(params);
    let mut loglik = 0.0;
    let mut tempered = 0.0;
    for (s, term) in terms.into_iter().enumerate() {
        let t = term?;
        let beta = betas[s];
        loglik += t.loglik;
        tempered += beta * t.loglik;
        grad.lambda += t.d_lambda * beta;
        grad.log_delta += t.d_log_delta * beta;
        grad.a[s] += t.d_a * beta;
    }
    let lp = log_prior(params, dl, hyper)?;
    grad.add_assign(&grad_log_prior(params, dl, hyper)?);
    if !grad.is_finite() || !lp.is_finite() {
        return Err(SufaError::numeric("non-finite log-posterior gradient"));
    }
    Ok(Evaluation {
        loglik,
        tempered_loglik: tempered,
        log_prior: lp,
        grad,
    })
}

/// Untempered log-posterior `L + log Π`.
pub fn log_posterior(
    params: &ParamSet,
    dl: &DLState,
    hyper: &PriorHyper,
    studies: &[StudySummary],
) -> Result<f64> {
    Ok(marginal_loglik(params, studies)? + log_prior(params, dl, hyper)?)
}

/// Gradient of the untempered log-posterior.
pub fn grad_log_posterior(
    params: &ParamSet,
    dl: &DLState,
    hyper: &PriorHyper,
    studies: &[StudySummary],
) -> Result<GradientSet> {
    let betas = vec![1.0; studies.len()];
    Ok(evaluate(params, dl, hyper, studies, &betas, &Executor::Sequential)?.grad)
}

/// Log-likelihood and log-posterior gradient with the per-study work spread
/// over `exec`.
pub fn parallel_grad_reduce(
    params: &ParamSet,
    dl: &DLState,
    hyper: &PriorHyper,
    studies: &[StudySummary],
    exec: &Executor,
) -> Result<(f64, GradientSet)> {
    let betas = vec![1.0; studies.len()];
    let ev = evaluate(params, dl, hyper, studies, &betas, exec)?;
    Ok((ev.loglik, ev.grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{marginal_covariance, sufficient_stats};
    use crate::priors::default_hyperparameters;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_params(rng: &mut ChaCha8Rng, d: usize, q: usize, q_s: &[usize]) -> ParamSet {
        ParamSet {
            lambda: random_matrix(rng, d, q),
            a: q_s.iter().map(|&k| random_matrix(rng, q, k)).collect(),
            log_delta: DVector::from_fn(d, |_, _| rng.random_range(-0.5..0.5)),
        }
    }

    fn random_data(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0))
    }

    fn random_dl(rng: &mut ChaCha8Rng, d: usize, q: usize) -> DLState {
        let raw = DMatrix::from_fn(d, q, |_, _| rng.random_range(0.5..1.5));
        let total = raw.sum();
        DLState {
            tau: rng.random_range(0.5..2.0),
            phi: raw / total,
            psi: DMatrix::from_fn(d, q, |_, _| rng.random_range(0.5..2.0)),
            a: 0.5,
        }
    }

    fn dense_mvn_logpdf(y: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
        let d = y.len() as f64;
        let chol = sigma.clone().cholesky().unwrap();
        let logdet: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let z = chol.solve(y);
        -0.5 * (d * (2.0 * PI).ln() + logdet + y.dot(&z))
    }

    #[test]
    fn standard_normal_at_origin() {
        let p = ParamSet {
            lambda: DMatrix::zeros(2, 1),
            a: vec![DMatrix::zeros(1, 0)],
            log_delta: DVector::zeros(2),
        };
        let st = StudySummary::new(DMatrix::zeros(2, 2), 1).unwrap();
        let l = marginal_loglik(&p, &[st]).unwrap();
        assert!((l + (2.0 * PI).ln()).abs() < 1e-14);
        assert!((l + 1.8379).abs() < 1e-4);
    }

    #[test]
    fn matches_per_observation_density_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_params(&mut rng, 3, 2, &[1, 1]);
        let data: Vec<_> = (0..2).map(|_| random_data(&mut rng, 5, 3)).collect();
        let studies: Vec<_> = data.iter().map(|y| sufficient_stats(y).unwrap()).collect();
        let mut oracle = 0.0;
        for (s, y) in data.iter().enumerate() {
            let sigma = marginal_covariance(&p, s).unwrap();
            for i in 0..y.nrows() {
                oracle += dense_mvn_logpdf(&y.row(i).transpose(), &sigma);
            }
        }
        let l = marginal_loglik(&p, &studies).unwrap();
        assert!((l - oracle).abs() < 1e-8, "{l} vs {oracle}");
    }

    #[test]
    fn study_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_params(&mut rng, 4, 2, &[1, 0, 1]);
        let studies: Vec<_> = (0..3)
            .map(|_| sufficient_stats(&random_data(&mut rng, 6, 4)).unwrap())
            .collect();
        let l = marginal_loglik(&p, &studies).unwrap();
        let perm = [2, 0, 1];
        let p2 = ParamSet {
            a: perm.iter().map(|&s| p.a[s].clone()).collect(),
            ..p.clone()
        };
        let st2: Vec<_> = perm.iter().map(|&s| studies[s].clone()).collect();
        assert!((l - marginal_loglik(&p2, &st2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn equal_sufficient_statistics_give_equal_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_params(&mut rng, 3, 1, &[1]);
        let y = random_data(&mut rng, 4, 3);
        // sign flips of rows leave YᵀY unchanged
        let mut y2 = y.clone();
        y2.row_mut(1).neg_mut();
        let s1 = sufficient_stats(&y).unwrap();
        let s2 = sufficient_stats(&y2).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(marginal_loglik(&p, &[s1]).unwrap(), marginal_loglik(&p, &[s2]).unwrap());
    }

    #[test]
    fn workspace_with_zero_study_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_params(&mut rng, 5, 2, &[0]);
        let st = sufficient_stats(&random_data(&mut rng, 7, 5)).unwrap();
        let ws = compute_workspace(&p, 0, &[st]).unwrap();
        assert_eq!(ws.core, DMatrix::identity(2, 2));
        assert_eq!(ws.lambda_tilde, p.lambda);
    }

    #[test]
    fn workspace_diagonal_case_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = random_params(&mut rng, 4, 1, &[1]);
        p.lambda.fill(0.0);
        let st = sufficient_stats(&random_data(&mut rng, 9, 4)).unwrap();
        let ws = compute_workspace(&p, 0, std::slice::from_ref(&st)).unwrap();
        let inv = DMatrix::from_diagonal(&p.log_delta.map(|v| (-v).exp()));
        let expected = &inv * 9.0 - &inv * &st.w * &inv;
        assert!((ws.g - expected).amax() < 1e-12);
    }

    #[test]
    fn workspace_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_params(&mut rng, 10, 3, &[1]);
        let st = sufficient_stats(&random_data(&mut rng, 15, 10)).unwrap();
        let ws = compute_workspace(&p, 0, std::slice::from_ref(&st)).unwrap();
        let sigma = marginal_covariance(&p, 0).unwrap();
        let inv = sigma.clone().try_inverse().unwrap();
        let expected = &inv * 15.0 - &inv * &st.w * &inv;
        assert!((&ws.g - &expected).amax() < 1e-8 * expected.amax().max(1.0));
        assert!((&ws.g - ws.g.transpose()).amax() <= 1e-8 * ws.g.amax());
        assert!((&ws.lambda_tilde * ws.lambda_tilde.transpose() - &p.lambda * &ws.core * p.lambda.transpose()).amax() < 1e-12);
    }

    #[test]
    fn zero_loadings_give_zero_study_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = random_params(&mut rng, 4, 2, &[1]);
        p.lambda.fill(0.0);
        p.a[0].fill(0.0);
        let dl = random_dl(&mut rng, 4, 2);
        let st = sufficient_stats(&random_data(&mut rng, 5, 4)).unwrap();
        let g = grad_log_posterior(&p, &dl, &default_hyperparameters(), &[st]).unwrap();
        assert!(g.a[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stationary_log_variances() {
        let h = default_hyperparameters();
        let d = 3;
        let p = ParamSet {
            lambda: DMatrix::zeros(d, 1),
            a: vec![DMatrix::zeros(1, 0)],
            log_delta: DVector::from_element(d, h.mu_delta),
        };
        let n = 10;
        let w = DMatrix::identity(d, d) * (n as f64 * h.mu_delta.exp());
        let st = StudySummary::new(w, n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dl = random_dl(&mut rng, d, 1);
        let g = grad_log_posterior(&p, &dl, &h, &[st]).unwrap();
        assert!(g.log_delta.amax() < 1e-12, "{}", g.log_delta);
    }

    fn fd_check(seed: u64, d: usize, q: usize, q_s: &[usize]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = default_hyperparameters();
        let p = random_params(&mut rng, d, q, q_s);
        let dl = random_dl(&mut rng, d, q);
        let studies: Vec<_> = q_s
            .iter()
            .map(|_| sufficient_stats(&random_data(&mut rng, d + 3, d)).unwrap())
            .collect();
        let g = grad_log_posterior(&p, &dl, &h, &studies).unwrap().to_flat();
        let x = p.to_flat();
        let step = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += step;
            let mut xm = x.clone();
            xm[i] -= step;
            let fp = log_posterior(&ParamSet::from_flat(&p, &xp).unwrap(), &dl, &h, &studies).unwrap();
            let fm = log_posterior(&ParamSet::from_flat(&p, &xm).unwrap(), &dl, &h, &studies).unwrap();
            let fd = (fp - fm) / (2.0 * step);
            let rel = (fd - g[i]).abs() / g[i].abs().max(1.0);
            assert!(rel <= 1e-5, "seed {seed} coord {i}: fd {fd} analytic {}", g[i]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        fd_check(10, 8, 2, &[1, 1]);
        fd_check(11, 4, 1, &[0]);
        fd_check(12, 12, 3, &[1, 1, 1]);
        fd_check(13, 6, 3, &[2]);
    }

    #[test]
    fn parallel_reduce_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let h = default_hyperparameters();
        let p = random_params(&mut rng, 9, 3, &[1, 0, 1, 1]);
        let dl = random_dl(&mut rng, 9, 3);
        let studies: Vec<_> = (0..4)
            .map(|_| sufficient_stats(&random_data(&mut rng, 11, 9)).unwrap())
            .collect();
        let seq = parallel_grad_reduce(&p, &dl, &h, &studies, &Executor::Sequential).unwrap();
        let one = parallel_grad_reduce(&p, &dl, &h, &studies, &Executor::with_workers(1).unwrap()).unwrap();
        let four = parallel_grad_reduce(&p, &dl, &h, &studies, &Executor::with_workers(4).unwrap()).unwrap();
        assert_eq!(seq.0.to_bits(), one.0.to_bits());
        assert_eq!(seq.0.to_bits(), four.0.to_bits());
        assert_eq!(seq.1, four.1);
        assert_eq!(seq.1, one.1);
    }

    #[test]
    fn ill_conditioned_study_is_reported() {
        let p = ParamSet {
            lambda: DMatrix::from_element(3, 2, 1e9),
            a: vec![DMatrix::zeros(2, 0), DMatrix::zeros(2, 0)],
            log_delta: DVector::from_element(3, -30.0),
        };
        let st = StudySummary::new(DMatrix::identity(3, 3), 2).unwrap();
        let err = marginal_loglik(&p, &[st.clone(), st]).unwrap_err();
        assert!(matches!(err, SufaError::IllConditioned { .. } | SufaError::Numeric { study: Some(0), .. }), "{err}");
        assert_eq!(tag_study(SufaError::numeric("x"), 2).to_string(), "numeric failure in study 2: x");
    }

    #[test]
    fn vacuous_studies_contribute_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let p = random_params(&mut rng, 3, 1, &[1]);
        assert_eq!(marginal_loglik(&p, &[StudySummary::empty(3)]).unwrap(), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn rotation_invariance(seed in any::<u64>(), d in 3usize..10, q in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_params(&mut rng, d, q, &[1]);
            let st = sufficient_stats(&random_data(&mut rng, d + 2, d)).unwrap();
            let h = random_matrix(&mut rng, q, q).qr().q();
            let rotated = ParamSet {
                lambda: &p.lambda * &h,
                a: vec![h.transpose() * &p.a[0]],
                log_delta: p.log_delta.clone(),
            };
            let l0 = marginal_loglik(&p, std::slice::from_ref(&st)).unwrap();
            let l1 = marginal_loglik(&rotated, &[st]).unwrap();
            prop_assert!((l0 - l1).abs() <= 1e-8 * l0.abs().max(1.0));
        }
    }
}

//! Prior hierarchy: Dirichlet–Laplace shrinkage on the shared loadings,
//! Gaussian priors on the study-specific matrices and a log-normal prior on
//! the idiosyncratic variances.
//!
//! Conditionally on the auxiliaries `(ψ, φ, τ)` each loading is Gaussian,
//! `λ_{jh} ~ N(0, ψ_{jh} φ_{jh}² τ²)`, which is what HMC sees. The
//! auxiliaries are refreshed by a Gibbs sweep given `Λ`.

mod variates;

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SufaError};
use crate::likelihood::GradientSet;
use crate::model::ParamSet;

pub use variates::{sample_gig, sample_inverse_gaussian};

/// Smallest `|λ|` used inside the auxiliary updates.
pub const LOADING_FLOOR: f64 = 1e-10;
/// Cap on the inverse-Gaussian mean in the local-scale update.
pub const IG_MEAN_CAP: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorHyper {
    /// Dirichlet–Laplace concentration.
    pub a: f64,
    /// Variance of each entry of `A_s`.
    pub b_a: f64,
    /// Mean of `log δ_j²`.
    pub mu_delta: f64,
    /// Variance of `log δ_j²`.
    pub sigma2_delta: f64,
}

impl Default for PriorHyper {
    fn default() -> Self {
        default_hyperparameters()
    }
}

impl PriorHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.a > 0.0
            && self.a <= 1.0
            && self.b_a > 0.0
            && self.sigma2_delta > 0.0
            && self.mu_delta.is_finite()
            && self.b_a.is_finite()
            && self.sigma2_delta.is_finite();
        if !ok {
            return Err(SufaError::Config(format!(
                "invalid prior hyperparameters {self:?}: need 0 < a <= 1 and positive variances"
            )));
        }
        Ok(())
    }

    /// Mean and variance of `δ_j²` implied by the log-normal prior.
    pub fn variance_prior_moments(&self) -> (f64, f64) {
        let (mu, s2) = (self.mu_delta, self.sigma2_delta);
        let mean = (mu + 0.5 * s2).exp();
        let var = (s2.exp() - 1.0) * (2.0 * mu + s2).exp();
        (mean, var)
    }
}

/// `a = 1/2`, `b_A = 1`, and a log-normal with `E δ² = 1`, `var δ² = 7`.
pub fn default_hyperparameters() -> PriorHyper {
    let (mean, var) = (1.0_f64, 7.0_f64);
    let sigma2_delta = (1.0 + var / (mean * mean)).ln();
    PriorHyper {
        a: 0.5,
        b_a: 1.0,
        mu_delta: mean.ln() - 0.5 * sigma2_delta,
        sigma2_delta,
    }
}

/// Auxiliary variables of the Dirichlet–Laplace hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct DLState {
    pub tau: f64,
    pub phi: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub a: f64,
}

impl DLState {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(SufaError::Domain(format!("global scale tau = {} must be positive", self.tau)));
        }
        if !(self.a > 0.0 && self.a <= 1.0) {
            return Err(SufaError::Domain(format!("DL concentration a = {} outside (0, 1]", self.a)));
        }
        if self.phi.shape() != self.psi.shape() {
            return Err(SufaError::Dimension("phi and psi shapes differ".into()));
        }
        if self.phi.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(SufaError::Domain("Dirichlet weights must be positive".into()));
        }
        if self.psi.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(SufaError::Domain("local scales must be positive".into()));
        }
        let total = self.phi.sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(SufaError::Domain(format!("Dirichlet weights sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Conditional prior variances `ψ φ² τ²` of the loadings.
    pub fn loading_variances(&self) -> DMatrix<f64> {
        let t2 = self.tau * self.tau;
        self.psi.zip_map(&self.phi, |psi, phi| psi * phi * phi * t2)
    }

    /// Direct draw from the hierarchy: `φ ~ Dir(a)`, `τ ~ Ga(dqa, 1/2)`,
    /// `ψ ~ Exp(1/2)`.
    pub fn sample_prior<R: Rng + ?Sized>(d: usize, q: usize, a: f64, rng: &mut R) -> Result<Self> {
        let k = (d * q) as f64;
        let gamma = Gamma::new(a, 1.0).map_err(|e| SufaError::Domain(e.to_string()))?;
        let raw = DMatrix::from_fn(d, q, |_, _| gamma.sample(rng));
        let phi = normalize(raw)?;
        let tau = Gamma::new(k * a, 2.0)
            .map_err(|e| SufaError::Domain(e.to_string()))?
            .sample(rng);
        let exp = Exp::new(0.5).map_err(|e| SufaError::Domain(e.to_string()))?;
        let psi = DMatrix::from_fn(d, q, |_, _| exp.sample(rng));
        Ok(DLState { tau, phi, psi, a })
    }

    /// Draws `Λ` from its conditional Gaussian prior.
    pub fn sample_loadings<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        self.loading_variances().map(|v| {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            z * v.sqrt()
        })
    }
}

fn normalize(raw: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let total = raw.sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(SufaError::numeric("Dirichlet normalizer is not positive"));
    }
    // Renormalize twice so the sum is 1 to within a few ulps even for large d·q.
    let phi = raw / total;
    let total = phi.sum();
    Ok((phi / total).map(|v| v.max(f64::MIN_POSITIVE)))
}

/// Order parameter used by the global-scale update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauOrder {
    /// `giG(dq(a − 1), 1, ·)`, the conditional of the gamma-distributed scale.
    #[default]
    Standard,
    /// `giG(dq(1 − a), 1, ·)`, with the sign flipped.
    Flipped,
}

/// Order of the three auxiliary draws within one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    /// `φ | Λ`, then `τ | φ, Λ`, then `ψ | φ, τ, Λ`: an exact joint draw of
    /// the auxiliaries given `Λ`.
    #[default]
    Blocked,
    /// `ψ` first from the previous `(φ, τ)`, then `φ`, then `τ`.
    PsiFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DlGibbsOptions {
    pub tau_order: TauOrder,
    pub sweep_order: SweepOrder,
}

fn floored_abs(lambda: f64) -> Result<f64> {
    if !lambda.is_finite() {
        return Err(SufaError::Domain("loading matrix has non-finite entries".into()));
    }
    Ok(lambda.abs().max(LOADING_FLOOR))
}

/// `ψ_{jh} = 1/ψ̃_{jh}` with `ψ̃_{jh} ~ iG(τφ_{jh}/|λ_{jh}|, 1)`.
pub fn gibbs_update_psi<R: Rng + ?Sized>(
    lambda: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    tau: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if lambda.shape() != phi.shape() {
        return Err(SufaError::Dimension("loading and weight shapes differ".into()));
    }
    let mut psi = DMatrix::zeros(lambda.nrows(), lambda.ncols());
    for idx in 0..lambda.len() {
        let mean = (tau * phi[idx] / floored_abs(lambda[idx])?).min(IG_MEAN_CAP);
        let draw = sample_inverse_gaussian(mean, 1.0, rng)?;
        psi[idx] = 1.0 / draw;
    }
    Ok(psi)
}

/// `φ = T / ΣT` with `T_{jh} ~ giG(a − 1, 1, 2|λ_{jh}|)`.
pub fn gibbs_update_phi<R: Rng + ?Sized>(
    lambda: &DMatrix<f64>,
    a: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let mut raw = DMatrix::zeros(lambda.nrows(), lambda.ncols());
    for idx in 0..lambda.len() {
        raw[idx] = sample_gig(a - 1.0, 1.0, 2.0 * floored_abs(lambda[idx])?, rng)?;
    }
    normalize(raw)
}

/// `τ ~ giG(order, 1, 2 Σ |λ_{jh}|/φ_{jh})`.
pub fn gibbs_update_tau<R: Rng + ?Sized>(
    lambda: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    a: f64,
    order: TauOrder,
    rng: &mut R,
) -> Result<f64> {
    if lambda.shape() != phi.shape() {
        return Err(SufaError::Dimension("loading and weight shapes differ".into()));
    }
    let k = lambda.len() as f64;
    let p = match order {
        TauOrder::Standard => k * (a - 1.0),
        TauOrder::Flipped => k * (1.0 - a),
    };
    let mut b = 0.0;
    for idx in 0..lambda.len() {
        b += floored_abs(lambda[idx])? / phi[idx];
    }
    sample_gig(p, 1.0, 2.0 * b, rng)
}

/// One full refresh of `(ψ, φ, τ)` given `Λ`.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    lambda: &DMatrix<f64>,
    prev: &DLState,
    opts: DlGibbsOptions,
    rng: &mut R,
) -> Result<DLState> {
    let a = prev.a;
    match opts.sweep_order {
        SweepOrder::Blocked => {
            let phi = gibbs_update_phi(lambda, a, rng)?;
            let tau = gibbs_update_tau(lambda, &phi, a, opts.tau_order, rng)?;
            let psi = gibbs_update_psi(lambda, &phi, tau, rng)?;
            Ok(DLState { tau, phi, psi, a })
        }
        SweepOrder::PsiFirst => {
            let psi = gibbs_update_psi(lambda, &prev.phi, prev.tau, rng)?;
            let phi = gibbs_update_phi(lambda, a, rng)?;
            let tau = gibbs_update_tau(lambda, &phi, a, opts.tau_order, rng)?;
            Ok(DLState { tau, phi, psi, a })
        }
    }
}

/// Initial auxiliaries for a given `Λ`: a blocked sweep, which needs no
/// previous state.
pub fn initial_dl_state<R: Rng + ?Sized>(
    lambda: &DMatrix<f64>,
    a: f64,
    tau_order: TauOrder,
    rng: &mut R,
) -> Result<DLState> {
    let phi = gibbs_update_phi(lambda, a, rng)?;
    let tau = gibbs_update_tau(lambda, &phi, a, tau_order, rng)?;
    let psi = gibbs_update_psi(lambda, &phi, tau, rng)?;
    Ok(DLState { tau, phi, psi, a })
}

fn gaussian_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

/// `log Π(Λ | ψ,φ,τ) + log Π(δ̃) + Σ_s log Π(A_s)` with all normalizing
/// constants included.
pub fn log_prior(params: &ParamSet, dl: &DLState, hyper: &PriorHyper) -> Result<f64> {
    dl.validate()?;
    if dl.phi.shape() != params.lambda.shape() {
        return Err(SufaError::Dimension("DL state does not match Lambda's shape".into()));
    }
    let var = dl.loading_variances();
    let mut total = 0.0;
    for (l, v) in params.lambda.iter().zip(var.iter()) {
        total += gaussian_logpdf(*l, 0.0, *v);
    }
    for ld in params.log_delta.iter() {
        total += gaussian_logpdf(*ld, hyper.mu_delta, hyper.sigma2_delta);
    }
    for a in &params.a {
        for v in a.iter() {
            total += gaussian_logpdf(*v, 0.0, hyper.b_a);
        }
    }
    Ok(total)
}

/// Gradient of [`log_prior`] with respect to `(Λ, δ̃, A_s)`.
pub fn grad_log_prior(params: &ParamSet, dl: &DLState, hyper: &PriorHyper) -> Result<GradientSet> {
    if dl.phi.shape() != params.lambda.shape() {
        return Err(SufaError::Dimension("DL state does not match Lambda's shape".into()));
    }
    let var = dl.loading_variances();
    Ok(GradientSet {
        lambda: params.lambda.zip_map(&var, |l, v| -l / v),
        log_delta: params.log_delta.map(|v| -(v - hyper.mu_delta) / hyper.sigma2_delta),
        a: params.a.iter().map(|a| a / -hyper.b_a).collect(),
    })
}

/// Draws `(A_s, δ̃)` from their priors; `Λ` is drawn from `dl`.
pub fn sample_params_from_prior<R: Rng + ?Sized>(
    dl: &DLState,
    q_s: &[usize],
    hyper: &PriorHyper,
    rng: &mut R,
) -> Result<ParamSet> {
    let lambda = dl.sample_loadings(rng);
    let (d, q) = lambda.shape();
    let ld = Normal::new(hyper.mu_delta, hyper.sigma2_delta.sqrt())
        .map_err(|e| SufaError::Domain(e.to_string()))?;
    let an = Normal::new(0.0, hyper.b_a.sqrt()).map_err(|e| SufaError::Domain(e.to_string()))?;
    Ok(ParamSet {
        lambda,
        log_delta: nalgebra::DVector::from_fn(d, |_, _| ld.sample(rng)),
        a: q_s.iter().map(|&qs| DMatrix::from_fn(q, qs, |_, _| an.sample(rng))).collect(),
    })
}

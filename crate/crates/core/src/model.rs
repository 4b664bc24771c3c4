//! Parameterization of the subspace factor model and the covariance algebra
//! built on it.
//!
//! Study `s` has marginal covariance `Σ_s = Λ (I + A_s A_sᵀ) Λᵀ + Δ` where `Λ`
//! is the shared `d×q` loading matrix, `A_s` is `q×q_s`, and `Δ` is diagonal.
//! Idiosyncratic variances are carried on the log scale (`log_delta[j] =
//! log δ_j²`) so that every parameter lives in an unconstrained space.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SufaError};

/// Condition-number estimate above which the inner `k×k` solve is rejected.
pub const ILL_CONDITIONED: f64 = 1e12;

/// Sizes of a multi-study model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d: usize,
    pub q: usize,
    pub q_s: Vec<usize>,
    pub n_s: Vec<usize>,
}

impl ModelDims {
    pub fn new(d: usize, q: usize, q_s: Vec<usize>, n_s: Vec<usize>) -> Result<Self> {
        let dims = ModelDims { d, q, q_s, n_s };
        dims.validate_latent()?;
        if dims.n_s.len() != dims.q_s.len() {
            return Err(SufaError::Config(format!(
                "{} study sample counts given for {} studies",
                dims.n_s.len(),
                dims.q_s.len()
            )));
        }
        if let Some(s) = dims.n_s.iter().position(|&n| n == 0) {
            return Err(SufaError::Config(format!("study {s} has no samples")));
        }
        Ok(dims)
    }

    /// Dimensions for a model conditioned on no data at all (every `n_s = 0`),
    /// under which the posterior reduces to the prior.
    pub fn prior_only(d: usize, q: usize, q_s: Vec<usize>) -> Result<Self> {
        let n_s = vec![0; q_s.len()];
        let dims = ModelDims { d, q, q_s, n_s };
        dims.validate_latent()?;
        Ok(dims)
    }

    fn validate_latent(&self) -> Result<()> {
        if self.d == 0 {
            return Err(SufaError::Config("feature count d must be at least 1".into()));
        }
        if self.q == 0 || self.q >= self.d {
            return Err(SufaError::Config(format!(
                "shared latent dimension must satisfy 1 <= q < d (q = {}, d = {})",
                self.q, self.d
            )));
        }
        if self.q_s.is_empty() {
            return Err(SufaError::Config("at least one study is required".into()));
        }
        let total: usize = self.q_s.iter().sum();
        if total > self.q {
            return Err(SufaError::Config(format!(
                "study-specific dimensions sum to {total} which exceeds q = {}; \
                 identifiability requires sum(q_s) <= q",
                self.q
            )));
        }
        Ok(())
    }

    pub fn num_studies(&self) -> usize {
        self.q_s.len()
    }

    pub fn pooled_n(&self) -> usize {
        self.n_s.iter().sum()
    }

    /// Length of the flattened parameter vector `(Λ, δ̃, A_1, …, A_S)`.
    pub fn num_params(&self) -> usize {
        self.d * self.q + self.d + self.q_s.iter().map(|qs| self.q * qs).sum::<usize>()
    }
}

/// The continuous parameters updated by HMC.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub lambda: DMatrix<f64>,
    pub a: Vec<DMatrix<f64>>,
    pub log_delta: DVector<f64>,
}

impl ParamSet {
    pub fn zeros(dims: &ModelDims) -> Self {
        ParamSet {
            lambda: DMatrix::zeros(dims.d, dims.q),
            a: dims.q_s.iter().map(|&qs| DMatrix::zeros(dims.q, qs)).collect(),
            log_delta: DVector::zeros(dims.d),
        }
    }

    pub fn d(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn q(&self) -> usize {
        self.lambda.ncols()
    }

    pub fn num_studies(&self) -> usize {
        self.a.len()
    }

    pub fn study_dims(&self) -> Vec<usize> {
        self.a.iter().map(|a| a.ncols()).collect()
    }

    /// Checks internal shape consistency and finiteness.
    pub fn validate(&self) -> Result<()> {
        let (d, q) = self.lambda.shape();
        if self.log_delta.len() != d {
            return Err(SufaError::Dimension(format!(
                "log_delta has length {} but Lambda has {d} rows",
                self.log_delta.len()
            )));
        }
        for (s, a) in self.a.iter().enumerate() {
            if a.nrows() != q {
                return Err(SufaError::Dimension(format!(
                    "A[{s}] has {} rows but Lambda has {q} columns",
                    a.nrows()
                )));
            }
        }
        let finite = self.lambda.iter().all(|v| v.is_finite())
            && self.log_delta.iter().all(|v| v.is_finite())
            && self.a.iter().all(|a| a.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(SufaError::Domain("parameter set has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn check_dims(&self, dims: &ModelDims) -> Result<()> {
        if self.d() != dims.d || self.q() != dims.q || self.study_dims() != dims.q_s {
            return Err(SufaError::Dimension(format!(
                "parameters have d={}, q={}, q_s={:?}; model expects d={}, q={}, q_s={:?}",
                self.d(),
                self.q(),
                self.study_dims(),
                dims.d,
                dims.q,
                dims.q_s
            )));
        }
        Ok(())
    }

    /// Idiosyncratic variances `δ_j² = exp(δ̃_j)`.
    pub fn delta(&self) -> DVector<f64> {
        self.log_delta.map(f64::exp)
    }

    pub fn num_params(&self) -> usize {
        let (d, q) = self.lambda.shape();
        d * q + d + self.a.iter().map(|a| a.len()).sum::<usize>()
    }

    /// Flattens to `(vec Λ, δ̃, vec A_1, …, vec A_S)`, matrices column-major.
    pub fn to_flat(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(self.lambda.as_slice());
        out.extend_from_slice(self.log_delta.as_slice());
        for a in &self.a {
            out.extend_from_slice(a.as_slice());
        }
        DVector::from_vec(out)
    }

    /// Inverse of [`ParamSet::to_flat`]; `template` supplies the shapes.
    pub fn from_flat(template: &ParamSet, flat: &DVector<f64>) -> Result<Self> {
        if flat.len() != template.num_params() {
            return Err(SufaError::Dimension(format!(
                "flat vector has length {} but the parameter set needs {}",
                flat.len(),
                template.num_params()
            )));
        }
        let (d, q) = template.lambda.shape();
        let data = flat.as_slice();
        let mut at = 0;
        let lambda = DMatrix::from_column_slice(d, q, &data[at..at + d * q]);
        at += d * q;
        let log_delta = DVector::from_column_slice(&data[at..at + d]);
        at += d;
        let mut a = Vec::with_capacity(template.a.len());
        for t in &template.a {
            let len = t.len();
            a.push(DMatrix::from_column_slice(t.nrows(), t.ncols(), &data[at..at + len]));
            at += len;
        }
        Ok(ParamSet {
            lambda,
            a,
            log_delta,
        })
    }
}

/// Per-study sufficient statistic: `W = Σ_i y_i y_iᵀ` and the sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySummary {
    pub w: DMatrix<f64>,
    pub n: usize,
}

impl StudySummary {
    /// Validates symmetry and positive semi-definiteness of `w`.
    pub fn new(w: DMatrix<f64>, n: usize) -> Result<Self> {
        if !w.is_square() {
            return Err(SufaError::Dimension(format!(
                "sum-of-squares matrix must be square, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(SufaError::Input("sum-of-squares matrix has non-finite entries".into()));
        }
        let scale = w.amax().max(f64::MIN_POSITIVE);
        let asym = (&w - w.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(SufaError::Input(format!(
                "sum-of-squares matrix is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let d = w.nrows();
        let trace = w.trace();
        let min_eig = w.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-8 * trace.abs() / d as f64 {
            return Err(SufaError::Input(format!(
                "sum-of-squares matrix is not positive semi-definite (eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(StudySummary { w, n })
    }

    /// An empty study (`W = 0`, `n = 0`) contributing nothing to the likelihood.
    pub fn empty(d: usize) -> Self {
        StudySummary {
            w: DMatrix::zeros(d, d),
            n: 0,
        }
    }

    pub fn d(&self) -> usize {
        self.w.nrows()
    }
}

/// Computes `W = YᵀY` for an `n×d` data matrix.
pub fn sufficient_stats(y: &DMatrix<f64>) -> Result<StudySummary> {
    if y.nrows() == 0 || y.ncols() == 0 {
        return Err(SufaError::Input("cannot summarize an empty data matrix".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SufaError::Input("data matrix has non-finite entries".into()));
    }
    let w = symmetrize(y.tr_mul(y));
    Ok(StudySummary { w, n: y.nrows() })
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

fn check_study(params: &ParamSet, s: usize) -> Result<()> {
    if s >= params.a.len() {
        return Err(SufaError::Dimension(format!(
            "study index {s} out of range for {} studies",
            params.a.len()
        )));
    }
    Ok(())
}

/// `C_s = I_q + A_s A_sᵀ`.
pub fn study_core(params: &ParamSet, s: usize) -> Result<DMatrix<f64>> {
    check_study(params, s)?;
    let q = params.q();
    let a = &params.a[s];
    Ok(DMatrix::identity(q, q) + a * a.transpose())
}

/// `Σ_s = Λ(I + A_sA_sᵀ)Λᵀ + Δ`.
pub fn marginal_covariance(params: &ParamSet, s: usize) -> Result<DMatrix<f64>> {
    params.validate()?;
    let core = study_core(params, s)?;
    let mut sigma = &params.lambda * core * params.lambda.transpose();
    for (j, ld) in params.log_delta.iter().enumerate() {
        sigma[(j, j)] += ld.exp();
    }
    Ok(symmetrize(sigma))
}

/// Shared covariance `Σ = ΛΛᵀ + Δ`.
pub fn shared_covariance(params: &ParamSet) -> Result<DMatrix<f64>> {
    params.validate()?;
    let mut sigma = &params.lambda * params.lambda.transpose();
    for (j, ld) in params.log_delta.iter().enumerate() {
        sigma[(j, j)] += ld.exp();
    }
    Ok(symmetrize(sigma))
}

/// Factorization of `Λ̃Λ̃ᵀ + Δ` through its `k×k` inner matrix.
///
/// Holds `Σ⁻¹ = diag(inv_delta) − B Bᵀ` with `B = Δ⁻¹Λ̃ L⁻ᵀ`, where
/// `L Lᵀ = I_k + Λ̃ᵀΔ⁻¹Λ̃`, together with `log|Σ|`.
#[derive(Debug, Clone)]
pub struct LowRankDiag {
    pub inv_delta: DVector<f64>,
    pub b: DMatrix<f64>,
    pub logdet: f64,
}

impl LowRankDiag {
    pub fn factor(loadings: &DMatrix<f64>, log_delta: &DVector<f64>) -> Result<Self> {
        let (d, k) = loadings.shape();
        if log_delta.len() != d {
            return Err(SufaError::Dimension(format!(
                "loadings have {d} rows but log-variances have length {}",
                log_delta.len()
            )));
        }
        if k > d {
            return Err(SufaError::Dimension(format!(
                "low-rank factor has {k} columns which exceeds d = {d}"
            )));
        }
        if loadings.iter().chain(log_delta.iter()).any(|v| !v.is_finite()) {
            return Err(SufaError::Domain("low-rank factor has non-finite entries".into()));
        }
        let inv_delta = log_delta.map(|v| (-v).exp());
        // Δ⁻¹Λ̃
        let mut scaled = loadings.clone();
        for (j, mut row) in scaled.row_iter_mut().enumerate() {
            row *= inv_delta[j];
        }
        let mut inner = loadings.tr_mul(&scaled);
        for i in 0..k {
            inner[(i, i)] += 1.0;
        }
        let inner = symmetrize(inner);
        let chol = inner.cholesky().ok_or_else(|| {
            SufaError::numeric("inner matrix I + Λ̃ᵀΔ⁻¹Λ̃ is not positive definite")
        })?;
        let l = chol.l();
        let (lo, hi) = l
            .diagonal()
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let condition = if k == 0 { 1.0 } else { (hi / lo).powi(2) };
        if !condition.is_finite() || condition > ILL_CONDITIONED {
            return Err(SufaError::IllConditioned {
                condition,
                context: format!("inner {k}x{k} system of a low-rank-plus-diagonal inverse"),
            });
        }
        // B = Δ⁻¹Λ̃ L⁻ᵀ, i.e. solve L Bᵀ = (Δ⁻¹Λ̃)ᵀ.
        let bt = l
            .solve_lower_triangular(&scaled.transpose())
            .ok_or_else(|| SufaError::numeric("triangular solve failed"))?;
        let logdet_inner: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let logdet = logdet_inner + log_delta.sum();
        Ok(LowRankDiag {
            inv_delta,
            b: bt.transpose(),
            logdet,
        })
    }

    pub fn dim(&self) -> usize {
        self.inv_delta.len()
    }

    /// Dense `Σ⁻¹`; costs `O(k d²)`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let mut out = -(&self.b * self.b.transpose());
        for (j, v) in self.inv_delta.iter().enumerate() {
            out[(j, j)] += v;
        }
        symmetrize(out)
    }

    /// `Σ⁻¹ M` without forming `Σ⁻¹`.
    pub fn solve(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for (j, mut row) in out.row_iter_mut().enumerate() {
            row *= self.inv_delta[j];
        }
        let btm = self.b.tr_mul(m);
        out -= &self.b * btm;
        out
    }
}

/// `(Λ̃Λ̃ᵀ + Δ)⁻¹` by the Woodbury identity.
pub fn woodbury_inverse(loadings: &DMatrix<f64>, log_delta: &DVector<f64>) -> Result<DMatrix<f64>> {
    Ok(LowRankDiag::factor(loadings, log_delta)?.inverse())
}

/// `log|Λ̃Λ̃ᵀ + Δ|` by the matrix determinant lemma.
pub fn logdet_lowrank(loadings: &DMatrix<f64>, log_delta: &DVector<f64>) -> Result<f64> {
    Ok(LowRankDiag::factor(loadings, log_delta)?.logdet)
}

/// `R = diag(Σ)^{-1/2} Σ diag(Σ)^{-1/2}`.
pub fn correlation_matrix(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sigma.is_square() {
        return Err(SufaError::Dimension("covariance matrix must be square".into()));
    }
    let d = sigma.nrows();
    let mut inv_sd = DVector::zeros(d);
    for j in 0..d {
        let v = sigma[(j, j)];
        if !(v > 0.0) || !v.is_finite() {
            return Err(SufaError::Domain(format!(
                "covariance diagonal entry {j} is {v}, must be positive"
            )));
        }
        inv_sd[j] = 1.0 / v.sqrt();
    }
    let mut r = DMatrix::from_fn(d, d, |i, j| {
        (sigma[(i, j)] * inv_sd[i] * inv_sd[j]).clamp(-1.0, 1.0)
    });
    for j in 0..d {
        r[(j, j)] = 1.0;
    }
    Ok(symmetrize(r))
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn instance() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>)> {
        (2usize..=50, 0usize..=10).prop_flat_map(|(d, k)| {
            let k = k.min(d);
            (
                proptest::collection::vec(-1.0f64..1.0, d * k),
                proptest::collection::vec(-1.0f64..1.0, d),
            )
                .prop_map(move |(l, ld)| {
                    (DMatrix::from_vec(d, k, l), DVector::from_vec(ld))
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn woodbury_times_sigma_is_identity((lt, ld) in instance()) {
            let d = lt.nrows();
            let mut sigma = &lt * lt.transpose();
            for j in 0..d { sigma[(j, j)] += ld[j].exp(); }
            let inv = woodbury_inverse(&lt, &ld).unwrap();
            prop_assert!((inv * &sigma - DMatrix::identity(d, d)).amax() <= 1e-8);
            let dense = sigma.cholesky().unwrap().l().diagonal().iter().map(|v| 2.0 * v.ln()).sum::<f64>();
            prop_assert!((logdet_lowrank(&lt, &ld).unwrap() - dense).abs() <= 1e-8);
        }

        #[test]
        fn marginal_covariance_is_psd_above_min_variance((lt, ld) in instance()) {
            let (d, k) = lt.shape();
            prop_assume!(k >= 1 && k < d);
            let p = ParamSet { lambda: lt, a: vec![], log_delta: ld };
            let sigma = shared_covariance(&p).unwrap();
            let min_var = p.log_delta.iter().map(|v| v.exp()).fold(f64::INFINITY, f64::min);
            prop_assert!(sigma.symmetric_eigenvalues().min() >= min_var - 1e-8);
        }
    }
}

//! Synthetic multi-study data with known shared and study-specific loadings.
//!
//! Data follow `Y_{s,i} = Λη + Φ_sζ + ε` with `η, ζ` standard normal and
//! `ε ~ N(0, δ I)`. The shared loadings come in three sparsity patterns and
//! the study loadings either sit close to `C(Λ)` or entirely outside it.

use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SufaError};
use crate::identifiability::numerical_rank;

/// Smallest feature count accepted by [`gen_shared_loading`].
pub const MIN_FEATURES: usize = 20;
/// Entries filled in each all-zero row.
pub const REPAIR_ENTRIES: usize = 5;
/// Idiosyncratic variance used by the simulation designs.
pub const DEFAULT_DELTA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// One consecutive block covering a quarter of each column.
    FM1,
    /// The block rule applied separately to each half of the rows.
    FM2,
    /// A random quarter of the entries of each column.
    FM3,
}

impl FromStr for Scenario {
    type Err = SufaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FM1" => Ok(Scenario::FM1),
            "FM2" => Ok(Scenario::FM2),
            "FM3" => Ok(Scenario::FM3),
            other => Err(SufaError::Config(format!("unknown scenario {other:?}; expected FM1, FM2 or FM3"))),
        }
    }
}

fn block_len(rows: usize) -> usize {
    ((rows as f64) * 0.25).round() as usize
}

fn fill_block<R: Rng + ?Sized>(m: &mut DMatrix<f64>, col: usize, rows: std::ops::Range<usize>, rng: &mut R) {
    let unif = Uniform::new(-2.0, 2.0).expect("valid range");
    let len = block_len(rows.len());
    if len == 0 {
        return;
    }
    let start = rows.start + rng.random_range(0..=rows.len() - len);
    for r in start..start + len {
        m[(r, col)] = unif.sample(rng);
    }
}

/// Gives every all-zero row `min(5, q)` random nonzero entries; returns the
/// repaired rows.
fn repair_null_rows<R: Rng + ?Sized>(m: &mut DMatrix<f64>, rng: &mut R) -> Vec<usize> {
    let unif = Uniform::new(-2.0, 2.0).expect("valid range");
    let q = m.ncols();
    let mut repaired = Vec::new();
    for r in 0..m.nrows() {
        if m.row(r).iter().all(|v| *v == 0.0) {
            for c in sample(rng, q, REPAIR_ENTRIES.min(q)) {
                m[(r, c)] = unif.sample(rng);
            }
            repaired.push(r);
        }
    }
    repaired
}

/// Sparse shared loadings for one of the three scenarios, entries
/// `Unif(−2, 2)`, with no all-zero rows.
pub fn gen_shared_loading<R: Rng + ?Sized>(scenario: Scenario, d: usize, q: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if d < MIN_FEATURES {
        return Err(SufaError::Input(format!("simulation designs need d >= {MIN_FEATURES}, got {d}")));
    }
    if q == 0 {
        return Err(SufaError::Input("need at least one shared factor".into()));
    }
    let mut m = DMatrix::zeros(d, q);
    let unif = Uniform::new(-2.0, 2.0).expect("valid range");
    for c in 0..q {
        match scenario {
            Scenario::FM1 => fill_block(&mut m, c, 0..d, rng),
            Scenario::FM2 => {
                fill_block(&mut m, c, 0..d / 2, rng);
                fill_block(&mut m, c, d / 2..d, rng);
            }
            Scenario::FM3 => {
                for r in sample(rng, d, block_len(d)) {
                    m[(r, c)] = unif.sample(rng);
                }
            }
        }
    }
    repair_null_rows(&mut m, rng);
    Ok(m)
}

/// How study-specific loadings relate to `C(Λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyMode {
    /// `Φ_s = ΛA_s + E_s` with `A_s ~ N(0, a_sd²)` and `E_s ~ N(0, e_sd²)`.
    Slight { a_sd: f64, e_sd: f64 },
    /// Mutually orthogonal `Φ_s` inside the null space of `Λᵀ`; with `scale`
    /// the median column mean-square matches that of `Λ`.
    Complete { scale: bool },
}

impl StudyMode {
    pub fn slight() -> Self {
        StudyMode::Slight { a_sd: 0.25, e_sd: 0.10 }
    }

    pub fn complete() -> Self {
        StudyMode::Complete { scale: true }
    }
}

impl FromStr for StudyMode {
    type Err = SufaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "slight" => Ok(StudyMode::slight()),
            "complete" => Ok(StudyMode::complete()),
            "complete-unscaled" => Ok(StudyMode::Complete { scale: false }),
            other => Err(SufaError::Config(format!(
                "unknown misspecification mode {other:?}; expected slight, complete or complete-unscaled"
            ))),
        }
    }
}

fn median_column_mean_square(m: &DMatrix<f64>) -> f64 {
    let mut ms: Vec<f64> = m.column_iter().map(|c| c.norm_squared() / m.nrows() as f64).collect();
    ms.sort_by(f64::total_cmp);
    let k = ms.len();
    if k == 0 {
        return 0.0;
    }
    if k % 2 == 1 {
        ms[k / 2]
    } else {
        0.5 * (ms[k / 2 - 1] + ms[k / 2])
    }
}

/// Orthonormal basis of the orthogonal complement of `C(Λ)`.
fn null_space_basis(lambda: &DMatrix<f64>) -> DMatrix<f64> {
    let d = lambda.nrows();
    let svd = lambda.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-10 * smax)
        .collect();
    let range = DMatrix::from_fn(d, keep.len(), |r, c| u[(r, keep[c])]);
    let projector = DMatrix::identity(d, d) - &range * range.transpose();
    let full = projector.svd(true, false);
    let pu = full.u.expect("u requested");
    let cols: Vec<usize> = (0..full.singular_values.len())
        .filter(|&i| full.singular_values[i] > 0.5)
        .collect();
    DMatrix::from_fn(d, cols.len(), |r, c| pu[(r, cols[c])])
}

/// Study-specific loadings `Φ_s` (`d × q_s`).
pub fn gen_study_loadings<R: Rng + ?Sized>(
    mode: StudyMode,
    lambda: &DMatrix<f64>,
    q_s: &[usize],
    rng: &mut R,
) -> Result<Vec<DMatrix<f64>>> {
    let (d, q) = lambda.shape();
    match mode {
        StudyMode::Slight { a_sd, e_sd } => {
            if !(a_sd >= 0.0 && e_sd >= 0.0) {
                return Err(SufaError::Config("standard deviations must be nonnegative".into()));
            }
            Ok(q_s
                .iter()
                .map(|&k| {
                    let a = DMatrix::from_fn(q, k, |_, _| a_sd * rng.sample::<f64, _>(StandardNormal));
                    let e = DMatrix::from_fn(d, k, |_, _| e_sd * rng.sample::<f64, _>(StandardNormal));
                    lambda * a + e
                })
                .collect())
        }
        StudyMode::Complete { scale } => {
            let total: usize = q_s.iter().sum();
            let rank = numerical_rank(lambda, 1e-10);
            if total > d - rank {
                return Err(SufaError::Input(format!(
                    "study dimensions sum to {total} but the null space of Lambda has dimension {}",
                    d - rank
                )));
            }
            let basis = null_space_basis(lambda);
            let mix = DMatrix::from_fn(basis.ncols(), total, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut phi_all = &basis * mix.qr().q();
            if scale && total > 0 {
                let target = median_column_mean_square(lambda);
                let current = median_column_mean_square(&phi_all);
                if current > 0.0 {
                    phi_all *= (target / current).sqrt();
                }
            }
            let mut out = Vec::with_capacity(q_s.len());
            let mut at = 0;
            for &k in q_s {
                out.push(phi_all.columns(at, k).into_owned());
                at += k;
            }
            Ok(out)
        }
    }
}

/// `n_s` draws of `Λη + Φ_sζ + ε` for each study, one `n_s × d` matrix each.
pub fn simulate_msfa<R: Rng + ?Sized>(
    lambda: &DMatrix<f64>,
    phi: &[DMatrix<f64>],
    delta: f64,
    n_s: &[usize],
    rng: &mut R,
) -> Result<Vec<DMatrix<f64>>> {
    if phi.len() != n_s.len() {
        return Err(SufaError::Dimension(format!("{} study loadings for {} studies", phi.len(), n_s.len())));
    }
    if !(delta > 0.0) {
        return Err(SufaError::Config(format!("idiosyncratic variance {delta} must be positive")));
    }
    let (d, q) = lambda.shape();
    let noise = Normal::new(0.0, delta.sqrt()).expect("positive sd");
    let mut out = Vec::with_capacity(phi.len());
    for (p, &n) in phi.iter().zip(n_s) {
        if p.nrows() != d {
            return Err(SufaError::Dimension("study loadings have the wrong row count".into()));
        }
        let k = p.ncols();
        let eta = DMatrix::from_fn(q, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let zeta = DMatrix::from_fn(k, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eps = DMatrix::from_fn(d, n, |_, _| noise.sample(rng));
        let y = lambda * eta + p * zeta + eps;
        out.push(y.transpose());
    }
    Ok(out)
}

/// `n_s = max(Poisson(d/S), ⌈d/S⌉)` and `q_s ~ Poisson(q/S)`, redrawn until
/// `Σ q_s ≥ 1`.
pub fn sample_design<R: Rng + ?Sized>(d: usize, studies: usize, q: usize, rng: &mut R) -> Result<(Vec<usize>, Vec<usize>)> {
    if studies == 0 || d == 0 || q == 0 {
        return Err(SufaError::Config("d, q and the study count must be positive".into()));
    }
    let n_mean = d as f64 / studies as f64;
    let n_floor = n_mean.ceil() as usize;
    let pn = Poisson::new(n_mean).map_err(|e| SufaError::Config(e.to_string()))?;
    let n_s = (0..studies)
        .map(|_| (pn.sample(rng) as usize).max(n_floor))
        .collect();
    let pq = Poisson::new(q as f64 / studies as f64).map_err(|e| SufaError::Config(e.to_string()))?;
    let q_s = loop {
        let draw: Vec<usize> = (0..studies).map(|_| pq.sample(rng) as usize).collect();
        if draw.iter().sum::<usize>() >= 1 {
            break draw;
        }
    };
    Ok((n_s, q_s))
}

/// Everything needed to regenerate one synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub scenario: Scenario,
    pub mode: StudyMode,
    pub d: usize,
    pub q: usize,
    pub studies: usize,
    /// Multiplies every drawn `n_s`.
    pub n_multiplier: usize,
    pub delta: f64,
    pub seed: u64,
}

impl SimSpec {
    pub fn new(scenario: Scenario, mode: StudyMode, d: usize, q: usize, studies: usize, seed: u64) -> Self {
        SimSpec {
            scenario,
            mode,
            d,
            q,
            studies,
            n_multiplier: 1,
            delta: DEFAULT_DELTA,
            seed,
        }
    }
}

/// Ground truth of a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub lambda: DMatrix<f64>,
    pub phi: Vec<DMatrix<f64>>,
    pub delta: f64,
    pub n_s: Vec<usize>,
    pub q_s: Vec<usize>,
}

impl SimTruth {
    /// `ΛΛᵀ + Δ`.
    pub fn shared_covariance(&self) -> DMatrix<f64> {
        let d = self.lambda.nrows();
        &self.lambda * self.lambda.transpose() + DMatrix::identity(d, d) * self.delta
    }

    /// `ΛΛᵀ + Φ_sΦ_sᵀ + Δ`.
    pub fn study_covariance(&self, s: usize) -> DMatrix<f64> {
        self.shared_covariance() + &self.phi[s] * self.phi[s].transpose()
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub spec: SimSpec,
    pub truth: SimTruth,
    pub data: Vec<DMatrix<f64>>,
}

/// Draws design, loadings and data from `spec.seed`.
pub fn simulate(spec: &SimSpec) -> Result<SimulatedData> {
    if spec.n_multiplier == 0 {
        return Err(SufaError::Config("sample-size multiplier must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n_s, q_s) = sample_design(spec.d, spec.studies, spec.q, &mut rng)?;
    let n_s: Vec<usize> = n_s.iter().map(|n| n * spec.n_multiplier).collect();
    let lambda = gen_shared_loading(spec.scenario, spec.d, spec.q, &mut rng)?;
    let phi = gen_study_loadings(spec.mode, &lambda, &q_s, &mut rng)?;
    let data = simulate_msfa(&lambda, &phi, spec.delta, &n_s, &mut rng)?;
    Ok(SimulatedData {
        spec: spec.clone(),
        truth: SimTruth {
            lambda,
            phi,
            delta: spec.delta,
            n_s,
            q_s,
        },
        data,
    })
}

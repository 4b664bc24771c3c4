//! Identifiability checks and latent-dimension selection.
//!
//! Information switching happens exactly when the column spaces of the
//! `A_s` share a direction or when every `A_s` is rank deficient. Requiring
//! `Σ_s q_s ≤ q` rules it out almost surely under a continuous prior.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Result, SufaError};

/// Principal-angle tolerance for exact inputs.
pub const EXACT_TOL: f64 = 1e-8;
/// Looser tolerance for posterior draws.
pub const DIAGNOSTIC_TOL: f64 = 1e-4;

const OVERSAMPLE: usize = 10;
const MAX_POWER_ITERS: usize = 300;

/// `Σ_s q_s ≤ q`.
pub fn check_dimension_condition(q: usize, q_s: &[usize]) -> bool {
    q_s.iter().sum::<usize>() <= q
}

/// Orthonormal basis of `C(a)` keeping singular values above `tol·s_max`.
fn column_basis(a: &DMatrix<f64>, tol: f64) -> (DMatrix<f64>, usize) {
    if a.ncols() == 0 || a.nrows() == 0 {
        return (DMatrix::zeros(a.nrows(), 0), 0);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax > 0.0 && svd.singular_values[i] > tol * smax)
        .collect();
    let basis = DMatrix::from_fn(a.nrows(), keep.len(), |r, c| u[(r, keep[c])]);
    (basis, keep.len())
}

/// Numerical rank: singular values above `tol·s_max`.
pub fn numerical_rank(a: &DMatrix<f64>, tol: f64) -> usize {
    column_basis(a, tol).1
}

/// Dimension of `⋂_s C(A_s)`, intersecting one study at a time through the
/// cosines of principal angles.
pub fn column_space_intersection_dim(a: &[DMatrix<f64>], tol: f64) -> Result<usize> {
    let first = a
        .first()
        .ok_or_else(|| SufaError::Input("need at least one study matrix".into()))?;
    let q = first.nrows();
    if let Some(s) = a.iter().position(|m| m.nrows() != q) {
        return Err(SufaError::Input(format!(
            "A[{s}] has {} rows, expected {q}",
            a[s].nrows()
        )));
    }
    let (mut shared, _) = column_basis(first, tol);
    for m in &a[1..] {
        if shared.ncols() == 0 {
            return Ok(0);
        }
        let (basis, rank) = column_basis(m, tol);
        if rank == 0 {
            return Ok(0);
        }
        let cross = shared.tr_mul(&basis);
        let svd = cross.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > 1.0 - tol)
            .collect();
        let rot = DMatrix::from_fn(u.nrows(), keep.len(), |r, c| u[(r, keep[c])]);
        shared = &shared * rot;
    }
    Ok(shared.ncols())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchingReport {
    pub switching: bool,
    pub intersection_dim: usize,
    pub ranks: Vec<usize>,
    pub declared: Vec<usize>,
    /// Every `A_s` has numerical rank below its column count.
    pub all_rank_deficient: bool,
}

/// Information switching occurs iff the column spaces intersect or every
/// `A_s` is rank deficient.
pub fn detect_information_switching(a: &[DMatrix<f64>], tol: f64) -> Result<SwitchingReport> {
    let intersection_dim = column_space_intersection_dim(a, tol)?;
    let ranks: Vec<usize> = a.iter().map(|m| numerical_rank(m, tol)).collect();
    let declared: Vec<usize> = a.iter().map(|m| m.ncols()).collect();
    let all_rank_deficient = ranks.iter().zip(&declared).all(|(r, q)| r < q);
    Ok(SwitchingReport {
        switching: intersection_dim > 0 || all_rank_deficient,
        intersection_dim,
        ranks,
        declared,
        all_rank_deficient,
    })
}

/// Largest integer strictly below `(2d − √(8d+1))/2`.
pub fn rank_upper_bound(d: usize) -> usize {
    let d = d as f64;
    let bound = (2.0 * d - (8.0 * d + 1.0).sqrt()) / 2.0;
    if bound <= 0.0 {
        return 0;
    }
    (bound.ceil() - 1.0) as usize
}

/// Leading singular triplets.
#[derive(Debug, Clone)]
pub struct PartialSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

fn dense_top_k(x: &DMatrix<f64>, k: usize) -> PartialSvd {
    let svd = x.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    order.truncate(k);
    PartialSvd {
        u: DMatrix::from_fn(x.nrows(), k, |r, c| u[(r, order[c])]),
        singular_values: DVector::from_fn(k, |i, _| svd.singular_values[order[i]]),
        v: DMatrix::from_fn(x.ncols(), k, |r, c| vt[(order[c], r)]),
    }
}

/// Top-`k` singular triplets by randomized subspace iteration, iterated until
/// the leading singular values settle.
pub fn partial_svd<R: Rng + ?Sized>(x: &DMatrix<f64>, k: usize, rng: &mut R) -> Result<PartialSvd> {
    let (n, d) = x.shape();
    let m = n.min(d);
    if k == 0 || k > m {
        return Err(SufaError::Input(format!(
            "requested {k} singular values from a {n}x{d} matrix"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SufaError::Input("matrix has non-finite entries".into()));
    }
    let l = k + OVERSAMPLE;
    if l >= m {
        return Ok(dense_top_k(x, k));
    }
    let omega = DMatrix::from_fn(d, l, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut q = (x * omega).qr().q();
    let mut prev: Option<DVector<f64>> = None;
    let mut top = None;
    for _ in 0..MAX_POWER_ITERS {
        let z = x.tr_mul(&q).qr().q();
        q = (x * z).qr().q();
        let small = dense_top_k(&q.tr_mul(x), k);
        let sv = small.singular_values.clone();
        let settled = prev.as_ref().is_some_and(|p| {
            let scale = sv[0].max(f64::MIN_POSITIVE);
            (p - &sv).amax() <= 1e-14 * scale
        });
        prev = Some(sv);
        top = Some(small);
        if settled {
            break;
        }
    }
    let small = top.expect("at least one iteration");
    Ok(PartialSvd {
        u: &q * small.u,
        singular_values: small.singular_values,
        v: small.v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankSelection {
    pub q: usize,
    pub q_s: Vec<usize>,
    /// Cumulative share of total variance explained by the leading factors.
    pub explained: Vec<f64>,
    pub cap: usize,
}

/// Smallest `q̂` whose leading components explain at least `threshold` of the
/// total variance, capped at [`rank_upper_bound`]; `q̂_s = max(1, ⌊q̂/S⌋)`
/// unless that would break `Σ q̂_s ≤ q̂`, in which case every `q̂_s = 0`.
pub fn select_num_factors(
    pooled: &DMatrix<f64>,
    threshold: f64,
    num_studies: usize,
) -> Result<RankSelection> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(SufaError::Config(format!("threshold {threshold} outside (0, 1]")));
    }
    if num_studies == 0 {
        return Err(SufaError::Config("at least one study is required".into()));
    }
    let (n, d) = pooled.shape();
    let total = pooled.norm_squared();
    if n == 0 || !(total > 0.0) || !total.is_finite() {
        return Err(SufaError::Input("pooled data are empty, zero or non-finite".into()));
    }
    let cap = rank_upper_bound(d).min(n.min(d));
    if cap == 0 {
        return Err(SufaError::Input(format!(
            "d = {d} features with n = {n} rows leave no identifiable factor"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let svd = partial_svd(pooled, cap, &mut rng)?;
    let mut explained = Vec::with_capacity(cap);
    let mut acc = 0.0;
    for s in svd.singular_values.iter() {
        acc += s * s;
        explained.push(acc / total);
    }
    let q = explained
        .iter()
        .position(|&e| e >= threshold - 1e-12)
        .map(|i| i + 1)
        .unwrap_or(cap);
    let per = (q / num_studies).max(1);
    let q_s = if per * num_studies <= q {
        vec![per; num_studies]
    } else {
        vec![0; num_studies]
    };
    debug_assert!(check_dimension_condition(q, &q_s));
    Ok(RankSelection {
        q,
        q_s,
        explained,
        cap,
    })
}

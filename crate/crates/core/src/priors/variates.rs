//! Inverse-Gaussian and generalized inverse-Gaussian variates.
//!
//! The GIG density used throughout is `f(x) ∝ x^{p-1} exp(-(a x + b/x)/2)`.
//! Sampling reduces it to the two-parameter form
//! `x^{λ-1} exp(-ω(x + 1/x)/2)` with `λ = |p|`, `ω = √(ab)`, then picks one
//! of three rejection schemes whose acceptance rate is bounded away from zero
//! over the whole `(λ, ω)` quadrant:
//!
//! * ratio-of-uniforms with a mode shift for `λ > 2` or `ω > 3`,
//! * plain ratio-of-uniforms when `λ ≥ 1 − 2.25ω²` or `ω > 0.2`,
//! * a three-piece constant / power / exponential hat for the remaining
//!   corner (`λ < 1`, small `ω`), where the density is not log-concave.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SufaError};

/// Draws from the inverse-Gaussian `iG(mean, shape)` by the
/// Michael–Schucany–Haas transformation.
pub fn sample_inverse_gaussian<R: Rng + ?Sized>(mean: f64, shape: f64, rng: &mut R) -> Result<f64> {
    if !(mean > 0.0 && mean.is_finite() && shape > 0.0 && shape.is_finite()) {
        return Err(SufaError::Domain(format!(
            "inverse Gaussian needs positive finite mean and shape, got ({mean}, {shape})"
        )));
    }
    let nu: f64 = StandardNormal.sample(rng);
    let y = nu * nu;
    // Smaller root of the quadratic, written without cancellation:
    // μ(1 + r − √(r² + 2r)) = μ / (1 + r + √(r² + 2r)).
    let r = mean * y / (2.0 * shape);
    let x = mean / (1.0 + r + (r * (r + 2.0)).sqrt());
    let u: f64 = rng.random();
    let out = if u * (mean + x) <= mean { x } else { mean * mean / x };
    Ok(out)
}

/// Draws from `giG(p, a, b)` with density `∝ x^{p-1} e^{-(a x + b/x)/2}`.
pub fn sample_gig<R: Rng + ?Sized>(p: f64, a: f64, b: f64, rng: &mut R) -> Result<f64> {
    if !(p.is_finite() && a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
        return Err(SufaError::Domain(format!(
            "generalized inverse Gaussian needs finite p and positive finite a, b; got ({p}, {a}, {b})"
        )));
    }
    let lambda = p.abs();
    let omega = (a * b).sqrt();
    let scale = (b / a).sqrt();
    if !(omega.is_finite() && omega > 0.0 && scale.is_finite() && scale > 0.0) {
        return Err(SufaError::Domain(format!(
            "generalized inverse Gaussian parameters out of range: omega = {omega}, scale = {scale}"
        )));
    }
    let y = if lambda > 2.0 || omega > 3.0 {
        rou_shifted(lambda, omega, rng)
    } else if lambda >= 1.0 - 2.25 * omega * omega || omega > 0.2 {
        rou_unshifted(lambda, omega, rng)
    } else {
        three_piece_hat(lambda, omega, rng)
    };
    let x = if p < 0.0 { scale / y } else { scale * y };
    if !(x > 0.0 && x.is_finite()) {
        return Err(SufaError::numeric(format!(
            "giG({p}, {a}, {b}) produced a non-positive or non-finite draw"
        )));
    }
    Ok(x)
}

#[inline]
fn gig_mode(lambda: f64, omega: f64) -> f64 {
    if lambda >= 1.0 {
        (((lambda - 1.0) * (lambda - 1.0) + omega * omega).sqrt() + (lambda - 1.0)) / omega
    } else {
        omega / (((1.0 - lambda) * (1.0 - lambda) + omega * omega).sqrt() + (1.0 - lambda))
    }
}

/// `log √f(x)` for the standardized density.
#[inline]
fn half_log_density(x: f64, lambda: f64, omega: f64) -> f64 {
    0.5 * (lambda - 1.0) * x.ln() - 0.25 * omega * (x + 1.0 / x)
}

fn rou_unshifted<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let xm = gig_mode(lambda, omega);
    let nc = half_log_density(xm, lambda, omega);
    // argmax of x √f(x)
    let ym = ((lambda + 1.0) + ((lambda + 1.0) * (lambda + 1.0) + omega * omega).sqrt()) / omega;
    let um = (ym.ln() + half_log_density(ym, lambda, omega) - nc).exp();
    loop {
        let u = um * rng.random::<f64>();
        let v: f64 = rng.random();
        let x = u / v;
        if x > 0.0 && x.is_finite() && v.ln() <= half_log_density(x, lambda, omega) - nc {
            return x;
        }
    }
}

fn rou_shifted<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let xm = gig_mode(lambda, omega);
    let nc = half_log_density(xm, lambda, omega);
    // Extremes of (x − xm)√f(x) are the two positive roots of
    // x³ + c2 x² + c1 x + c0 = 0, found with the trigonometric formula.
    let c2 = -(2.0 * (lambda + 1.0) / omega + xm);
    let c1 = 2.0 * (lambda - 1.0) * xm / omega - 1.0;
    let c0 = xm;
    let pp = c1 - c2 * c2 / 3.0;
    let qq = 2.0 * c2 * c2 * c2 / 27.0 - c2 * c1 / 3.0 + c0;
    let arg = (-qq / (2.0 * (-(pp * pp * pp) / 27.0).sqrt())).clamp(-1.0, 1.0);
    let fi = arg.acos();
    let fak = 2.0 * (-pp / 3.0).sqrt();
    let y1 = fak * (fi / 3.0).cos() - c2 / 3.0;
    let y2 = fak * (fi / 3.0 + 4.0 / 3.0 * std::f64::consts::PI).cos() - c2 / 3.0;
    let uplus = (y1 - xm) * (half_log_density(y1, lambda, omega) - nc).exp();
    let uminus = (y2 - xm) * (half_log_density(y2, lambda, omega) - nc).exp();
    loop {
        let u = uminus + rng.random::<f64>() * (uplus - uminus);
        let v: f64 = rng.random();
        let x = u / v + xm;
        if x > 0.0 && x.is_finite() && v.ln() <= half_log_density(x, lambda, omega) - nc {
            return x;
        }
    }
}

/// Rejection from a hat that is constant on `(0, x0]`, `∝ x^{λ-1}` on
/// `[x0, 2/ω]` and `∝ e^{-ωx/2}` beyond. Valid for `0 ≤ λ < 1`.
fn three_piece_hat<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let log_f = |x: f64| (lambda - 1.0) * x.ln() - 0.5 * omega * (x + 1.0 / x);
    let xm = gig_mode(lambda, omega);
    let x0 = omega / (1.0 - lambda);
    let k0 = log_f(xm).exp();
    let a1 = k0 * x0;
    let tail_start = x0.max(2.0 / omega);
    let (k1, a2) = if x0 >= 2.0 / omega {
        (0.0, 0.0)
    } else {
        let k1 = (-omega).exp();
        let a2 = if lambda == 0.0 {
            k1 * (2.0 / (omega * x0)).ln()
        } else {
            k1 / lambda * ((2.0 / omega).powf(lambda) - x0.powf(lambda))
        };
        (k1, a2)
    };
    let k2 = tail_start.powf(lambda - 1.0);
    let a3 = k2 * 2.0 / omega * (-0.5 * omega * tail_start).exp();
    let total = a1 + a2 + a3;
    loop {
        let mut v = total * rng.random::<f64>();
        let (x, log_hat) = if v <= a1 {
            (x0 * v / a1, k0.ln())
        } else {
            v -= a1;
            if v <= a2 {
                let x = if lambda == 0.0 {
                    x0 * (v / k1).exp()
                } else {
                    (x0.powf(lambda) + v * lambda / k1).powf(1.0 / lambda)
                };
                (x, k1.ln() + (lambda - 1.0) * x.ln())
            } else {
                v -= a2;
                let inner = (-0.5 * omega * tail_start).exp() - v * omega / (2.0 * k2);
                let x = -2.0 / omega * inner.max(f64::MIN_POSITIVE).ln();
                (x, k2.ln() - 0.5 * omega * x)
            }
        };
        if !(x > 0.0 && x.is_finite()) {
            continue;
        }
        let u: f64 = rng.random();
        if u.ln() + log_hat <= log_f(x) {
            return x;
        }
    }
}

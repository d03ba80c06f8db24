//! Abel–Poisson kernels, their upward continuation, and the Sobolev `H_2`
//! inner products / norms among dictionary elements.
//!
//! Closed forms are used wherever they exist:
//!
//! ```text
//! P(x, eta)            = (1 - |x|^2) / (4 pi (1 + |x|^2 - 2 x.eta)^{3/2})
//! (T P(x,.))(sigma eta) = (sigma^2 - |x|^2) / (4 pi (sigma^2 + |x|^2 - 2 sigma x.eta)^{3/2})
//! ```
//!
//! The `H_2` pairings weight degree-`n` Fourier coefficients by `(n+0.5)^4`;
//! kernel/kernel pairings are infinite series truncated under a
//! [`SeriesControl`] stopping rule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dictionary::DictionaryElement;
use crate::error::{Error, Result};
use crate::spherical::{grad_solid_sh, sh_eval};
use crate::types::{add3, dot3, scale3, sub3, BallPoint, Vec3};

const FOUR_PI: f64 = 4.0 * PI;

/// Truncation policy for the `H_2` series: stop once `consecutive_small`
/// successive terms are each below `rel_floor` times the running sum.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SeriesControl {
    pub max_terms: usize,
    pub rel_floor: f64,
    pub consecutive_small: usize,
}

impl Default for SeriesControl {
    fn default() -> Self {
        // the term (2n+1)/(4 pi) (n+0.5)^4 rho^n decays geometrically but
        // slowly for rho near 0.98, hence the large cap
        SeriesControl {
            max_terms: 5000,
            rel_floor: 1e-14,
            consecutive_small: 3,
        }
    }
}

impl SeriesControl {
    /// Sums `term(n)` for `n = 0, 1, ...` under the stopping rule.
    /// `magnitude` maps a term to the size used in the convergence check.
    fn sum<T, F, M>(&self, mut zero: T, mut add: impl FnMut(&mut T, &T), mut term: F, magnitude: M) -> Result<T>
    where
        F: FnMut(usize) -> T,
        M: Fn(&T) -> f64,
    {
        let mut small_run = 0;
        for n in 0..self.max_terms {
            let t = term(n);
            let t_mag = magnitude(&t);
            add(&mut zero, &t);
            let sum_mag = magnitude(&zero);
            if t_mag <= self.rel_floor * sum_mag.max(f64::MIN_POSITIVE) {
                small_run += 1;
                if small_run >= self.consecutive_small {
                    return Ok(zero);
                }
            } else {
                small_run = 0;
            }
        }
        Err(Error::SeriesNotConverged {
            max_terms: self.max_terms,
        })
    }

    fn sum_scalar(&self, term: impl FnMut(usize) -> f64) -> Result<f64> {
        self.sum(0.0, |acc, t| *acc += *t, term, |v| v.abs())
    }

    fn sum_vec3(&self, term: impl FnMut(usize) -> Vec3) -> Result<Vec3> {
        self.sum(
            [0.0; 3],
            |acc, t| *acc = add3(*acc, *t),
            term,
            |v| crate::types::norm3(*v),
        )
    }
}

/// Abel–Poisson kernel value `P(x, eta)` on the sphere (closed form).
pub fn apk_eval(x: &BallPoint, eta: Vec3) -> f64 {
    let h2 = x.h() * x.h();
    let denom = 1.0 + h2 - 2.0 * dot3(x.coords(), eta);
    (1.0 - h2) / (FOUR_PI * denom.powf(1.5))
}

/// Upward-continued kernel value `(T P(x,.))(sigma eta)` (closed form).
///
/// `sigma = 1` reduces to [`apk_eval`]; values below 1 are rejected.
pub fn apk_upward(x: &BallPoint, eta: Vec3, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(apk_upward_unchecked(x.coords(), x.h() * x.h(), eta, sigma))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 1.0) {
        return Err(Error::domain("sigma", sigma, "satellite ratio must be >= 1"));
    }
    Ok(())
}

#[inline]
pub(crate) fn apk_upward_unchecked(x: Vec3, h2: f64, eta: Vec3, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let denom = s2 + h2 - 2.0 * sigma * dot3(x, eta);
    (s2 - h2) / (FOUR_PI * denom.powf(1.5))
}

/// Gradient of the upward-continued kernel value with respect to the kernel
/// parameter `x`.
pub fn apk_upward_grad(x: &BallPoint, eta: Vec3, sigma: f64) -> Result<Vec3> {
    check_sigma(sigma)?;
    Ok(apk_upward_grad_unchecked(x.coords(), x.h() * x.h(), eta, sigma))
}

#[inline]
pub(crate) fn apk_upward_grad_unchecked(x: Vec3, h2: f64, eta: Vec3, sigma: f64) -> Vec3 {
    let s2 = sigma * sigma;
    let denom = s2 + h2 - 2.0 * sigma * dot3(x, eta);
    let d32 = denom.powf(1.5);
    let d52 = d32 * denom;
    let mut g = [0.0; 3];
    for j in 0..3 {
        g[j] = -(1.0 / FOUR_PI)
            * (2.0 * x[j] / d32 + 3.0 * (s2 - h2) * (x[j] - sigma * eta[j]) / d52);
    }
    g
}

/// `(n + 0.5)^4` Sobolev weight.
#[inline]
fn w(n: usize) -> f64 {
    let v = n as f64 + 0.5;
    v * v * v * v
}

/// `H_2` inner product between two dictionary elements.
///
/// SH x SH pairs are diagonal, SH x kernel pairs are a single closed-form
/// term, kernel x kernel pairs are summed under `ctl`.
pub fn h2_inner(d1: &DictionaryElement, d2: &DictionaryElement, ctl: &SeriesControl) -> Result<f64> {
    use DictionaryElement::*;
    match (d1, d2) {
        (SphericalHarmonic(a), SphericalHarmonic(b)) => {
            Ok(if a == b { w(a.n()) } else { 0.0 })
        }
        (SphericalHarmonic(idx), AbelPoisson(x)) | (AbelPoisson(x), SphericalHarmonic(idx)) => {
            let h = x.h();
            if h == 0.0 && idx.degree > 0 {
                return Ok(0.0);
            }
            let hp = if idx.degree == 0 { 1.0 } else { h.powi(idx.degree as i32) };
            Ok(w(idx.n()) * hp * sh_eval(*idx, x.polar()))
        }
        (AbelPoisson(x1), AbelPoisson(x2)) => {
            let rho = x1.h() * x2.h();
            let u = dot3(x1.xi(), x2.xi()).clamp(-1.0, 1.0);
            // march P_n(u) and rho^n along with the sum
            let mut pm1 = 0.0;
            let mut p = 1.0;
            let mut rho_n = 1.0;
            ctl.sum_scalar(|n| {
                if n > 0 {
                    let nf = n as f64;
                    let next = ((2.0 * nf - 1.0) * u * p - (nf - 1.0) * pm1) / nf;
                    pm1 = p;
                    p = next;
                    rho_n *= rho;
                }
                w(n) * rho_n * (2.0 * n as f64 + 1.0) / FOUR_PI * p
            })
        }
    }
}

/// Squared `H_2` norm of an Abel–Poisson kernel:
/// `sum_n (2n+1)/(4 pi) (n+0.5)^4 |x|^{2n}`.
pub fn h2_norm_sq_apk(x: &BallPoint, ctl: &SeriesControl) -> Result<f64> {
    let rho = x.h() * x.h();
    let mut rho_n = 1.0;
    ctl.sum_scalar(|n| {
        if n > 0 {
            rho_n *= rho;
        }
        (2.0 * n as f64 + 1.0) / FOUR_PI * w(n) * rho_n
    })
}

/// Squared `H_2` norm of any dictionary element.
pub fn h2_norm_sq(d: &DictionaryElement, ctl: &SeriesControl) -> Result<f64> {
    match d {
        DictionaryElement::SphericalHarmonic(idx) => Ok(w(idx.n())),
        DictionaryElement::AbelPoisson(x) => h2_norm_sq_apk(x, ctl),
    }
}

/// Gradient of [`h2_norm_sq_apk`] with respect to `x`:
/// `sum_n (2n^2+n)/(2 pi) (n+0.5)^4 |x|^{2n-2} x`.
pub fn h2_norm_grad_apk(x: &BallPoint, ctl: &SeriesControl) -> Result<Vec3> {
    let rho = x.h() * x.h();
    // scalar series in |x|^{2n-2}, starting at n = 1
    let mut rho_nm1 = 1.0;
    let coeff = ctl.sum_scalar(|n| {
        if n == 0 {
            return 0.0;
        }
        if n > 1 {
            rho_nm1 *= rho;
        }
        let nf = n as f64;
        (2.0 * nf * nf + nf) / (2.0 * PI) * w(n) * rho_nm1
    })?;
    Ok(scale3(x.coords(), coeff))
}

/// Gradient with respect to `x` of the `H_2` inner product between a fixed
/// element `d_other` and the kernel `P(x, .)`.
pub fn h2_inner_grad_apk(
    d_other: &DictionaryElement,
    x: &BallPoint,
    ctl: &SeriesControl,
) -> Result<Vec3> {
    match d_other {
        DictionaryElement::SphericalHarmonic(idx) => {
            Ok(scale3(grad_solid_sh(*idx, x), w(idx.n())))
        }
        DictionaryElement::AbelPoisson(xi_elem) => {
            let hi = xi_elem.h();
            let xi_i = xi_elem.xi();
            let r = x.h();
            if r == 0.0 {
                // only the n = 1 term survives: grad(|x| P_1) -> xi_i
                return Ok(scale3(xi_i, w(1) * hi * 3.0 / FOUR_PI));
            }
            let xi = x.xi();
            let u = dot3(xi_i, xi).clamp(-1.0, 1.0);
            let tangential = sub3(xi_i, scale3(xi, u));
            // march P_n(u), P'_n(u), hi^n, r^{n-1}
            let mut pm1 = 0.0;
            let mut p = 1.0;
            let mut dpm1 = 0.0;
            let mut dp = 0.0;
            let mut hi_n = 1.0;
            let mut r_nm1 = 1.0 / r;
            ctl.sum_vec3(|n| {
                if n == 0 {
                    return [0.0; 3];
                }
                let nf = n as f64;
                let dnext = dpm1 + (2.0 * nf - 1.0) * p;
                let pnext = ((2.0 * nf - 1.0) * u * p - (nf - 1.0) * pm1) / nf;
                dpm1 = dp;
                dp = dnext;
                pm1 = p;
                p = pnext;
                hi_n *= hi;
                r_nm1 *= r;
                let grad_term = add3(scale3(xi, nf * p), scale3(tangential, dp));
                scale3(grad_term, w(n) * hi_n * (2.0 * nf + 1.0) / FOUR_PI * r_nm1)
            })
        }
    }
}

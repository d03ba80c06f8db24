//! Legendre polynomials, associated Legendre functions, fully normalized
//! spherical harmonics and the gradient building blocks for solid harmonics.
//!
//! All evaluations use three-term recurrences; nothing is obtained by naive
//! symbolic differentiation. The normalization convention is
//!
//! ```text
//! Y_{n,j}(phi, t) = sqrt((2n+1)/(4 pi) (n-|j|)!/(n+|j|)!) P_{n,|j|}(t)
//!                   * { sqrt(2) cos(j phi)  j < 0
//!                     { 1                   j = 0
//!                     { sqrt(2) sin(j phi)  j > 0
//! ```
//!
//! which makes the `Y_{n,j}` an `L^2(Omega)`-orthonormal system. The gradient
//! routines assemble Cartesian components from the radial/angular
//! decomposition in a form that stays finite at the poles `t = +-1`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::types::{add3, dot3, scale3, sub3, BallPoint, LocalBasis, PolarCoord, SHIndex, Vec3};

const FOUR_PI: f64 = 4.0 * PI;

fn check_t(t: f64) -> Result<f64> {
    if t.abs() > 1.0 + 1e-12 {
        return Err(Error::domain("t", t, "argument of Legendre functions must lie in [-1, 1]"));
    }
    Ok(t.clamp(-1.0, 1.0))
}

/// Legendre polynomial `P_n(t)` by the Bonnet recurrence. `P_n(1) = 1`
/// exactly for all `n`.
pub fn legendre_p(n: usize, t: f64) -> Result<f64> {
    let t = check_t(t)?;
    Ok(legendre_p_unchecked(n, t))
}

pub(crate) fn legendre_p_unchecked(n: usize, t: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => t,
        _ => {
            let mut pm1 = 1.0;
            let mut p = t;
            for k in 2..=n {
                let kf = k as f64;
                let next = ((2.0 * kf - 1.0) * t * p - (kf - 1.0) * pm1) / kf;
                pm1 = p;
                p = next;
            }
            p
        }
    }
}

/// Derivative `P_n'(t)` via `P_n' = P_{n-2}' + (2n-1) P_{n-1}`.
///
/// This form involves no division by `1 - t^2` and is finite at `t = +-1`,
/// where it reproduces the limit `P_n'(+-1) = (+-1)^{n+1} n(n+1)/2`.
pub fn legendre_p_deriv(n: usize, t: f64) -> Result<f64> {
    let t = check_t(t)?;
    Ok(legendre_p_deriv_unchecked(n, t))
}

pub(crate) fn legendre_p_deriv_unchecked(n: usize, t: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    // march P and P' together
    let mut pm1 = 1.0; // P_{k-1}
    let mut dm1 = 0.0; // P'_{k-1}
    let mut d = 1.0; // P'_k, starting at k = 1
    let mut p = t;
    for k in 2..=n {
        let kf = k as f64;
        let dnext = dm1 + (2.0 * kf - 1.0) * p;
        let pnext = ((2.0 * kf - 1.0) * t * p - (kf - 1.0) * pm1) / kf;
        dm1 = d;
        d = dnext;
        pm1 = p;
        p = pnext;
    }
    d
}

/// Associated Legendre function `P_{n,j}(t) = (1-t^2)^{j/2} d^j/dt^j P_n(t)`
/// (no Condon-Shortley phase), by the fixed-order forward recurrence in the
/// degree.
pub fn assoc_legendre(n: usize, j: usize, t: f64) -> Result<f64> {
    if j > n {
        return Err(Error::domain("j", j as f64, "order must satisfy 0 <= j <= n"));
    }
    let t = check_t(t)?;
    if j == 0 {
        return Ok(legendre_p_unchecked(n, t));
    }
    // P_{j,j} = (2j-1)!! (1-t^2)^{j/2}
    let s2 = (1.0 - t * t).max(0.0);
    let mut pjj = s2.powf(j as f64 / 2.0);
    for k in 1..=j {
        pjj *= 2.0 * k as f64 - 1.0;
    }
    if n == j {
        return Ok(pjj);
    }
    // (n-j) P_{n,j} = (2n-1) t P_{n-1,j} - (n+j-1) P_{n-2,j}
    let mut pm1 = pjj;
    let mut p = (2.0 * j as f64 + 1.0) * t * pjj;
    for k in (j + 2)..=n {
        let kf = k as f64;
        let jf = j as f64;
        let next = ((2.0 * kf - 1.0) * t * p - (kf + jf - 1.0) * pm1) / (kf - jf);
        pm1 = p;
        p = next;
    }
    Ok(p)
}

/// Fully normalized associated Legendre value
/// `sqrt((2n+1)/(4 pi) (n-m)!/(n+m)!) P_{n,m}(t)`.
///
/// Computed by the normalized column recurrence, which keeps every
/// intermediate on the scale of the result and is stable to degrees in the
/// hundreds (the naive factorial ratio under/overflows long before that).
pub fn pbar(n: usize, m: usize, t: f64) -> f64 {
    debug_assert!(m <= n);
    let s = (1.0 - t * t).max(0.0).sqrt();
    // seed: pbar_{m,m} = sqrt(1/(4 pi)) prod_{k=1..m} sqrt((2k+1)/(2k)) s^m
    let mut pmm = (1.0 / FOUR_PI).sqrt();
    for k in 1..=m {
        let kf = k as f64;
        pmm *= ((2.0 * kf + 1.0) / (2.0 * kf)).sqrt() * s;
    }
    column_recurrence(n, m, t, pmm)
}

/// `pbar(n, m, t) / sqrt(1-t^2)` for `m >= 1`, evaluated without the
/// division so that it stays finite at the poles.
pub(crate) fn pbar_over_sin(n: usize, m: usize, t: f64) -> f64 {
    debug_assert!((1..=n).contains(&m));
    let s = (1.0 - t * t).max(0.0).sqrt();
    // seed carries s^{m-1} instead of s^m
    let mut q = (3.0 / (2.0 * FOUR_PI)).sqrt();
    for k in 2..=m {
        let kf = k as f64;
        q *= ((2.0 * kf + 1.0) / (2.0 * kf)).sqrt() * s;
    }
    column_recurrence(n, m, t, q)
}

/// Forward recurrence in the degree at fixed order, starting from the
/// diagonal seed. Valid for any seed carrying the same `(1-t^2)` weight in
/// every term.
fn column_recurrence(n: usize, m: usize, t: f64, seed: f64) -> f64 {
    if n == m {
        return seed;
    }
    let mut pm1 = seed;
    let mut p = (2.0 * m as f64 + 3.0).sqrt() * t * seed;
    for k in (m + 2)..=n {
        let kf = k as f64;
        let mf = m as f64;
        let a = ((2.0 * kf + 1.0) * (2.0 * kf - 1.0) / ((kf - mf) * (kf + mf))).sqrt();
        let b = ((2.0 * kf + 1.0) * (kf + mf - 1.0) * (kf - mf - 1.0)
            / ((kf - mf) * (kf + mf) * (2.0 * kf - 3.0)))
            .sqrt();
        let next = a * t * p - b * pm1;
        pm1 = p;
        p = next;
    }
    p
}

fn trig_factor(j: i32, phi: f64) -> f64 {
    use std::cmp::Ordering::*;
    let jf = j as f64;
    match j.cmp(&0) {
        Less => std::f64::consts::SQRT_2 * (jf * phi).cos(),
        Equal => 1.0,
        Greater => std::f64::consts::SQRT_2 * (jf * phi).sin(),
    }
}

/// Fully normalized real spherical harmonic `Y_{n,j}` at a point on the
/// sphere.
pub fn sh_eval(idx: SHIndex, p: PolarCoord) -> f64 {
    pbar(idx.n(), idx.abs_order(), p.t) * trig_factor(idx.order, p.phi)
}

/// Longitudinal derivative `d/dphi Y_{n,j} = j Y_{n,-j}`.
pub fn sh_phi_derivative(idx: SHIndex, p: PolarCoord) -> f64 {
    if idx.order == 0 {
        return 0.0;
    }
    let flipped = SHIndex {
        degree: idx.degree,
        order: -idx.order,
    };
    idx.order as f64 * sh_eval(flipped, p)
}

/// Local orthonormal basis (up, East, North) at a point on the sphere.
pub fn local_basis(p: PolarCoord) -> LocalBasis {
    let s = (1.0 - p.t * p.t).max(0.0).sqrt();
    let (sin_phi, cos_phi) = p.phi.sin_cos();
    LocalBasis {
        e_r: [s * cos_phi, s * sin_phi, p.t],
        e_phi: [-sin_phi, cos_phi, 0.0],
        e_t: [-p.t * cos_phi, -p.t * sin_phi, s],
    }
}

/// Cartesian gradient of the solid harmonic `|x|^n Y_{n,j}(x/|x|)`.
///
/// Assembled from the radial/angular decomposition with the pole-safe
/// expansions of the two angular terms, so the result is finite for any `x`
/// strictly inside the unit ball, including points on the polar axis.
pub fn grad_solid_sh(idx: SHIndex, x: &BallPoint) -> Vec3 {
    let n = idx.n();
    if n == 0 {
        return [0.0; 3];
    }
    let r = x.h();
    let p = x.polar();
    let basis = local_basis(p);
    let k = idx.abs_order();
    let rpow = if n == 1 { 1.0 } else { r.powi(n as i32 - 2) * r };

    // radial part: n r^{n-1} Y_{n,j}
    let radial = n as f64 * pbar(n, k, p.t) * trig_factor(idx.order, p.phi);

    // longitudinal part: (j / sqrt(1-t^2)) Y_{n,-j}, pole-safe form
    let lon = if k == 0 {
        0.0
    } else {
        idx.order as f64 * pbar_over_sin(n, k, p.t) * trig_factor(-idx.order, p.phi)
    };

    // latitudinal part: sqrt(1-t^2) N_{n,|j|} P'_{n,|j|}(t), pole-safe form
    let mut lat = 0.0;
    if k < n {
        let nf = n as f64;
        let kf = k as f64;
        lat += ((nf - kf) * (nf + kf + 1.0)).sqrt() * pbar(n, k + 1, p.t);
    }
    if k > 0 {
        lat -= k as f64 * p.t * pbar_over_sin(n, k, p.t);
    }
    lat *= trig_factor(idx.order, p.phi);

    let mut g = scale3(basis.e_r, rpow * radial);
    g = add3(g, scale3(basis.e_phi, rpow * lon));
    add3(g, scale3(basis.e_t, rpow * lat))
}

/// Cartesian gradient of `|x|^n P_n(xi_i . x/|x|)` for a fixed unit vector
/// `xi_i`.
///
/// The angular contribution collapses to the tangential projection of
/// `xi_i`, so no polar coordinates are needed and the poles are harmless:
///
/// ```text
/// grad = r^{n-1} [ n P_n(u) xi + P_n'(u) (xi_i - u xi) ],   u = xi_i . xi
/// ```
pub fn grad_solid_legendre(n: usize, xi_i: Vec3, x: &BallPoint) -> Vec3 {
    if n == 0 {
        return [0.0; 3];
    }
    let r = x.h();
    if r == 0.0 {
        // r^n P_n(xi_i . xi) has gradient xi_i for n = 1 and vanishes to
        // first order for n >= 2
        return if n == 1 { xi_i } else { [0.0; 3] };
    }
    let xi = x.xi();
    let u = dot3(xi_i, xi).clamp(-1.0, 1.0);
    let pn = legendre_p_unchecked(n, u);
    let dpn = legendre_p_deriv_unchecked(n, u);
    let rpow = if n == 1 { 1.0 } else { r.powi(n as i32 - 1) };
    let tangential = sub3(xi_i, scale3(xi, u));
    scale3(add3(scale3(xi, n as f64 * pn), scale3(tangential, dpn)), rpow)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on
/// `P_n`; shared by quadrature oracles across the test suite.
#[cfg(test)]
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    use std::f64::consts::PI;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let p = legendre_p(n, x).unwrap();
            let dp = legendre_p_deriv(n, x).unwrap();
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let dp = legendre_p_deriv(n, x).unwrap();
        nodes.push(x);
        weights.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

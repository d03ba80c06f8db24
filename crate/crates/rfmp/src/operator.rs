//! Upward-continuation operator `T` mapping a field on the unit sphere to its
//! harmonic continuation on the satellite sphere of radius `sigma > 1`, and
//! the inverse-problem setup (grid, data vector, satellite ratio).
//!
//! On the basis elements the operator acts in closed form:
//!
//! * `(T Y_{n,j})(sigma eta) = sigma^{-n-1} Y_{n,j}(eta)`
//! * `(T P(x,.))(sigma eta) = (sigma^2 - |x|^2) / (4 pi (sigma^2 + |x|^2 - 2 sigma x.eta)^{3/2})`

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dictionary::DictionaryElement;
use crate::error::{Error, Result};
use crate::grid::SphereGrid;
use crate::kernel::apk_upward_unchecked;
use crate::spherical::sh_eval;
use crate::types::{PolarCoord, SHIndex, Vec3};

/// Inverse-problem instance: data `y` observed on `sigma * grid`.
#[derive(Clone, Debug)]
pub struct ProblemSetup {
    pub grid: SphereGrid,
    pub sigma: f64,
    pub y: Vec<f64>,
}

impl ProblemSetup {
    pub fn new(grid: SphereGrid, sigma: f64, y: Vec<f64>) -> Result<Self> {
        if !(sigma > 1.0) {
            return Err(Error::domain(
                "sigma",
                sigma,
                "satellite ratio must be > 1 for a downward-continuation problem",
            ));
        }
        if y.len() != grid.len() {
            return Err(Error::domain(
                "y.len",
                y.len() as f64,
                "data vector length must equal the grid size",
            ));
        }
        if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain("y", *bad, "data values must be finite"));
        }
        Ok(ProblemSetup { grid, sigma, y })
    }
}

/// `(T Y_{n,j})(sigma eta) = sigma^{-n-1} Y_{n,j}(eta)`.
pub fn upward_sh(idx: SHIndex, eta: Vec3, sigma: f64) -> f64 {
    sigma.powi(-(idx.degree as i32) - 1) * sh_eval(idx, PolarCoord::from_unit(eta))
}

/// Evaluates `T d` at every grid point, for any dictionary element.
pub fn apply_operator(d: &DictionaryElement, grid: &SphereGrid, sigma: f64) -> Vec<f64> {
    match d {
        DictionaryElement::SphericalHarmonic(idx) => {
            let decay = sigma.powi(-(idx.degree as i32) - 1);
            grid.points()
                .iter()
                .map(|eta| decay * sh_eval(*idx, PolarCoord::from_unit(*eta)))
                .collect()
        }
        DictionaryElement::AbelPoisson(x) => {
            let h2 = x.h() * x.h();
            let coords = x.coords();
            grid.points()
                .iter()
                .map(|eta| apk_upward_unchecked(coords, h2, *eta, sigma))
                .collect()
        }
    }
}

/// Evaluates the surface field `sum_k c_k d_k` (no upward continuation) at a
/// point on the unit sphere.
pub fn evaluate_surface(expansion: &[(DictionaryElement, f64)], eta: Vec3) -> f64 {
    let polar = PolarCoord::from_unit(eta);
    expansion
        .iter()
        .map(|(d, c)| {
            c * match d {
                DictionaryElement::SphericalHarmonic(idx) => sh_eval(*idx, polar),
                DictionaryElement::AbelPoisson(x) => crate::kernel::apk_eval(x, eta),
            }
        })
        .sum()
}

/// Synthesizes noiseless data `y_i = (T F)(sigma eta_i)` for an expansion.
pub fn synthesize_data(
    expansion: &[(DictionaryElement, f64)],
    grid: &SphereGrid,
    sigma: f64,
) -> Vec<f64> {
    let mut y = vec![0.0; grid.len()];
    for (d, c) in expansion {
        for (yi, ti) in y.iter_mut().zip(apply_operator(d, grid, sigma)) {
            *yi += c * ti;
        }
    }
    y
}

/// Adds centred Gaussian noise with standard deviation `level` times the RMS
/// of the data, reproducibly from `seed`.
pub fn add_noise(y: &mut [f64], level: f64, seed: u64) {
    if level == 0.0 || y.is_empty() {
        return;
    }
    let rms = (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt();
    let sd = level * rms;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in y.iter_mut() {
        // Box-Muller from two uniforms keeps us off distribution crates
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        *v += sd * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::reuter_grid;
    use crate::kernel::apk_eval;
    use crate::types::BallPoint;
    use std::f64::consts::PI;

    #[test]
    fn setup_validation() {
        let grid = reuter_grid(3).unwrap();
        let n = grid.len();
        assert!(ProblemSetup::new(grid.clone(), 1.0, vec![0.0; n]).is_err());
        assert!(ProblemSetup::new(grid.clone(), 1.06, vec![0.0; n + 1]).is_err());
        let mut y = vec![0.0; n];
        y[0] = f64::NAN;
        assert!(ProblemSetup::new(grid.clone(), 1.06, y).is_err());
        assert!(ProblemSetup::new(grid, 1.06, vec![0.0; n]).is_ok());
    }

    #[test]
    fn sh_decay_identity() {
        let idx = SHIndex::new(4, -2).unwrap();
        let eta = PolarCoord::new(1.1, 0.4).unwrap().to_unit();
        let sigma = 1.3;
        let surface = sh_eval(idx, PolarCoord::from_unit(eta));
        assert!((upward_sh(idx, eta, sigma) - surface / sigma.powi(5)).abs() < 1e-14);
    }

    /// Quadrature oracle: project the upward-continued kernel back onto
    /// `Y_{n,j}` over the satellite sphere; the coefficient must equal
    /// `sigma^{-n-1} h^n Y_{n,j}(xi)`.
    #[test]
    fn upward_kernel_fourier_coefficients() {
        let x = BallPoint::new([0.3, -0.2, 0.45]).unwrap();
        let sigma = 1.2;
        let n_gl = 60;
        let n_phi = 64;
        let (nodes, weights) = crate::spherical::gauss_legendre(n_gl);
        for (deg, ord) in [(0, 0), (1, 1), (3, -2), (5, 0)] {
            let idx = SHIndex::new(deg, ord).unwrap();
            let mut integral = 0.0;
            for (t, wt) in nodes.iter().zip(&weights) {
                for ip in 0..n_phi {
                    let phi = ip as f64 * 2.0 * PI / n_phi as f64;
                    let pc = PolarCoord::new(phi, *t).unwrap();
                    let eta = pc.to_unit();
                    integral += wt * (2.0 * PI / n_phi as f64)
                        * crate::kernel::apk_upward(&x, eta, sigma).unwrap()
                        * sh_eval(idx, pc);
                }
            }
            let expected = sigma.powi(-(deg as i32) - 1)
                * x.h().powi(deg as i32)
                * sh_eval(idx, x.polar());
            assert!(
                (integral - expected).abs() < 1e-10,
                "({deg},{ord}): {integral} vs {expected}"
            );
        }
    }

    #[test]
    fn apply_operator_matches_pointwise_forms() {
        let grid = reuter_grid(4).unwrap();
        let sigma = 1.06;
        let idx = SHIndex::new(2, 1).unwrap();
        let sh = DictionaryElement::SphericalHarmonic(idx);
        let ts = apply_operator(&sh, &grid, sigma);
        for (eta, t) in grid.points().iter().zip(&ts) {
            assert!((t - upward_sh(idx, *eta, sigma)).abs() < 1e-14);
        }
        let x = BallPoint::new([0.1, 0.5, -0.3]).unwrap();
        let apk = DictionaryElement::AbelPoisson(x);
        let ts = apply_operator(&apk, &grid, sigma);
        for (eta, t) in grid.points().iter().zip(&ts) {
            assert!((t - crate::kernel::apk_upward(&x, *eta, sigma).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn synthesize_is_linear() {
        let grid = reuter_grid(3).unwrap();
        let sigma = 1.1;
        let d1 = DictionaryElement::SphericalHarmonic(SHIndex::new(1, 0).unwrap());
        let d2 = DictionaryElement::AbelPoisson(BallPoint::new([0.0, 0.4, 0.2]).unwrap());
        let y1 = synthesize_data(&[(d1.clone(), 2.0)], &grid, sigma);
        let y2 = synthesize_data(&[(d2.clone(), -0.5)], &grid, sigma);
        let y12 = synthesize_data(&[(d1, 2.0), (d2, -0.5)], &grid, sigma);
        for i in 0..grid.len() {
            assert!((y12[i] - (y1[i] + y2[i])).abs() < 1e-13);
        }
    }

    #[test]
    fn evaluate_surface_matches_components() {
        let eta = PolarCoord::new(0.7, -0.2).unwrap().to_unit();
        let idx = SHIndex::new(3, 2).unwrap();
        let x = BallPoint::new([0.2, 0.2, 0.6]).unwrap();
        let expansion = vec![
            (DictionaryElement::SphericalHarmonic(idx), 1.5),
            (DictionaryElement::AbelPoisson(x), -0.25),
        ];
        let got = evaluate_surface(&expansion, eta);
        let expected = 1.5 * sh_eval(idx, PolarCoord::from_unit(eta)) - 0.25 * apk_eval(&x, eta);
        assert!((got - expected).abs() < 1e-13);
    }

    #[test]
    fn noise_is_reproducible_and_scaled() {
        let grid = reuter_grid(10).unwrap();
        let d = DictionaryElement::SphericalHarmonic(SHIndex::new(0, 0).unwrap());
        let clean = synthesize_data(&[(d, 1.0)], &grid, 1.06);
        let mut a = clean.clone();
        let mut b = clean.clone();
        add_noise(&mut a, 0.05, 42);
        add_noise(&mut b, 0.05, 42);
        assert_eq!(a, b);
        let mut c = clean.clone();
        add_noise(&mut c, 0.05, 43);
        assert_ne!(a, c);

        let rms = (clean.iter().map(|v| v * v).sum::<f64>() / clean.len() as f64).sqrt();
        let noise_rms = (a
            .iter()
            .zip(&clean)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / clean.len() as f64)
            .sqrt();
        assert!(noise_rms > 0.01 * rms && noise_rms < 0.15 * rms);

        let mut zero_level = clean.clone();
        add_noise(&mut zero_level, 0.0, 1);
        assert_eq!(zero_level, clean);
    }
}

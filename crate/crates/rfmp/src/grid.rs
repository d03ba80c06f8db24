//! Equidistributed Reuter point grids on the unit sphere.
//!
//! The construction places both poles plus latitude rings at polar angles
//! `theta_k = k pi / gamma`, with a ring-dependent number of equally spaced
//! longitudes chosen so that neighbouring points are roughly `pi / gamma`
//! apart. Point order is fixed (north pole, rings with increasing polar
//! angle, longitudes ascending, south pole) so grids are reproducible
//! byte-for-byte.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::types::{BallPoint, Vec3};

/// Ordered point set on the unit sphere generated by the Reuter scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereGrid {
    points: Vec<Vec3>,
    gamma: u32,
}

impl SphereGrid {
    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn gamma(&self) -> u32 {
        self.gamma
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Grid with an explicit point list; used for tiny hand-built test grids.
    pub fn from_points(points: Vec<Vec3>) -> Self {
        SphereGrid { points, gamma: 0 }
    }
}

/// Number of longitudes on the ring at polar angle `theta` for control
/// parameter `gamma`.
fn ring_count(gamma: u32, theta: f64) -> usize {
    let c = theta.cos();
    let s2 = (1.0 - c * c).max(f64::EPSILON);
    let arg = (((PI / gamma as f64).cos() - c * c) / s2).clamp(-1.0, 1.0);
    (2.0 * PI / arg.acos()).floor() as usize
}

/// Reuter grid for control parameter `gamma >= 2`.
pub fn reuter_grid(gamma: u32) -> Result<SphereGrid> {
    if gamma < 2 {
        return Err(Error::domain("gamma", gamma as f64, "Reuter parameter must be >= 2"));
    }
    let mut points = Vec::new();
    points.push([0.0, 0.0, 1.0]);
    for k in 1..gamma {
        let theta = k as f64 * PI / gamma as f64;
        let (sin_theta, cos_theta) = theta.sin_cos();
        let count = ring_count(gamma, theta);
        for l in 1..=count {
            // half-step offset keeps consecutive rings staggered
            let phi = (l as f64 - 0.5) * 2.0 * PI / count as f64;
            points.push([sin_theta * phi.cos(), sin_theta * phi.sin(), cos_theta]);
        }
    }
    points.push([0.0, 0.0, -1.0]);
    Ok(SphereGrid { points, gamma })
}

/// Cartesian product `{r xi : r in radii, xi in grid}` in radius-major
/// order, as kernel parameters inside the unit ball.
pub fn grid_with_radii(grid: &SphereGrid, radii: &[f64]) -> Result<Vec<BallPoint>> {
    let mut out = Vec::with_capacity(radii.len() * grid.len());
    for &r in radii {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::domain("radius", r, "kernel radii must lie in (0, 1)"));
        }
        for xi in grid.points() {
            out.push(BallPoint::new([r * xi[0], r * xi[1], r * xi[2]])?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{dot3, norm3};
    use proptest::prelude::*;

    #[test]
    fn gamma_two_is_octahedral() {
        let g = reuter_grid(2).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.points()[0], [0.0, 0.0, 1.0]);
        assert_eq!(g.points()[5], [0.0, 0.0, -1.0]);
        // four equatorial points at half-step longitudes
        for p in &g.points()[1..5] {
            assert!(p[2].abs() < 1e-15);
        }
    }

    #[test]
    fn counts_bracket_reference_grids() {
        let n30 = reuter_grid(30).unwrap().len();
        assert!((1100..=1200).contains(&n30), "gamma=30 gives {n30}");
        let n100 = reuter_grid(100).unwrap().len();
        assert!((12600..=12800).contains(&n100), "gamma=100 gives {n100}");
    }

    #[test]
    fn rejects_degenerate_gamma() {
        assert!(reuter_grid(0).is_err());
        assert!(reuter_grid(1).is_err());
    }

    #[test]
    fn count_strictly_increasing_in_gamma() {
        let mut prev = 0;
        for gamma in 2..=40 {
            let n = reuter_grid(gamma).unwrap().len();
            assert!(n > prev, "gamma={gamma}: {n} <= {prev}");
            prev = n;
        }
    }

    #[test]
    fn determinism() {
        let a = reuter_grid(17).unwrap();
        let b = reuter_grid(17).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn equidistribution_proxy() {
        for gamma in [10u32, 30, 100] {
            let g = reuter_grid(gamma).unwrap();
            let pts = g.points();
            let mut min_nn = f64::INFINITY;
            let mut max_nn: f64 = 0.0;
            for (i, p) in pts.iter().enumerate() {
                let mut nearest = f64::INFINITY;
                for (j, q) in pts.iter().enumerate() {
                    if i != j {
                        let d = dot3(*p, *q).clamp(-1.0, 1.0).acos();
                        nearest = nearest.min(d);
                    }
                }
                min_nn = min_nn.min(nearest);
                max_nn = max_nn.max(nearest);
            }
            assert!(
                max_nn / min_nn < 2.5,
                "gamma={gamma}: nearest-neighbour ratio {}",
                max_nn / min_nn
            );
        }
    }

    #[test]
    fn radii_product() {
        let g = reuter_grid(2).unwrap();
        let pts = grid_with_radii(&g, &[0.5]).unwrap();
        assert_eq!(pts.len(), 6);
        for p in &pts {
            assert!((p.h() - 0.5).abs() < 1e-14);
        }
        assert!(grid_with_radii(&g, &[]).unwrap().is_empty());
        assert!(grid_with_radii(&g, &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn all_points_unit_and_distinct(gamma in 2u32..25) {
            let g = reuter_grid(gamma).unwrap();
            for p in g.points() {
                prop_assert!((norm3(*p) - 1.0).abs() < 1e-14);
            }
            for i in 0..g.len() {
                for j in (i + 1)..g.len() {
                    prop_assert!(norm3(crate::types::sub3(g.points()[i], g.points()[j])) > 1e-9);
                }
            }
        }
    }
}

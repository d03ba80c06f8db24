//! Shared domain types: spherical-harmonic indices, polar coordinates,
//! kernel parameters inside the unit ball and the local orthonormal basis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Plain 3-vector. All geometry in this crate is small and fixed-size, so a
/// bare array with free helper functions keeps the hot loops allocation-free.
pub type Vec3 = [f64; 3];

pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Degree/order pair `(n, j)` of a fully normalized spherical harmonic,
/// with `|j| <= n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SHIndex {
    pub degree: u32,
    pub order: i32,
}

impl SHIndex {
    pub fn new(degree: u32, order: i32) -> Result<Self> {
        if order.unsigned_abs() > degree {
            return Err(Error::domain(
                "order",
                order as f64,
                "|order| must not exceed degree",
            ));
        }
        Ok(SHIndex { degree, order })
    }

    pub fn n(&self) -> usize {
        self.degree as usize
    }

    pub fn abs_order(&self) -> usize {
        self.order.unsigned_abs() as usize
    }
}

impl std::fmt::Display for SHIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.degree, self.order)
    }
}

/// Point on the unit sphere in polar coordinates: longitude `phi` in radians
/// and `t = cos(polar angle)` in `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarCoord {
    pub phi: f64,
    pub t: f64,
}

impl PolarCoord {
    pub fn new(phi: f64, t: f64) -> Result<Self> {
        if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&t) {
            return Err(Error::domain("t", t, "t must lie in [-1, 1]"));
        }
        Ok(PolarCoord {
            phi,
            t: t.clamp(-1.0, 1.0),
        })
    }

    /// Polar coordinates of a (not necessarily unit) direction vector.
    pub fn from_unit(xi: Vec3) -> Self {
        let r = norm3(xi);
        let t = if r > 0.0 { (xi[2] / r).clamp(-1.0, 1.0) } else { 1.0 };
        let phi = xi[1].atan2(xi[0]).rem_euclid(2.0 * std::f64::consts::PI);
        PolarCoord { phi, t }
    }

    /// Cartesian unit vector for these coordinates.
    pub fn to_unit(self) -> Vec3 {
        let s = (1.0 - self.t * self.t).max(0.0).sqrt();
        [s * self.phi.cos(), s * self.phi.sin(), self.t]
    }
}

/// Kernel parameter `x = h xi` strictly inside the unit ball. `h = |x|` is the
/// localization and `xi = x/|x|` the centre direction of the kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallPoint {
    x: Vec3,
}

impl BallPoint {
    pub fn new(x: Vec3) -> Result<Self> {
        let h = norm3(x);
        if !(h < 1.0) {
            return Err(Error::domain("|x|", h, "kernel parameter must satisfy |x| < 1"));
        }
        Ok(BallPoint { x })
    }

    pub fn coords(&self) -> Vec3 {
        self.x
    }

    /// Localization parameter `h = |x|`.
    pub fn h(&self) -> f64 {
        norm3(self.x)
    }

    /// Centre direction `x/|x|`; the north pole if `x = 0`.
    pub fn xi(&self) -> Vec3 {
        let h = self.h();
        if h > 0.0 {
            scale3(self.x, 1.0 / h)
        } else {
            [0.0, 0.0, 1.0]
        }
    }

    pub fn polar(&self) -> PolarCoord {
        PolarCoord::from_unit(self.xi())
    }
}

/// Local orthonormal basis (up, East, North) attached to a point on the
/// sphere.
#[derive(Clone, Copy, Debug)]
pub struct LocalBasis {
    pub e_r: Vec3,
    pub e_phi: Vec3,
    pub e_t: Vec3,
}

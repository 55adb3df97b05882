//! Four-vectors and the two-body decay kinematics used by the shower.

use std::ops::{Add, Neg, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Energy-momentum vector `(E, px, py, pz)` in GeV.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct FourVector {
    pub e: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
}

impl FourVector {
    pub const ZERO: FourVector = FourVector {
        e: 0.0,
        px: 0.0,
        py: 0.0,
        pz: 0.0,
    };

    pub const fn new(e: f64, px: f64, py: f64, pz: f64) -> Self {
        Self { e, px, py, pz }
    }

    /// Vector at rest with the given squared mass.
    pub fn at_rest(t: f64) -> Self {
        Self::new(t.sqrt(), 0.0, 0.0, 0.0)
    }

    pub fn momentum(&self) -> [f64; 3] {
        [self.px, self.py, self.pz]
    }

    pub fn momentum_sq(&self) -> f64 {
        self.px * self.px + self.py * self.py + self.pz * self.pz
    }

    /// Squared invariant mass `E² − |p|²` in GeV².
    pub fn squared_mass(&self) -> f64 {
        squared_mass(self)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.e, self.px, self.py, self.pz]
    }
}

impl From<[f64; 4]> for FourVector {
    fn from(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl From<FourVector> for [f64; 4] {
    fn from(v: FourVector) -> Self {
        v.to_array()
    }
}

impl Add for FourVector {
    type Output = FourVector;
    fn add(self, o: FourVector) -> FourVector {
        FourVector::new(self.e + o.e, self.px + o.px, self.py + o.py, self.pz + o.pz)
    }
}

impl Sub for FourVector {
    type Output = FourVector;
    fn sub(self, o: FourVector) -> FourVector {
        FourVector::new(self.e - o.e, self.px - o.px, self.py - o.py, self.pz - o.pz)
    }
}

impl Neg for FourVector {
    type Output = FourVector;
    fn neg(self) -> FourVector {
        FourVector::new(-self.e, -self.px, -self.py, -self.pz)
    }
}

impl std::iter::Sum for FourVector {
    fn sum<I: Iterator<Item = FourVector>>(iter: I) -> FourVector {
        iter.fold(FourVector::ZERO, |a, b| a + b)
    }
}

/// Squared mass `t(z) = E² − |p|²`.
pub fn squared_mass(z: &FourVector) -> f64 {
    z.e * z.e - z.momentum_sq()
}

/// Uniform direction on the unit two-sphere.
pub fn sample_unit_sphere<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let cos_theta: f64 = 2.0 * rng.random::<f64>() - 1.0;
    let phi: f64 = std::f64::consts::TAU * rng.random::<f64>();
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    [sin_theta * phi.cos(), sin_theta * phi.sin(), cos_theta]
}

/// Decay of a parent of squared mass `t_parent` at rest into children of
/// squared masses `t_l` and `t_r`, back to back along `direction`.
///
/// The left child carries `+|p|·direction`, the right child the opposite.
pub fn two_body_decay(
    t_parent: f64,
    t_l: f64,
    t_r: f64,
    direction: [f64; 3],
) -> Result<(FourVector, FourVector)> {
    if !(t_parent > 0.0) {
        return Err(Error::Domain(format!(
            "two-body decay needs a positive parent mass, got t = {t_parent}"
        )));
    }
    let s = t_parent;
    let sqrt_s = s.sqrt();
    let e_l = 0.5 * sqrt_s * (1.0 + t_l / s - t_r / s);
    let e_r = 0.5 * sqrt_s * (1.0 + t_r / s - t_l / s);
    let radicand = 1.0 - 2.0 * (t_l + t_r) / s + (t_l - t_r) * (t_l - t_r) / (s * s);
    if radicand < -1e-12 {
        return Err(Error::Domain(format!(
            "children (t_l = {t_l}, t_r = {t_r}) are too heavy for parent t = {t_parent}"
        )));
    }
    let p = 0.5 * sqrt_s * radicand.max(0.0).sqrt();
    let [dx, dy, dz] = direction;
    let left = FourVector::new(e_l, p * dx, p * dy, p * dz);
    let right = FourVector::new(e_r, -p * dx, -p * dy, -p * dz);
    Ok((left, right))
}

/// Boost a rest-frame vector into the frame where the parent has
/// four-momentum `parent_lab`.
///
/// Uses `γ = E_p/√t_p` and `γβ = p_p/√t_p`; the parent must be timelike.
pub fn lorentz_boost(z_rest: &FourVector, parent_lab: &FourVector) -> Result<FourVector> {
    let t_p = parent_lab.squared_mass();
    if !(t_p > 0.0) || parent_lab.e <= 0.0 {
        return Err(Error::Domain(format!(
            "boost needs a timelike parent with positive energy, got t = {t_p}"
        )));
    }
    let m = t_p.sqrt();
    let [ppx, ppy, ppz] = parent_lab.momentum();
    let k_dot_p = z_rest.px * ppx + z_rest.py * ppy + z_rest.pz * ppz;
    let e = (z_rest.e * parent_lab.e + k_dot_p) / m;
    let coef = k_dot_p / (m * (parent_lab.e + m)) + z_rest.e / m;
    Ok(FourVector::new(
        e,
        z_rest.px + coef * ppx,
        z_rest.py + coef * ppy,
        z_rest.pz + coef * ppz,
    ))
}

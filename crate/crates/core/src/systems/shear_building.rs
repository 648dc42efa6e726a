//! Two-storey shear building under ground acceleration.
//!
//! State layout is `[x1, x2, v1, v2]` (floor displacements relative to the
//! ground, then floor velocities). All quantities are SI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the ground motion enters the floor equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuildingForcing {
    /// One ground acceleration `b` loads both floors as `-m b`.
    #[default]
    Ground,
    /// Separate signals `b1`, `b2` load the first and second storey.
    PerStorey,
}

impl BuildingForcing {
    pub fn n_signals(self) -> usize {
        match self {
            BuildingForcing::Ground => 1,
            BuildingForcing::PerStorey => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShearBuildingParams {
    /// kg
    pub mass_per_floor: f64,
    /// Interstorey stiffness, N/m.
    pub stiffness: f64,
    /// N s/m
    pub damping_1: f64,
    /// N s/m
    pub damping_2: f64,
}

/// Eigenvalues of the normalised stiffness pattern `[[2, -1], [-1, 1]]`,
/// ascending.
fn pattern_eigenvalues() -> [f64; 2] {
    let r = 5f64.sqrt();
    [(3.0 - r) / 2.0, (3.0 + r) / 2.0]
}

impl ShearBuildingParams {
    pub fn new(mass_per_floor: f64, stiffness: f64, damping_1: f64, damping_2: f64) -> Result<Self> {
        let p = Self {
            mass_per_floor,
            stiffness,
            damping_1,
            damping_2,
        };
        p.validate()?;
        Ok(p)
    }

    /// Builds parameters whose two modal damping ratios both equal `ratio`.
    ///
    /// Each mode `i` contributes one linear equation
    /// `c1 phi_i1^2 + c2 phi_i2^2 = 2 omega_i m |phi_i|^2 ratio`; the 2x2 system
    /// is solved for `(c1, c2)`.
    pub fn with_modal_damping(mass_per_floor: f64, stiffness: f64, ratio: f64) -> Result<Self> {
        if !(mass_per_floor > 0.0 && stiffness > 0.0 && ratio >= 0.0) {
            return Err(Error::invalid(
                "modal damping requires positive mass and stiffness and a non-negative ratio",
            ));
        }
        let (omegas, shapes) = Self::modes_of(mass_per_floor, stiffness);
        let mut a = [[0.0; 2]; 2];
        let mut rhs = [0.0; 2];
        for i in 0..2 {
            let [p1, p2] = shapes[i];
            a[i] = [p1 * p1, p2 * p2];
            rhs[i] = 2.0 * omegas[i] * mass_per_floor * (p1 * p1 + p2 * p2) * ratio;
        }
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let c1 = (rhs[0] * a[1][1] - a[0][1] * rhs[1]) / det;
        let c2 = (a[0][0] * rhs[1] - rhs[0] * a[1][0]) / det;
        // For this stiffness pattern the exact c2 is zero; drop round-off.
        let clean = |c: f64| if c.abs() < 1e-12 * (c1.abs() + c2.abs()) { 0.0 } else { c };
        let (c1, c2) = (clean(c1), clean(c2));
        Self::new(mass_per_floor, stiffness, c1, c2)
    }

    /// Same mass and damping coefficients, different stiffness.
    pub fn with_stiffness(&self, stiffness: f64) -> Result<Self> {
        Self::new(self.mass_per_floor, stiffness, self.damping_1, self.damping_2)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mass_per_floor > 0.0
            && self.stiffness > 0.0
            && self.damping_1 >= 0.0
            && self.damping_2 >= 0.0
            && [self.mass_per_floor, self.stiffness, self.damping_1, self.damping_2]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("shear building parameters out of range: {self:?}")))
        }
    }

    fn modes_of(mass: f64, stiffness: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let lambdas = pattern_eigenvalues();
        let omegas = lambdas.map(|l| (stiffness * l / mass).sqrt());
        // (2 - l) phi1 - phi2 = 0
        let shapes = lambdas.map(|l| [1.0, 2.0 - l]);
        (omegas, shapes)
    }

    /// Natural circular frequencies (rad/s), ascending.
    pub fn natural_frequencies(&self) -> [f64; 2] {
        Self::modes_of(self.mass_per_floor, self.stiffness).0
    }

    /// Unnormalised mode shapes matching [`Self::natural_frequencies`].
    pub fn mode_shapes(&self) -> [[f64; 2]; 2] {
        Self::modes_of(self.mass_per_floor, self.stiffness).1
    }

    /// Modal damping ratios implied by the diagonal damping matrix.
    pub fn modal_damping_ratios(&self) -> [f64; 2] {
        let (omegas, shapes) = Self::modes_of(self.mass_per_floor, self.stiffness);
        let mut out = [0.0; 2];
        for i in 0..2 {
            let [p1, p2] = shapes[i];
            out[i] = (self.damping_1 * p1 * p1 + self.damping_2 * p2 * p2)
                / (2.0 * omegas[i] * self.mass_per_floor * (p1 * p1 + p2 * p2));
        }
        out
    }

    /// First-order right-hand side with a single ground acceleration `b`.
    pub fn rhs(&self, state: &[f64], b: f64) -> Result<[f64; 4]> {
        self.rhs_per_storey(state, b, b)
    }

    /// First-order right-hand side with distinct storey loads `b1`, `b2`.
    pub fn rhs_per_storey(&self, state: &[f64], b1: f64, b2: f64) -> Result<[f64; 4]> {
        if state.len() != 4 {
            return Err(Error::shape(format!("building state has {} entries, expected 4", state.len())));
        }
        if !state.iter().chain([&b1, &b2]).all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite building state or forcing"));
        }
        let [x1, x2, v1, v2] = [state[0], state[1], state[2], state[3]];
        let (m, k) = (self.mass_per_floor, self.stiffness);
        Ok([
            v1,
            v2,
            (-self.damping_1 * v1 - k * (2.0 * x1 - x2)) / m - b1,
            (-self.damping_2 * v2 - k * (x2 - x1)) / m - b2,
        ])
    }

    pub fn rhs_with(&self, mode: BuildingForcing, state: &[f64], forcing: &[f64]) -> Result<[f64; 4]> {
        if forcing.len() != mode.n_signals() {
            return Err(Error::shape(format!(
                "building forcing has {} signals, mode {mode:?} expects {}",
                forcing.len(),
                mode.n_signals()
            )));
        }
        match mode {
            BuildingForcing::Ground => self.rhs(state, forcing[0]),
            BuildingForcing::PerStorey => self.rhs_per_storey(state, forcing[0], forcing[1]),
        }
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::{Matrix2, SymmetricEigen};

    use super::*;

    const M: f64 = 6.25e5;
    const K: f64 = 1e9;

    #[test]
    fn equilibrium_is_fixed_point() {
        let p = ShearBuildingParams::with_modal_damping(M, K, 0.01).unwrap();
        assert_eq!(p.rhs(&[0.0; 4], 0.0).unwrap(), [0.0; 4]);
    }

    #[test]
    fn undamped_unit_displacement() {
        let p = ShearBuildingParams::new(M, K, 0.0, 0.0).unwrap();
        let d = p.rhs(&[1.0, 0.0, 0.0, 0.0], 0.0).unwrap();
        assert_eq!(d, [0.0, 0.0, -3200.0, 1600.0]);
    }

    #[test]
    fn modal_damping_matches_generalized_eigenproblem() {
        let p = ShearBuildingParams::with_modal_damping(M, K, 0.01).unwrap();
        assert!(p.damping_1 > 0.0 && p.damping_2 >= 0.0);

        // Independent route: mass-normalised eigenvectors of M^-1 K.
        let kmat = Matrix2::new(2.0 * K, -K, -K, K) / M;
        let eig = SymmetricEigen::new(kmat);
        let c = Matrix2::new(p.damping_1, 0.0, 0.0, p.damping_2);
        for i in 0..2 {
            let omega = eig.eigenvalues[i].sqrt();
            let phi = eig.eigenvectors.column(i);
            let num = (phi.transpose() * c * phi)[(0, 0)];
            let den = 2.0 * omega * M * phi.norm_squared();
            assert!(((num / den) - 0.01).abs() < 1e-8 * 0.01, "mode {i}: {}", num / den);
        }
        for r in p.modal_damping_ratios() {
            assert!((r - 0.01).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ShearBuildingParams::new(0.0, K, 0.0, 0.0).is_err());
        assert!(ShearBuildingParams::new(M, K, -1.0, 0.0).is_err());
        let p = ShearBuildingParams::new(M, K, 1.0, 1.0).unwrap();
        assert!(p.rhs(&[f64::NAN, 0.0, 0.0, 0.0], 0.0).is_err());
        assert!(p.rhs(&[0.0; 3], 0.0).is_err());
    }

    #[test]
    fn per_storey_reduces_to_ground_when_equal() {
        let p = ShearBuildingParams::with_modal_damping(M, K, 0.01).unwrap();
        let s = [1e-3, -2e-3, 0.1, 0.05];
        assert_eq!(p.rhs(&s, 0.7).unwrap(), p.rhs_per_storey(&s, 0.7, 0.7).unwrap());
    }

    #[test]
    fn free_vibration_follows_modal_envelope() {
        use crate::systems::{integrate, Method};
        let p = ShearBuildingParams::with_modal_damping(M, K, 0.01).unwrap();
        let omegas = p.natural_frequencies();
        let shapes = p.mode_shapes();
        for mode in 0..2 {
            let phi = shapes[mode];
            let omega = omegas[mode];
            let period = 2.0 * std::f64::consts::PI / omega;
            let steps_per_period = 400;
            let dt = period / steps_per_period as f64;
            let x0 = [1e-3 * phi[0], 1e-3 * phi[1], 0.0, 0.0];
            let traj = integrate(
                |x, _b, out| {
                    out.copy_from_slice(&p.rhs(x, 0.0)?);
                    Ok(())
                },
                &x0,
                &[],
                dt,
                5 * steps_per_period,
                Method::Rk4,
            )
            .unwrap();
            let norm = phi[0] * phi[0] + phi[1] * phi[1];
            let wd = omega * (1.0f64 - 1e-4).sqrt();
            for n in 1..=5 {
                let j = n * steps_per_period;
                let s = traj.states.row(j);
                let q = (phi[0] * s[0] + phi[1] * s[1]) / norm;
                let qd = (phi[0] * s[2] + phi[1] * s[3]) / norm;
                let amp = (q * q + ((qd + 0.01 * omega * q) / wd).powi(2)).sqrt() / 1e-3;
                let expect = (-0.01 * omega * traj.times[j]).exp();
                assert!((amp / expect - 1.0).abs() < 0.01, "mode {mode} period {n}: {amp} vs {expect}");
            }
        }
    }
}

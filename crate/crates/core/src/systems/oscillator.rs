//! Two coupled oscillators with quadratic coupling and a cubic spring on
//! the second one. State layout is `[z1, dz1, z2, dz2]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledOscillatorParams {
    pub m1: f64,
    pub m2: f64,
    pub k1: f64,
    pub k2: f64,
    pub c1: f64,
    pub c2: f64,
    /// Linear coupling.
    pub alpha: f64,
    /// Quadratic coupling.
    pub beta: f64,
    /// Cubic stiffness of the second oscillator.
    pub gamma: f64,
}

/// Which oscillator constants a parameter vector overrides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OscillatorParameter {
    K2,
    Alpha,
    Beta,
}

impl CoupledOscillatorParams {
    /// Nominal dimensionless constants with the given hidden stiffness.
    pub fn nominal(k2: f64) -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            k1: 1.0,
            k2,
            c1: 2e-2,
            c2: 1.95e-2,
            alpha: -1e-1,
            beta: 2e-3,
            gamma: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.m1, self.m2, self.k1, self.k2, self.c1, self.c2, self.alpha, self.beta, self.gamma,
        ];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite oscillator parameter"));
        }
        if !(self.m1 > 0.0 && self.m2 > 0.0 && self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::invalid(format!("oscillator masses and stiffnesses must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn set(&mut self, which: OscillatorParameter, value: f64) {
        match which {
            OscillatorParameter::K2 => self.k2 = value,
            OscillatorParameter::Alpha => self.alpha = value,
            OscillatorParameter::Beta => self.beta = value,
        }
    }

    pub fn get(&self, which: OscillatorParameter) -> f64 {
        match which {
            OscillatorParameter::K2 => self.k2,
            OscillatorParameter::Alpha => self.alpha,
            OscillatorParameter::Beta => self.beta,
        }
    }

    pub fn rhs(&self, state: &[f64]) -> Result<[f64; 4]> {
        if state.len() != 4 {
            return Err(Error::shape(format!("oscillator state has {} entries, expected 4", state.len())));
        }
        if !state.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite oscillator state"));
        }
        let [z1, v1, z2, v2] = [state[0], state[1], state[2], state[3]];
        Ok([
            v1,
            (-self.c1 * v1 - self.k1 * z1 - self.alpha * z2) / self.m1,
            v2,
            (-self.c2 * v2 - self.k2 * z2 - self.gamma * z2 * z2 * z2 - self.alpha * z1 - self.beta * z1 * z1)
                / self.m2,
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium() {
        let p = CoupledOscillatorParams::nominal(1.44);
        assert_eq!(p.rhs(&[0.0; 4]).unwrap(), [0.0; 4]);
    }

    #[test]
    fn unit_first_displacement() {
        let p = CoupledOscillatorParams::nominal(1.44);
        let d = p.rhs(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(d[0], 0.0);
        assert!((d[1] + 1.0).abs() < 1e-15);
        assert_eq!(d[2], 0.0);
        assert!((d[3] - 0.098).abs() < 1e-15);
    }

    #[test]
    fn unit_second_displacement() {
        let p = CoupledOscillatorParams::nominal(1.44);
        let d = p.rhs(&[0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 0.1).abs() < 1e-15);
        assert_eq!(d[2], 0.0);
        assert!((d[3] + 1.441).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let p = CoupledOscillatorParams::nominal(1.44);
        assert!(p.rhs(&[f64::INFINITY, 0.0, 0.0, 0.0]).is_err());
        let mut bad = p;
        bad.k2 = -1.0;
        assert!(bad.validate().is_err());
    }
}

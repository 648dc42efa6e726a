use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SYMMETRY_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-10;
/// Two-sided 95% Gaussian quantile.
pub const Z95: f64 = 1.96;

/// Mean and covariance of the augmented state `[x, phi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub time: f64,
}

/// Symmetry and definiteness measurements of a covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceHealth {
    pub max_asymmetry: f64,
    pub min_eigenvalue: f64,
    pub trace: f64,
}

impl CovarianceHealth {
    pub fn of(p: &DMatrix<f64>) -> Self {
        let max_asymmetry = (p - p.transpose()).amax();
        let sym = (p + p.transpose()) * 0.5;
        let min_eigenvalue = SymmetricEigen::new(sym).eigenvalues.min();
        Self {
            max_asymmetry,
            min_eigenvalue,
            trace: p.trace(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.max_asymmetry <= SYMMETRY_TOL && self.min_eigenvalue >= -PSD_TOL * self.trace.abs()
    }
}

impl AugmentedBelief {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, time: f64) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::shape(format!(
                "covariance is {}x{}, mean has {d} entries",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) || !time.is_finite() {
            return Err(Error::invalid("non-finite belief"));
        }
        let b = Self { mean, covariance, time };
        let h = b.health();
        if !h.is_valid() {
            return Err(Error::invalid(format!(
                "covariance is not symmetric positive semidefinite (asymmetry {:e}, min eigenvalue {:e})",
                h.max_asymmetry, h.min_eigenvalue
            )));
        }
        Ok(b)
    }

    /// Belief with a diagonal covariance.
    pub fn diagonal(mean: &[f64], variances: &[f64], time: f64) -> Result<Self> {
        if mean.len() != variances.len() {
            return Err(Error::shape("mean and variance lengths differ"));
        }
        if variances.iter().any(|v| *v < 0.0) {
            return Err(Error::invalid("negative initial variance"));
        }
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_diagonal(&DVector::from_column_slice(variances)),
            time,
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn health(&self) -> CovarianceHealth {
        CovarianceHealth::of(&self.covariance)
    }

    pub fn std_dev(&self) -> DVector<f64> {
        self.covariance.diagonal().map(|v| v.max(0.0).sqrt())
    }

    /// Lower and upper 95% bounds per component.
    pub fn interval95(&self) -> (DVector<f64>, DVector<f64>) {
        let s = self.std_dev() * Z95;
        (&self.mean - &s, &self.mean + &s)
    }

    pub(crate) fn symmetrize(&mut self) {
        let n = self.covariance.nrows();
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (self.covariance[(i, j)] + self.covariance[(j, i)]);
                self.covariance[(i, j)] = v;
                self.covariance[(j, i)] = v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_belief_intervals() {
        let b = AugmentedBelief::diagonal(&[1.0, 2.0], &[4.0, 0.0], 0.0).unwrap();
        let (lo, hi) = b.interval95();
        assert_eq!(lo, DVector::from_vec(vec![1.0 - 3.92, 2.0]));
        assert_eq!(hi, DVector::from_vec(vec![1.0 + 3.92, 2.0]));
    }

    #[test]
    fn rejects_indefinite_or_asymmetric() {
        let m = DVector::zeros(2);
        assert!(AugmentedBelief::new(m.clone(), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), 0.0).is_err());
        assert!(AugmentedBelief::new(m.clone(), DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]), 0.0).is_err());
        assert!(AugmentedBelief::new(m, DMatrix::identity(3, 3), 0.0).is_err());
        assert!(AugmentedBelief::diagonal(&[0.0], &[-1.0], 0.0).is_err());
    }
}

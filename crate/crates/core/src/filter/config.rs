use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step size and diagonal noise covariances of the filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub dt: f64,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub p0_diag: Vec<f64>,
    /// Correct every `correct_stride` prediction steps.
    #[serde(default = "one")]
    pub correct_stride: usize,
}

fn one() -> usize {
    1
}

impl FilterConfig {
    pub fn new(dt: f64, q_diag: Vec<f64>, r_diag: Vec<f64>, p0_diag: Vec<f64>) -> Result<Self> {
        let c = Self {
            dt,
            q_diag,
            r_diag,
            p0_diag,
            correct_stride: 1,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("filter dt must be positive, got {}", self.dt)));
        }
        if self.q_diag.len() != self.p0_diag.len() {
            return Err(Error::shape(format!(
                "q_diag has {} entries but p0_diag has {}",
                self.q_diag.len(),
                self.p0_diag.len()
            )));
        }
        if self.q_diag.iter().chain(&self.p0_diag).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("process and initial variances must be finite and >= 0"));
        }
        if self.r_diag.is_empty() || self.r_diag.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("observation variances must be finite and > 0"));
        }
        if self.correct_stride == 0 {
            return Err(Error::invalid("correct_stride must be at least 1"));
        }
        Ok(())
    }

    pub fn n_aug(&self) -> usize {
        self.q_diag.len()
    }

    pub fn n_obs(&self) -> usize {
        self.r_diag.len()
    }
}

/// Published diagonal tunings, one per case-study sub-case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TuningPreset {
    ShearBuilding,
    OscillatorK2Low,
    OscillatorK2High,
    OscillatorCoupling,
}

impl TuningPreset {
    pub const ALL: [TuningPreset; 4] = [
        TuningPreset::ShearBuilding,
        TuningPreset::OscillatorK2Low,
        TuningPreset::OscillatorK2High,
        TuningPreset::OscillatorCoupling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TuningPreset::ShearBuilding => "shear-building",
            TuningPreset::OscillatorK2Low => "oscillator-k2-low",
            TuningPreset::OscillatorK2High => "oscillator-k2-high",
            TuningPreset::OscillatorCoupling => "oscillator-coupling",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown tuning preset `{name}`")))
    }

    /// `(p0, q, r)` diagonals.
    pub fn diagonals(self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        match self {
            // States x1, x2, v1, v2 and stiffness; observations x, v, a per floor.
            TuningPreset::ShearBuilding => (
                vec![1e-5, 1e-5, 1e-5, 1e-5, 2e-5],
                vec![1e-4, 1e-4, 1e-4, 1e-4, 1e-8],
                vec![5e-1, 5e-1, 5e-3, 5e-3, 5.0, 5.0],
            ),
            // Truth near the bottom of the training range.
            TuningPreset::OscillatorK2Low => (
                vec![1e-6, 1e-6, 1e-6, 1e-6, 1e-2],
                vec![1e-7, 1e-7, 1e-7, 1e-7, 1e-7],
                vec![1e-7],
            ),
            TuningPreset::OscillatorK2High => (
                vec![1e-6, 1e-6, 1e-6, 1e-6, 2e-6],
                vec![1e-10, 1e-10, 1e-8, 1e-8, 2e-6],
                vec![5e-4],
            ),
            TuningPreset::OscillatorCoupling => (
                vec![1e-6, 1e-6, 1e-6, 1e-6, 1e-1, 1e-1],
                vec![5e-10, 5e-10, 8e-8, 8e-8, 1e-11, 1e-11],
                vec![3e-1],
            ),
        }
    }

    pub fn config(self, dt: f64) -> Result<FilterConfig> {
        let (p0, q, r) = self.diagonals();
        FilterConfig::new(dt, q, r, p0)
    }
}

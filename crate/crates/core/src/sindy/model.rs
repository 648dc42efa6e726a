use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::library::{build_theta, FunctionLibrary};
use super::stlsq::{stlsq_normal, NormalEquations, StlsqOptions, StlsqReport};
use crate::error::{Error, Result};

/// Sparse model `f(z, b) = s_x * Xi^T Theta(z / s, b / s_b)`.
///
/// Regression happens in rescaled coordinates; `scaling` holds one factor per
/// augmented variable followed by one per forcing channel, so evaluation
/// takes and returns physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRecord", into = "ModelRecord")]
pub struct SindyModel {
    library: FunctionLibrary,
    coefficients: DMatrix<f64>,
    scaling: Vec<f64>,
    threshold_used: f64,
    ridge_strength_used: f64,
    active: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelRecord {
    library: FunctionLibrary,
    coefficients: Vec<Vec<f64>>,
    scaling: Vec<f64>,
    threshold_used: f64,
    ridge_strength_used: f64,
}

impl From<SindyModel> for ModelRecord {
    fn from(m: SindyModel) -> Self {
        let coefficients = m
            .coefficients
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        Self {
            library: m.library,
            coefficients,
            scaling: m.scaling,
            threshold_used: m.threshold_used,
            ridge_strength_used: m.ridge_strength_used,
        }
    }
}

impl TryFrom<ModelRecord> for SindyModel {
    type Error = Error;

    fn try_from(r: ModelRecord) -> Result<Self> {
        let p = r.coefficients.len();
        let n = r.library.n_state;
        if r.coefficients.iter().any(|row| row.len() != n) {
            return Err(Error::shape(format!("coefficient rows must have {n} entries")));
        }
        let coefficients = DMatrix::from_fn(p, n, |i, j| r.coefficients[i][j]);
        SindyModel::new(r.library, coefficients, r.scaling, r.threshold_used, r.ridge_strength_used)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub n_samples: usize,
    pub n_terms: usize,
    pub nnz_per_equation: Vec<usize>,
    /// `||y_j - Theta xi_j|| / ||y_j||` in the rescaled coordinates.
    pub relative_residual: Vec<f64>,
    pub stlsq: StlsqReport,
}

impl SindyModel {
    pub fn new(
        library: FunctionLibrary,
        coefficients: DMatrix<f64>,
        scaling: Vec<f64>,
        threshold_used: f64,
        ridge_strength_used: f64,
    ) -> Result<Self> {
        library.validate()?;
        if coefficients.nrows() != library.len() || coefficients.ncols() != library.n_state {
            return Err(Error::shape(format!(
                "coefficients are {}x{}, library needs {}x{}",
                coefficients.nrows(),
                coefficients.ncols(),
                library.len(),
                library.n_state
            )));
        }
        if scaling.len() != library.n_aug() + library.n_forcing {
            return Err(Error::shape(format!(
                "scaling has {} entries, expected {}",
                scaling.len(),
                library.n_aug() + library.n_forcing
            )));
        }
        if scaling.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("scaling factors must be finite and positive"));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite coefficient"));
        }
        if let Some(c) = coefficients.iter().find(|c| **c != 0.0 && c.abs() < threshold_used) {
            return Err(Error::invalid(format!(
                "coefficient {c} is below the threshold {threshold_used}"
            )));
        }
        let active = (0..coefficients.nrows())
            .filter(|&k| coefficients.row(k).iter().any(|c| *c != 0.0))
            .collect();
        Ok(Self {
            library,
            coefficients,
            scaling,
            threshold_used,
            ridge_strength_used,
            active,
        })
    }

    /// Model with unit scaling.
    pub fn unscaled(library: FunctionLibrary, coefficients: DMatrix<f64>, threshold_used: f64, ridge_strength_used: f64) -> Result<Self> {
        let s = vec![1.0; library.n_aug() + library.n_forcing];
        Self::new(library, coefficients, s, threshold_used, ridge_strength_used)
    }

    /// Fits on in-memory data. `states` is `T x (n + l)` in physical units,
    /// `derivatives` is `T x n`.
    pub fn fit(
        library: FunctionLibrary,
        scaling: Vec<f64>,
        states: &DMatrix<f64>,
        forcing: Option<&DMatrix<f64>>,
        derivatives: &DMatrix<f64>,
        opts: &StlsqOptions,
    ) -> Result<(Self, TrainingReport)> {
        let mut trainer = SindyTrainer::new(library, scaling)?;
        trainer.add(states, forcing, derivatives)?;
        trainer.finish(opts)
    }

    pub fn library(&self) -> &FunctionLibrary {
        &self.library
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn scaling(&self) -> &[f64] {
        &self.scaling
    }

    pub fn threshold_used(&self) -> f64 {
        self.threshold_used
    }

    pub fn ridge_strength_used(&self) -> f64 {
        self.ridge_strength_used
    }

    pub fn n_state(&self) -> usize {
        self.library.n_state
    }

    pub fn n_param(&self) -> usize {
        self.library.n_param
    }

    pub fn n_forcing(&self) -> usize {
        self.library.n_forcing
    }

    pub fn nnz_per_equation(&self) -> Vec<usize> {
        self.coefficients
            .column_iter()
            .map(|c| c.iter().filter(|v| **v != 0.0).count())
            .collect()
    }

    fn check_inputs(&self, z: &[f64], b: &[f64]) -> Result<()> {
        if z.len() != self.library.n_aug() || b.len() != self.library.n_forcing {
            return Err(Error::shape(format!(
                "model takes {} states and {} forcing values, got {} and {}",
                self.library.n_aug(),
                self.library.n_forcing,
                z.len(),
                b.len()
            )));
        }
        if z.iter().chain(b).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite model input"));
        }
        Ok(())
    }

    fn scaled_inputs(&self, z: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let na = z.len();
        let u = z.iter().zip(&self.scaling).map(|(v, s)| v / s).collect();
        let bs = b.iter().zip(&self.scaling[na..]).map(|(v, s)| v / s).collect();
        (u, bs)
    }

    /// Dynamic part of the vector field at augmented state `z`.
    pub fn evaluate(&self, z: &[f64], b: &[f64]) -> Result<DVector<f64>> {
        self.check_inputs(z, b)?;
        let (u, bs) = self.scaled_inputs(z, b);
        let n = self.n_state();
        let mut f = DVector::zeros(n);
        for &k in &self.active {
            let th = self.library.terms[k].eval(&u, &bs);
            for i in 0..n {
                f[i] += self.coefficients[(k, i)] * th;
            }
        }
        for i in 0..n {
            f[i] *= self.scaling[i];
        }
        Ok(f)
    }

    /// Vector field and its full `n x (n + l)` Jacobian in one pass.
    pub fn evaluate_with_jacobian(&self, z: &[f64], b: &[f64], f: &mut DVector<f64>, jac: &mut DMatrix<f64>) -> Result<()> {
        self.check_inputs(z, b)?;
        let n = self.n_state();
        let na = self.library.n_aug();
        if f.len() != n || jac.nrows() != n || jac.ncols() != na {
            return Err(Error::shape("output buffers do not match the model"));
        }
        let (u, bs) = self.scaled_inputs(z, b);
        f.fill(0.0);
        jac.fill(0.0);
        for &k in &self.active {
            let term = &self.library.terms[k];
            let th = term.eval(&u, &bs);
            for i in 0..n {
                f[i] += self.coefficients[(k, i)] * th;
            }
            for j in 0..na {
                let d = term.derivative(&u, j);
                if d != 0.0 {
                    for i in 0..n {
                        jac[(i, j)] += self.coefficients[(k, i)] * d;
                    }
                }
            }
        }
        for i in 0..n {
            f[i] *= self.scaling[i];
            for j in 0..na {
                jac[(i, j)] *= self.scaling[i] / self.scaling[j];
            }
        }
        Ok(())
    }

    /// `(df/dx, df/dphi)` at augmented state `z`.
    pub fn jacobian_blocks(&self, z: &[f64], b: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.n_state();
        let mut f = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, self.library.n_aug());
        self.evaluate_with_jacobian(z, b, &mut f, &mut jac)?;
        let dx = jac.columns(0, n).into_owned();
        let dp = jac.columns(n, self.n_param()).into_owned();
        Ok((dx, dp))
    }

    /// Identified equations in the rescaled coordinates, one string per state.
    pub fn equations(&self) -> Vec<String> {
        let vars = self.library.variable_names();
        let forcing = self.library.forcing_names();
        (0..self.n_state())
            .map(|i| {
                let rhs: Vec<String> = self
                    .active
                    .iter()
                    .filter(|&&k| self.coefficients[(k, i)] != 0.0)
                    .map(|&k| format!("{:+.6e} {}", self.coefficients[(k, i)], self.library.terms[k].label(&vars, &forcing)))
                    .collect();
                let rhs = if rhs.is_empty() { "0".to_string() } else { rhs.join(" ") };
                format!("d{}/dt = {}", vars[i], rhs)
            })
            .collect()
    }
}

/// Root-mean-square of every column, with zero columns mapped to 1.
pub fn rms_scaling(columns: &[&DMatrix<f64>]) -> Vec<f64> {
    columns
        .iter()
        .flat_map(|m| {
            m.column_iter().map(|c| {
                let rms = (c.norm_squared() / c.len().max(1) as f64).sqrt();
                if rms > 0.0 && rms.is_finite() {
                    rms
                } else {
                    1.0
                }
            })
        })
        .collect()
}

/// Accumulates regression moments over several data blocks.
pub struct SindyTrainer {
    library: FunctionLibrary,
    scaling: Vec<f64>,
    moments: NormalEquations,
}

impl SindyTrainer {
    pub fn new(library: FunctionLibrary, scaling: Vec<f64>) -> Result<Self> {
        library.validate()?;
        if scaling.len() != library.n_aug() + library.n_forcing || scaling.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid(format!(
                "scaling needs {} finite positive entries",
                library.n_aug() + library.n_forcing
            )));
        }
        let moments = NormalEquations::new(library.len(), library.n_state);
        Ok(Self {
            library,
            scaling,
            moments,
        })
    }

    /// Adds one block of samples in physical units.
    pub fn add(&mut self, states: &DMatrix<f64>, forcing: Option<&DMatrix<f64>>, derivatives: &DMatrix<f64>) -> Result<()> {
        let na = self.library.n_aug();
        let n = self.library.n_state;
        if derivatives.ncols() != n || derivatives.nrows() != states.nrows() {
            return Err(Error::shape(format!(
                "derivatives are {}x{}, expected {}x{n}",
                derivatives.nrows(),
                derivatives.ncols(),
                states.nrows()
            )));
        }
        const BLOCK: usize = 4096;
        let t = states.nrows();
        let mut start = 0;
        while start < t {
            let len = BLOCK.min(t - start);
            let mut zs = states.rows(start, len).into_owned();
            if zs.ncols() == na {
                for (j, mut c) in zs.column_iter_mut().enumerate() {
                    c /= self.scaling[j];
                }
            }
            let bs = forcing.map(|f| {
                let mut b = f.rows(start, len.min(f.nrows().saturating_sub(start))).into_owned();
                for (j, mut c) in b.column_iter_mut().enumerate() {
                    if let Some(s) = self.scaling.get(na + j) {
                        c /= *s;
                    }
                }
                b
            });
            let theta = build_theta(&zs, bs.as_ref(), &self.library)?;
            let mut ys = derivatives.rows(start, len).into_owned();
            for (j, mut c) in ys.column_iter_mut().enumerate() {
                c /= self.scaling[j];
            }
            self.moments.accumulate(&theta, &ys)?;
            start += len;
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.moments.n_rows
    }

    pub fn finish(self, opts: &StlsqOptions) -> Result<(SindyModel, TrainingReport)> {
        if self.moments.n_rows == 0 {
            return Err(Error::invalid("no training samples"));
        }
        let (xi, stlsq) = stlsq_normal(&self.moments, opts)?;
        let relative_residual = (0..xi.ncols())
            .map(|j| {
                let col = xi.column(j).clone_owned();
                let denom = self.moments.target_sq[j];
                if denom > 0.0 {
                    (self.moments.residual_sq(j, &col) / denom).sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let model = SindyModel::new(self.library, xi, self.scaling, opts.threshold, opts.ridge)?;
        let report = TrainingReport {
            n_samples: self.moments.n_rows,
            n_terms: model.library.len(),
            nnz_per_equation: model.nnz_per_equation(),
            relative_residual,
            stlsq,
        };
        Ok((model, report))
    }
}

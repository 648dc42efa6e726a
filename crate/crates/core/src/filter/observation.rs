use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sindy::SindyModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    /// Boolean selection of augmented-state entries.
    Selection,
    /// Single delay-coordinate observation row `e_1^T U S`.
    DelayRow,
    /// Linear selections followed by components of the learned vector field
    /// (accelerations in the building case).
    SindyAugmented,
}

/// `y = [L z; f(z, b)[rows]]` with `L` linear and `f` the learned model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    pub kind: ObservationKind,
    /// `o_lin x (n + l)` linear block.
    pub linear: DMatrix<f64>,
    /// Indices of model outputs appended after the linear rows.
    pub model_rows: Vec<usize>,
}

fn selection_matrix(indices: &[usize], n_aug: usize) -> Result<DMatrix<f64>> {
    if let Some(i) = indices.iter().find(|&&i| i >= n_aug) {
        return Err(Error::shape(format!("observed index {i} outside augmented state of size {n_aug}")));
    }
    Ok(DMatrix::from_fn(indices.len(), n_aug, |r, c| if indices[r] == c { 1.0 } else { 0.0 }))
}

impl ObservationModel {
    pub fn selection(indices: &[usize], n_aug: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("selection observes nothing"));
        }
        Ok(Self {
            kind: ObservationKind::Selection,
            linear: selection_matrix(indices, n_aug)?,
            model_rows: Vec::new(),
        })
    }

    /// `h` covers the leading delay coordinates; parameters get zeros.
    pub fn delay_row(h: &DVector<f64>, n_aug: usize) -> Result<Self> {
        if h.len() > n_aug || h.is_empty() {
            return Err(Error::shape(format!("observation row of length {} for state of size {n_aug}", h.len())));
        }
        let mut linear = DMatrix::zeros(1, n_aug);
        linear.view_mut((0, 0), (1, h.len())).copy_from(&h.transpose());
        Ok(Self {
            kind: ObservationKind::DelayRow,
            linear,
            model_rows: Vec::new(),
        })
    }

    pub fn sindy_augmented(indices: &[usize], model_rows: &[usize], n_aug: usize) -> Result<Self> {
        if indices.is_empty() && model_rows.is_empty() {
            return Err(Error::invalid("observation model observes nothing"));
        }
        Ok(Self {
            kind: ObservationKind::SindyAugmented,
            linear: selection_matrix(indices, n_aug)?,
            model_rows: model_rows.to_vec(),
        })
    }

    /// Scale of each observation channel given per-variable model scales
    /// (`SindyModel::scaling`). Linear rows must be plain selections.
    pub fn output_scales(&self, scaling: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n_obs());
        for row in self.linear.row_iter() {
            let hits: Vec<usize> = (0..row.len()).filter(|&c| row[c] != 0.0).collect();
            match hits.as_slice() {
                [c] if row[*c] == 1.0 && *c < scaling.len() => out.push(scaling[*c]),
                _ => return Err(Error::invalid("output scales need selection rows")),
            }
        }
        for &r in &self.model_rows {
            out.push(*scaling.get(r).ok_or_else(|| Error::shape(format!("model row {r} has no scale")))?);
        }
        Ok(out)
    }

    pub fn n_obs(&self) -> usize {
        self.linear.nrows() + self.model_rows.len()
    }

    pub fn n_aug(&self) -> usize {
        self.linear.ncols()
    }

    pub fn check(&self, model: &SindyModel) -> Result<()> {
        let na = model.n_state() + model.n_param();
        if self.n_aug() != na {
            return Err(Error::shape(format!(
                "observation model acts on {} states, the dynamics model on {na}",
                self.n_aug()
            )));
        }
        if let Some(r) = self.model_rows.iter().find(|&&r| r >= model.n_state()) {
            return Err(Error::shape(format!("model row {r} outside {} outputs", model.n_state())));
        }
        Ok(())
    }

    /// Predicted observation and its Jacobian. `fbuf`/`jbuf` are scratch
    /// buffers sized `n` and `n x (n + l)`.
    pub fn evaluate_into(
        &self,
        z: &DVector<f64>,
        b: &[f64],
        model: &SindyModel,
        h: &mut DVector<f64>,
        jac: &mut DMatrix<f64>,
        fbuf: &mut DVector<f64>,
        jbuf: &mut DMatrix<f64>,
    ) -> Result<()> {
        let ol = self.linear.nrows();
        h.rows_mut(0, ol).gemv(1.0, &self.linear, z, 0.0);
        jac.rows_mut(0, ol).copy_from(&self.linear);
        if !self.model_rows.is_empty() {
            model.evaluate_with_jacobian(z.as_slice(), b, fbuf, jbuf)?;
            for (k, &r) in self.model_rows.iter().enumerate() {
                h[ol + k] = fbuf[r];
                jac.row_mut(ol + k).copy_from(&jbuf.row(r));
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, z: &DVector<f64>, b: &[f64], model: &SindyModel) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check(model)?;
        let n = model.n_state();
        let mut h = DVector::zeros(self.n_obs());
        let mut jac = DMatrix::zeros(self.n_obs(), self.n_aug());
        let mut fb = DVector::zeros(n);
        let mut jb = DMatrix::zeros(n, self.n_aug());
        self.evaluate_into(z, b, model, &mut h, &mut jac, &mut fb, &mut jb)?;
        Ok((h, jac))
    }
}

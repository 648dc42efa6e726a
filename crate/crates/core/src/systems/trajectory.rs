use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::io::{read_table, write_table};

/// Sampled solution of a first-order system.
///
/// `derivatives`, when present, holds the right-hand side evaluated at each
/// stored sample rather than finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// T x n
    pub states: DMatrix<f64>,
    /// T x n
    pub derivatives: Option<DMatrix<f64>>,
    /// T x m
    pub forcing: Option<DMatrix<f64>>,
    pub parameter_values: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn new(
        times: Vec<f64>,
        states: DMatrix<f64>,
        derivatives: Option<DMatrix<f64>>,
        forcing: Option<DMatrix<f64>>,
        parameter_values: Option<Vec<f64>>,
    ) -> Result<Self> {
        let t = times.len();
        if states.nrows() != t {
            return Err(Error::shape(format!("{} times but {} state rows", t, states.nrows())));
        }
        if let Some(d) = &derivatives {
            if d.shape() != states.shape() {
                return Err(Error::shape("derivative matrix shape differs from states"));
            }
        }
        if let Some(f) = &forcing {
            if f.nrows() != t {
                return Err(Error::shape(format!("{} times but {} forcing rows", t, f.nrows())));
            }
        }
        Ok(Self {
            times,
            states,
            derivatives,
            forcing,
            parameter_values,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_state(&self) -> usize {
        self.states.ncols()
    }

    pub fn n_forcing(&self) -> usize {
        self.forcing.as_ref().map_or(0, |f| f.ncols())
    }

    pub fn state_column(&self, i: usize) -> Vec<f64> {
        self.states.column(i).iter().copied().collect()
    }

    /// Recomputes the derivative column from `rhs` row by row.
    pub fn with_derivatives<F>(mut self, rhs: F) -> Result<Self>
    where
        F: Fn(&[f64], &[f64], &mut [f64]) -> Result<()>,
    {
        let n = self.n_state();
        let mut d = DMatrix::zeros(self.len(), n);
        let mut x = vec![0.0; n];
        let mut b = vec![0.0; self.n_forcing()];
        let mut out = vec![0.0; n];
        for j in 0..self.len() {
            self.row_into(j, &mut x, &mut b);
            rhs(&x, &b, &mut out)?;
            for i in 0..n {
                d[(j, i)] = out[i];
            }
        }
        self.derivatives = Some(d);
        Ok(self)
    }

    pub(crate) fn row_into(&self, j: usize, x: &mut [f64], b: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = self.states[(j, i)];
        }
        if let Some(f) = &self.forcing {
            for (i, v) in b.iter_mut().enumerate() {
                *v = f[(j, i)];
            }
        }
    }

    fn header(n: usize, m: usize) -> Vec<String> {
        let mut h = vec!["time_s".to_string()];
        h.extend((1..=n).map(|i| format!("x{i}")));
        match m {
            0 => {}
            1 => h.push("b".into()),
            _ => h.extend((1..=m).map(|i| format!("b{i}"))),
        }
        h
    }

    /// `time_s`, one column per state component, then the forcing columns.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n = self.n_state();
        let m = self.n_forcing();
        let rows: Vec<Vec<f64>> = (0..self.len())
            .map(|j| {
                let mut r = Vec::with_capacity(1 + n + m);
                r.push(self.times[j]);
                r.extend(self.states.row(j).iter());
                if let Some(f) = &self.forcing {
                    r.extend(f.row(j).iter());
                }
                r
            })
            .collect();
        write_table(path, &Self::header(n, m), rows.iter().map(|r| r.as_slice()))
    }

    /// Reads the CSV written by [`Self::write_csv`]. Derivatives and parameter
    /// values are not part of the file.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let table = read_table(path)?;
        if table.header.first().map(String::as_str) != Some("time_s") {
            return Err(Error::Parse {
                path: path.into(),
                line: 1,
                message: "first column must be `time_s`".into(),
            });
        }
        let n = table.header.iter().filter(|h| h.starts_with('x')).count();
        let m = table.header.len() - 1 - n;
        if table.header != Self::header(n, m) {
            return Err(Error::Parse {
                path: path.into(),
                line: 1,
                message: format!("unexpected trajectory header `{}`", table.header.join(",")),
            });
        }
        let t = table.rows.len();
        let times = table.column(0);
        let states = DMatrix::from_fn(t, n, |j, i| table.rows[j][1 + i]);
        let forcing = (m > 0).then(|| DMatrix::from_fn(t, m, |j, i| table.rows[j][1 + n + i]));
        Self::new(times, states, None, forcing, None)
    }
}

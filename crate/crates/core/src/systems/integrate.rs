use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::forcing::ForcingSignal;
use super::trajectory::Trajectory;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Rk4,
    Euler,
}

fn sample_all(forcing: &[ForcingSignal], t: f64, out: &mut [f64]) {
    for (o, f) in out.iter_mut().zip(forcing) {
        *o = f.sample(t);
    }
}

/// Integrates `dx/dt = rhs(x, b(t))` on the grid `t_j = t0 + j dt`, where `t0`
/// is the forcing start (or zero without forcing).
///
/// Forcing signals are linearly interpolated at every stage time. The
/// returned trajectory has `n_steps + 1` rows and its derivative column is
/// `rhs` evaluated at each stored sample.
pub fn integrate<F>(
    rhs: F,
    x0: &[f64],
    forcing: &[ForcingSignal],
    dt: f64,
    n_steps: usize,
    method: Method,
) -> Result<Trajectory>
where
    F: Fn(&[f64], &[f64], &mut [f64]) -> Result<()>,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("integration step must be positive"));
    }
    if x0.is_empty() || !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("initial state must be non-empty and finite"));
    }
    let t0 = forcing.first().map_or(0.0, ForcingSignal::start);
    let horizon = n_steps as f64 * dt;
    for f in forcing {
        let available = f.end() - t0;
        if f.start() != t0 || available < horizon - 1e-9 * dt.max(horizon) {
            return Err(Error::Coverage {
                available,
                required: horizon,
            });
        }
    }

    let n = x0.len();
    let m = forcing.len();
    let rows = n_steps + 1;
    let mut states = DMatrix::zeros(rows, n);
    let mut derivs = DMatrix::zeros(rows, n);
    let mut forcing_mat = DMatrix::zeros(rows, m);
    let mut times = Vec::with_capacity(rows);

    let mut x = x0.to_vec();
    let mut b = vec![0.0; m];
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    for j in 0..rows {
        let t = t0 + j as f64 * dt;
        times.push(t);
        sample_all(forcing, t, &mut b);
        rhs(&x, &b, &mut k1)?;
        for i in 0..n {
            states[(j, i)] = x[i];
            derivs[(j, i)] = k1[i];
        }
        for i in 0..m {
            forcing_mat[(j, i)] = b[i];
        }
        if j == n_steps {
            break;
        }
        match method {
            Method::Euler => {
                for i in 0..n {
                    x[i] += dt * k1[i];
                }
            }
            Method::Rk4 => {
                let half = t + 0.5 * dt;
                sample_all(forcing, half, &mut b);
                for i in 0..n {
                    tmp[i] = x[i] + 0.5 * dt * k1[i];
                }
                rhs(&tmp, &b, &mut k2)?;
                for i in 0..n {
                    tmp[i] = x[i] + 0.5 * dt * k2[i];
                }
                rhs(&tmp, &b, &mut k3)?;
                sample_all(forcing, t + dt, &mut b);
                for i in 0..n {
                    tmp[i] = x[i] + dt * k3[i];
                }
                rhs(&tmp, &b, &mut k4)?;
                for i in 0..n {
                    x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("integration produced non-finite state at step {}", j + 1)));
        }
    }

    Trajectory::new(times, states, Some(derivs), (m > 0).then_some(forcing_mat), None)
}

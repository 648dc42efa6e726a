use nalgebra::{DMatrix, DVector};

use super::belief::AugmentedBelief;
use super::config::FilterConfig;
use super::observation::ObservationModel;
use crate::error::{Error, Result};
use crate::sindy::SindyModel;

/// Kalman gain `P H^T S^-1` and innovation covariance `S = H P H^T + R`.
/// `step` is only used to label a failure.
pub fn kalman_gain(p: &DMatrix<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>, step: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let ph = p * h.transpose();
    let s = h * &ph + r;
    let chol = s.clone().cholesky().ok_or(Error::SingularUpdate { step })?;
    // G = P H^T S^-1  <=>  S G^T = H P
    let gt = chol.solve(&ph.transpose());
    Ok((gt.transpose(), s))
}

/// Joseph-form covariance update `(I - G H) P (I - G H)^T + G R G^T`.
pub fn joseph_update(p: &DMatrix<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let d = p.nrows();
    let ikh = DMatrix::identity(d, d) - g * h;
    &ikh * p * ikh.transpose() + g * r * g.transpose()
}

/// Reusable buffers bound to one model, observation model and config.
pub struct Ekf<'a> {
    model: &'a SindyModel,
    obs: &'a ObservationModel,
    config: &'a FilterConfig,
    r: DMatrix<f64>,
    f: DVector<f64>,
    jac: DMatrix<f64>,
    big_f: DMatrix<f64>,
    h: DVector<f64>,
    hjac: DMatrix<f64>,
}

impl<'a> Ekf<'a> {
    pub fn new(model: &'a SindyModel, obs: &'a ObservationModel, config: &'a FilterConfig) -> Result<Self> {
        config.validate()?;
        obs.check(model)?;
        let n = model.n_state();
        let d = n + model.n_param();
        if config.n_aug() != d {
            return Err(Error::shape(format!("filter config has {} states, model has {d}", config.n_aug())));
        }
        if config.n_obs() != obs.n_obs() {
            return Err(Error::shape(format!(
                "filter config has {} observation variances, observation model has {} rows",
                config.n_obs(),
                obs.n_obs()
            )));
        }
        Ok(Self {
            model,
            obs,
            config,
            r: DMatrix::from_diagonal(&DVector::from_column_slice(&config.r_diag)),
            f: DVector::zeros(n),
            jac: DMatrix::zeros(n, d),
            big_f: DMatrix::zeros(d, d),
            h: DVector::zeros(obs.n_obs()),
            hjac: DMatrix::zeros(obs.n_obs(), d),
        })
    }

    pub fn dim(&self) -> usize {
        self.config.n_aug()
    }

    /// Euler-forward prediction over one step `dt`.
    pub fn predict(&mut self, belief: &mut AugmentedBelief, b: &[f64], step: usize) -> Result<()> {
        let dt = self.config.dt;
        let n = self.model.n_state();
        let d = self.dim();
        if belief.dim() != d {
            return Err(Error::shape(format!("belief has {} states, filter expects {d}", belief.dim())));
        }
        self.model
            .evaluate_with_jacobian(belief.mean.as_slice(), b, &mut self.f, &mut self.jac)
            .map_err(|e| match e {
                Error::InvalidInput(m) => Error::Divergence { step, reason: m },
                other => other,
            })?;
        self.big_f.rows_mut(0, n).copy_from(&self.jac);
        let fp = &self.big_f * &belief.covariance;
        let p = &mut belief.covariance;
        *p += (&fp + fp.transpose()) * dt;
        for i in 0..d {
            p[(i, i)] += dt * self.config.q_diag[i];
        }
        belief.mean.rows_mut(0, n).axpy(dt, &self.f, 1.0);
        belief.time += dt;
        belief.symmetrize();
        if belief.mean.iter().chain(belief.covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step,
                reason: "non-finite prediction".into(),
            });
        }
        Ok(())
    }

    /// Joseph-form correction; returns the innovation `y - h(z, b)`.
    pub fn correct(&mut self, belief: &mut AugmentedBelief, y: &[f64], b: &[f64], step: usize) -> Result<DVector<f64>> {
        if y.len() != self.obs.n_obs() {
            return Err(Error::shape(format!("observation has {} entries, expected {}", y.len(), self.obs.n_obs())));
        }
        self.obs
            .evaluate_into(&belief.mean, b, self.model, &mut self.h, &mut self.hjac, &mut self.f, &mut self.jac)?;
        let innovation = DVector::from_column_slice(y) - &self.h;
        let (g, _) = kalman_gain(&belief.covariance, &self.hjac, &self.r, step)?;
        belief.mean += &g * &innovation;
        belief.covariance = joseph_update(&belief.covariance, &self.hjac, &self.r, &g);
        belief.symmetrize();
        if belief.mean.iter().chain(belief.covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step,
                reason: "non-finite correction".into(),
            });
        }
        Ok(innovation)
    }
}

/// One prediction step, returning the prior.
pub fn predict(belief: &AugmentedBelief, model: &SindyModel, forcing: &[f64], config: &FilterConfig) -> Result<AugmentedBelief> {
    let d = model.n_state() + model.n_param();
    let obs = ObservationModel::selection(&[0], d)?;
    let cfg = FilterConfig {
        r_diag: vec![1.0],
        ..config.clone()
    };
    let mut ekf = Ekf::new(model, &obs, &cfg)?;
    let mut out = belief.clone();
    ekf.predict(&mut out, forcing, 0)?;
    Ok(out)
}

/// One correction step, returning the posterior and the innovation.
pub fn correct(
    prior: &AugmentedBelief,
    observation: &[f64],
    obs: &ObservationModel,
    model: &SindyModel,
    forcing: &[f64],
    config: &FilterConfig,
) -> Result<(AugmentedBelief, DVector<f64>)> {
    let mut ekf = Ekf::new(model, obs, config)?;
    let mut out = prior.clone();
    let innov = ekf.correct(&mut out, observation, forcing, 0)?;
    Ok((out, innov))
}

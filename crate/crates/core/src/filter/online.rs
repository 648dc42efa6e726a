use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::belief::{AugmentedBelief, CovarianceHealth};
use super::config::FilterConfig;
use super::ekf::Ekf;
use super::observation::ObservationModel;
use crate::error::{Error, Result};
use crate::sindy::SindyModel;

/// Trace growth beyond this factor of the initial trace counts as divergence.
pub const TRACE_BLOWUP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceInfo {
    pub step: usize,
    pub time: f64,
    pub reason: String,
}

/// Time histories of one online run. Row `k` of every matrix refers to
/// `times[k]`; row 0 is the initial belief.
#[derive(Debug, Clone)]
pub struct OnlineRun {
    pub times: Vec<f64>,
    pub means: DMatrix<f64>,
    pub std_devs: DMatrix<f64>,
    /// `NaN` where no correction happened.
    pub innovations: DMatrix<f64>,
    pub final_belief: AugmentedBelief,
    pub divergence: Option<DivergenceInfo>,
    pub worst_asymmetry: f64,
    /// Most negative `lambda_min / trace(P)` seen.
    pub worst_eigen_ratio: f64,
    pub covariance_checks: usize,
    pub covariance_violations: usize,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineOptions {
    /// Check symmetry and definiteness of `P` after every predict and correct.
    pub monitor_covariance: bool,
}

impl Default for OnlineOptions {
    fn default() -> Self {
        Self { monitor_covariance: true }
    }
}

impl OnlineRun {
    pub fn n_steps(&self) -> usize {
        self.times.len()
    }

    /// Error when the run diverged.
    pub fn check(&self) -> Result<()> {
        match &self.divergence {
            Some(d) => Err(Error::Divergence {
                step: d.step,
                reason: d.reason.clone(),
            }),
            None => Ok(()),
        }
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        self.means.column(i).iter().copied().collect()
    }

    pub fn component_std(&self, i: usize) -> Vec<f64> {
        self.std_devs.column(i).iter().copied().collect()
    }
}

/// Sequential predict/correct over the observation rows.
///
/// `observations` is `T x o` on the filter grid, `forcing` is `T x m`. The
/// initial belief sits at row 0; step `k >= 1` predicts with the forcing of
/// row `k - 1` and then corrects with observation row `k`.
pub fn run_online(
    model: &SindyModel,
    obs: &ObservationModel,
    observations: &DMatrix<f64>,
    forcing: Option<&DMatrix<f64>>,
    initial: &AugmentedBelief,
    config: &FilterConfig,
    options: &OnlineOptions,
) -> Result<OnlineRun> {
    let clock = std::time::Instant::now();
    let mut ekf = Ekf::new(model, obs, config)?;
    let t = observations.nrows();
    let d = ekf.dim();
    let o = obs.n_obs();
    if observations.ncols() != o {
        return Err(Error::shape(format!("observations have {} columns, expected {o}", observations.ncols())));
    }
    let m = model.n_forcing();
    match forcing {
        Some(f) if f.ncols() != m || f.nrows() != t => {
            return Err(Error::shape(format!(
                "forcing is {}x{}, expected {t}x{m}",
                f.nrows(),
                f.ncols()
            )))
        }
        None if m > 0 => return Err(Error::shape("model needs forcing but none was given")),
        _ => {}
    }
    if initial.dim() != d {
        return Err(Error::shape(format!("initial belief has {} states, expected {d}", initial.dim())));
    }
    if t == 0 {
        return Err(Error::invalid("no observations"));
    }

    let trace0 = initial.covariance.trace();
    let trace_ref = if trace0 > 0.0 {
        trace0
    } else {
        config.q_diag.iter().sum::<f64>() * config.dt
    };
    let trace_limit = if trace_ref > 0.0 { TRACE_BLOWUP * trace_ref } else { f64::INFINITY };

    let mut times = Vec::with_capacity(t);
    let mut means = DMatrix::from_element(t, d, f64::NAN);
    let mut stds = DMatrix::from_element(t, d, f64::NAN);
    let mut innovations = DMatrix::from_element(t, o, f64::NAN);
    let mut belief = initial.clone();
    let mut worst_asymmetry = 0.0f64;
    let mut worst_eigen_ratio = 0.0f64;
    let mut checks = 0;
    let mut violations = 0;
    let mut divergence = None;
    let mut monitor = |p: &DMatrix<f64>| {
        if options.monitor_covariance {
            let h = CovarianceHealth::of(p);
            checks += 1;
            worst_asymmetry = worst_asymmetry.max(h.max_asymmetry);
            if h.trace > 0.0 {
                worst_eigen_ratio = worst_eigen_ratio.min(h.min_eigenvalue / h.trace);
            }
            if !h.is_valid() {
                violations += 1;
            }
        }
    };

    let record = |k: usize, b: &AugmentedBelief, times: &mut Vec<f64>, means: &mut DMatrix<f64>, stds: &mut DMatrix<f64>| {
        times.push(b.time);
        means.row_mut(k).copy_from(&b.mean.transpose());
        stds.row_mut(k).copy_from(&b.std_dev().transpose());
    };
    record(0, &belief, &mut times, &mut means, &mut stds);

    let empty: [f64; 0] = [];
    let mut bvec = vec![0.0; m];
    let forcing_row = |k: usize, out: &mut Vec<f64>| {
        if let Some(f) = forcing {
            for (j, v) in out.iter_mut().enumerate() {
                *v = f[(k, j)];
            }
        }
    };
    let mut yvec = vec![0.0; o];
    let mut last = 0;
    for k in 1..t {
        forcing_row(k - 1, &mut bvec);
        let b: &[f64] = if m > 0 { &bvec } else { &empty };
        let step = ekf.predict(&mut belief, b, k).and_then(|_| {
            monitor(&belief.covariance);
            if k % config.correct_stride == 0 {
                for (j, v) in yvec.iter_mut().enumerate() {
                    *v = observations[(k, j)];
                }
                forcing_row(k, &mut bvec);
                let b: &[f64] = if m > 0 { &bvec } else { &empty };
                let innov = ekf.correct(&mut belief, &yvec, b, k)?;
                monitor(&belief.covariance);
                innovations.row_mut(k).copy_from(&innov.transpose());
            }
            let tr = belief.covariance.trace();
            if tr > trace_limit {
                return Err(Error::Divergence {
                    step: k,
                    reason: format!("trace(P) = {tr:e} exceeds {TRACE_BLOWUP:e} times the initial trace"),
                });
            }
            Ok(())
        });
        match step {
            Ok(()) => {
                record(k, &belief, &mut times, &mut means, &mut stds);
                last = k;
            }
            Err(Error::Divergence { step, reason }) => {
                divergence = Some(DivergenceInfo {
                    step,
                    time: initial.time + step as f64 * config.dt,
                    reason,
                });
                break;
            }
            Err(Error::SingularUpdate { step }) => {
                divergence = Some(DivergenceInfo {
                    step,
                    time: initial.time + step as f64 * config.dt,
                    reason: "innovation covariance is not positive definite".into(),
                });
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let n = last + 1;
    let final_belief = AugmentedBelief {
        mean: means.row(last).transpose(),
        covariance: if divergence.is_some() { DMatrix::from_element(d, d, f64::NAN) } else { belief.covariance },
        time: times[last],
    };
    Ok(OnlineRun {
        times,
        means: means.rows(0, n).into_owned(),
        std_devs: stds.rows(0, n).into_owned(),
        innovations: innovations.rows(0, n).into_owned(),
        final_belief,
        divergence,
        worst_asymmetry,
        worst_eigen_ratio,
        covariance_checks: checks,
        covariance_violations: violations,
        elapsed_seconds: clock.elapsed().as_secs_f64(),
    })
}

/// First time after which `|estimate - truth| / |truth|` stays below `tol`
/// for the rest of the run, or `None` if it never settles.
pub fn convergence_time(times: &[f64], estimates: &[f64], truth: f64, tol: f64) -> Option<f64> {
    let rel = |v: f64| ((v - truth) / truth).abs();
    let mut since = None;
    for (t, v) in times.iter().zip(estimates) {
        if rel(*v) < tol {
            if since.is_none() {
                since = Some(*t);
            }
        } else {
            since = None;
        }
    }
    since
}

/// Lag-1 autocorrelation of a series, ignoring `NaN` entries.
pub fn lag1_autocorrelation(series: &[f64]) -> f64 {
    let v: Vec<f64> = series.iter().copied().filter(|x| x.is_finite()).collect();
    if v.len() < 3 {
        return f64::NAN;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = v.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    cov / var
}

/// Per-parameter observations following the tuning heuristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDiagnostics {
    pub index: usize,
    pub initial_mean: f64,
    pub final_mean: f64,
    pub initial_std: f64,
    pub final_std: f64,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub parameters: Vec<ParameterDiagnostics>,
    pub innovation_lag1: Vec<f64>,
    pub flags: Vec<String>,
}

/// Flags the symptoms described by the trial-and-error tuning guidance:
/// a confidence band that does not shrink points at `Q` being too high, a
/// parameter that does not react to data points at `R` being too high.
pub fn tuning_report(run: &OnlineRun, n_state: usize) -> TuningReport {
    let d = run.means.ncols();
    let last = run.n_steps() - 1;
    let mut parameters = Vec::new();
    let mut flags = Vec::new();
    for i in n_state..d {
        let (m0, m1) = (run.means[(0, i)], run.means[(last, i)]);
        let (s0, s1) = (run.std_devs[(0, i)], run.std_devs[(last, i)]);
        let mut f = Vec::new();
        if s1 >= 0.9 * s0 {
            f.push("confidence interval not shrinking: Q may be too high".to_string());
        }
        let moved = (m1 - m0).abs();
        if moved < 1e-3 * m0.abs().max(s0) {
            f.push("parameter insensitive to data: R may be too high".to_string());
        }
        flags.extend(f.iter().map(|s| format!("parameter {}: {s}", i - n_state + 1)));
        parameters.push(ParameterDiagnostics {
            index: i,
            initial_mean: m0,
            final_mean: m1,
            initial_std: s0,
            final_std: s1,
            flags: f,
        });
    }
    if let Some(dv) = &run.divergence {
        flags.push(format!(
            "diverged at step {}: process noise may be too low ({})",
            dv.step, dv.reason
        ));
    }
    let innovation_lag1 = run
        .innovations
        .column_iter()
        .map(|c| lag1_autocorrelation(c.as_slice()))
        .collect();
    TuningReport {
        parameters,
        innovation_lag1,
        flags,
    }
}

/// `mean +- 1.96 std` of component `i` at every step.
pub fn interval95(run: &OnlineRun, i: usize) -> (Vec<f64>, Vec<f64>) {
    let m = run.means.column(i);
    let s = run.std_devs.column(i);
    let lo = m.iter().zip(s.iter()).map(|(a, b)| a - super::belief::Z95 * b).collect();
    let hi = m.iter().zip(s.iter()).map(|(a, b)| a + super::belief::Z95 * b).collect();
    (lo, hi)
}

/// Mean of `|a - b|` over rows for column `i`, skipping the first `skip` rows.
pub fn mean_abs_error(a: &DMatrix<f64>, b: &DMatrix<f64>, i: usize, skip: usize) -> f64 {
    let n = a.nrows().min(b.nrows());
    if n <= skip {
        return f64::NAN;
    }
    (skip..n).map(|k| (a[(k, i)] - b[(k, i)]).abs()).sum::<f64>() / (n - skip) as f64
}


use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_table, write_table};

/// Grid spacing tolerance relative to the larger of `dt` and the time value;
/// decimal timestamps like `59.99` carry rounding of a few ulps of `t`.
const SPACING_TOL: f64 = 1e-9;

/// Uniformly sampled scalar excitation, e.g. ground acceleration in m/s^2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingSignal {
    times: Vec<f64>,
    values: Vec<f64>,
    dt: f64,
}

impl ForcingSignal {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::invalid("empty forcing signal"));
        }
        if times.len() != values.len() {
            return Err(Error::shape(format!(
                "forcing has {} times and {} values",
                times.len(),
                values.len()
            )));
        }
        if !values.iter().chain(&times).all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite forcing sample"));
        }
        let dt = if times.len() > 1 {
            (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64
        } else {
            0.0
        };
        if times.len() > 1 {
            if dt <= 0.0 {
                return Err(Error::invalid("forcing times must be strictly increasing"));
            }
            for (i, w) in times.windows(2).enumerate() {
                let step = w[1] - w[0];
                if (step - dt).abs() > SPACING_TOL * dt.max(times[i + 1].abs()) {
                    return Err(Error::invalid(format!(
                        "forcing spacing {step} at sample {i} differs from mean spacing {dt}"
                    )));
                }
            }
        }
        Ok(Self { times, values, dt })
    }

    /// Samples at `t0 + i dt`.
    pub fn from_values(t0: f64, dt: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid("forcing dt must be positive"));
        }
        let times = (0..values.len()).map(|i| t0 + i as f64 * dt).collect();
        let mut s = Self::new(times, values)?;
        s.dt = dt;
        Ok(s)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Linear interpolation; clamps to the end values outside the record.
    pub fn sample(&self, t: f64) -> f64 {
        let n = self.values.len();
        if n == 1 || t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let pos = (t - self.times[0]) / self.dt;
        let mut i = (pos.floor() as usize).min(n - 2);
        // Guard against rounding in `pos` near a grid point.
        if t < self.times[i] && i > 0 {
            i -= 1;
        } else if t > self.times[i + 1] && i + 2 < n {
            i += 1;
        }
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let w = (t - t0) / (t1 - t0);
        self.values[i] + w * (self.values[i + 1] - self.values[i])
    }

    /// Re-grids onto spacing `target_dt` by linear interpolation. The first
    /// sample is kept; the last one is kept whenever the record length is a
    /// multiple of `target_dt`.
    pub fn resample(&self, target_dt: f64) -> Result<Self> {
        if !(target_dt > 0.0 && target_dt.is_finite()) {
            return Err(Error::invalid("resample target dt must be positive"));
        }
        if target_dt == self.dt || self.len() == 1 {
            return Ok(self.clone());
        }
        let duration = self.end() - self.start();
        let steps = (duration / target_dt + 1e-9).floor() as usize;
        let t0 = self.start();
        let mut times = Vec::with_capacity(steps + 1);
        let mut values = Vec::with_capacity(steps + 1);
        for i in 0..=steps {
            let t = t0 + i as f64 * target_dt;
            times.push(t);
            values.push(self.sample(t));
        }
        if ((steps as f64) * target_dt - duration).abs() <= 1e-9 * target_dt.max(duration) {
            *times.last_mut().unwrap() = self.end();
            *values.last_mut().unwrap() = *self.values.last().unwrap();
        }
        let mut out = Self::new(times, values)?;
        out.dt = target_dt;
        Ok(out)
    }

    /// Reads the two-column `time_s,accel_m_s2` format.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let table = read_table(path)?;
        if table.header != ["time_s", "accel_m_s2"] {
            return Err(Error::Parse {
                path: path.into(),
                line: 1,
                message: format!("expected header `time_s,accel_m_s2`, found `{}`", table.header.join(",")),
            });
        }
        Self::new(table.column(0), table.column(1))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header = ["time_s".to_string(), "accel_m_s2".to_string()];
        let rows: Vec<[f64; 2]> = self.times.iter().zip(&self.values).map(|(&t, &v)| [t, v]).collect();
        write_table(path, &header, rows.iter().map(|r| r.as_slice()))
    }
}

/// Shape of the synthetic ground motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeismogramShape {
    /// Peak absolute acceleration after scaling, m/s^2.
    pub peak_accel: f64,
    /// Ground filter frequency (rad/s) and damping of the Kanai-Tajimi spectrum.
    pub ground_frequency: f64,
    pub ground_damping: f64,
    /// Envelope: quadratic rise until `rise_end`, flat until `strong_end`,
    /// then `exp(-decay (t - strong_end))`. Seconds, 1/s.
    pub rise_end: f64,
    pub strong_end: f64,
    pub decay: f64,
    /// Frequency band (rad/s) and number of spectral lines.
    pub band: (f64, f64),
    pub n_lines: usize,
}

impl Default for SeismogramShape {
    fn default() -> Self {
        Self {
            peak_accel: 1.0,
            ground_frequency: 15.0,
            ground_damping: 0.6,
            rise_end: 4.0,
            strong_end: 20.0,
            decay: 0.12,
            band: (2.0 * std::f64::consts::PI * 0.3, 2.0 * std::f64::consts::PI * 25.0),
            n_lines: 400,
        }
    }
}

fn kanai_tajimi(omega: f64, wg: f64, zg: f64) -> f64 {
    let r2 = (omega / wg).powi(2);
    let num = 1.0 + 4.0 * zg * zg * r2;
    let den = (1.0 - r2).powi(2) + 4.0 * zg * zg * r2;
    num / den
}

/// Band-limited stochastic ground acceleration on `[0, duration]`.
pub fn synthetic_seismogram(duration: f64, dt: f64, rng_seed: u64) -> Result<ForcingSignal> {
    synthetic_seismogram_with(duration, dt, rng_seed, &SeismogramShape::default())
}

/// Spectral-representation sum of random-phase cosines weighted by a
/// Kanai-Tajimi spectrum, modulated by a rise/plateau/decay envelope,
/// mean-removed and scaled to the requested peak.
pub fn synthetic_seismogram_with(
    duration: f64,
    dt: f64,
    rng_seed: u64,
    shape: &SeismogramShape,
) -> Result<ForcingSignal> {
    if !(duration > 0.0 && dt > 0.0 && duration.is_finite() && dt.is_finite()) {
        return Err(Error::invalid("seismogram duration and dt must be positive"));
    }
    if shape.n_lines == 0 || !(shape.band.1 > shape.band.0) || !(shape.peak_accel > 0.0) {
        return Err(Error::invalid("degenerate seismogram shape"));
    }
    let n = (duration / dt + 1e-9).floor() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let dw = (shape.band.1 - shape.band.0) / shape.n_lines as f64;
    let lines: Vec<(f64, f64, f64)> = (0..shape.n_lines)
        .map(|j| {
            let w = shape.band.0 + (j as f64 + rng.gen::<f64>()) * dw;
            let amp = (2.0 * kanai_tajimi(w, shape.ground_frequency, shape.ground_damping) * dw).sqrt();
            let phase = rng.gen::<f64>() * std::f64::consts::TAU;
            (w, amp, phase)
        })
        .collect();
    let envelope = |t: f64| {
        if t < shape.rise_end {
            (t / shape.rise_end).powi(2)
        } else if t <= shape.strong_end {
            1.0
        } else {
            (-shape.decay * (t - shape.strong_end)).exp()
        }
    };
    let mut values: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            let s: f64 = lines.iter().map(|&(w, a, p)| a * (w * t + p).cos()).sum();
            envelope(t) * s
        })
        .collect();
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter_mut().for_each(|v| *v -= mean);
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let scale = shape.peak_accel / peak;
        values.iter_mut().for_each(|v| *v *= scale);
    }
    ForcingSignal::from_values(0.0, dt, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_is_resampled_exactly() {
        let coarse = ForcingSignal::from_values(0.0, 0.01, (0..=100).map(|i| 3.0 * i as f64 * 0.01 - 1.0).collect()).unwrap();
        let fine = coarse.resample(0.001).unwrap();
        assert_eq!(fine.len(), 1001);
        for (&t, &v) in fine.times().iter().zip(fine.values()) {
            assert!((v - (3.0 * t - 1.0)).abs() < 1e-12, "t={t}");
        }
        assert_eq!(fine.values()[0], coarse.values()[0]);
        assert_eq!(fine.values().last(), coarse.values().last());
    }

    #[test]
    fn identity_resample_is_bit_exact() {
        let s = synthetic_seismogram(2.0, 0.01, 3).unwrap();
        assert_eq!(s.resample(0.01).unwrap(), s);
    }

    #[test]
    fn sine_resample_error() {
        let tau = std::f64::consts::TAU;
        let s = ForcingSignal::from_values(0.0, 0.01, (0..=300).map(|i| (tau * i as f64 * 0.01).sin()).collect()).unwrap();
        let f = s.resample(0.001).unwrap();
        let worst = f
            .times()
            .iter()
            .zip(f.values())
            .map(|(&t, &v)| (v - (tau * t).sin()).abs())
            .fold(0.0, f64::max);
        assert!(worst < 5e-4, "{worst}");
    }

    #[test]
    fn empty_and_bad_spacing_rejected() {
        assert!(ForcingSignal::new(vec![], vec![]).is_err());
        assert!(ForcingSignal::new(vec![0.0, 1.0, 3.0], vec![0.0; 3]).is_err());
        assert!(ForcingSignal::new(vec![0.0, 1.0], vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn seismogram_grid_mean_and_determinism() {
        let a = synthetic_seismogram(60.0, 0.01, 42).unwrap();
        assert_eq!(a.len(), 6001);
        let peak = a.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mean = a.values().iter().sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 1e-3 * peak);
        let b = synthetic_seismogram(60.0, 0.01, 42).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = synthetic_seismogram(60.0, 0.01, 43).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn sample_interpolates_and_clamps() {
        let s = ForcingSignal::from_values(0.0, 1.0, vec![0.0, 2.0, 4.0]).unwrap();
        assert_eq!(s.sample(0.5), 1.0);
        assert_eq!(s.sample(-1.0), 0.0);
        assert_eq!(s.sample(9.0), 4.0);
    }
}

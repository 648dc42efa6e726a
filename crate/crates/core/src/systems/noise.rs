use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a signal-to-noise ratio maps to a noise standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnrConvention {
    /// `std(noise) = rms(signal) / snr`
    #[default]
    Amplitude,
    /// `var(noise) = rms(signal)^2 / snr`
    Power,
}

fn rms(col: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = col.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// The zero-mean Gaussian noise that [`add_white_noise`] would add, column
/// by column (one series per column).
pub fn white_noise(signal: &DMatrix<f64>, snr: f64, rng_seed: u64, convention: SnrConvention) -> Result<DMatrix<f64>> {
    if !(snr > 0.0) {
        return Err(Error::invalid("snr must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut noise = DMatrix::zeros(signal.nrows(), signal.ncols());
    for c in 0..signal.ncols() {
        let r = rms(signal.column(c).iter().copied());
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::DegenerateSignal(format!(
                "series {c} has zero or non-finite RMS, SNR undefined"
            )));
        }
        let std = match convention {
            SnrConvention::Amplitude => r / snr,
            SnrConvention::Power => r / snr.sqrt(),
        };
        for j in 0..signal.nrows() {
            let z: f64 = StandardNormal.sample(&mut rng);
            noise[(j, c)] = std * z;
        }
    }
    Ok(noise)
}

pub fn add_white_noise(signal: &DMatrix<f64>, snr: f64, rng_seed: u64, convention: SnrConvention) -> Result<DMatrix<f64>> {
    Ok(signal + white_noise(signal, snr, rng_seed, convention)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vanishing_noise() {
        let s = DMatrix::from_fn(100, 2, |j, c| ((j + 1) as f64 * 0.1).sin() + c as f64);
        let out = add_white_noise(&s, 1e12, 1, SnrConvention::Amplitude).unwrap();
        for c in 0..2 {
            let r = rms(s.column(c).iter().copied());
            assert!((out.column(c) - s.column(c)).amax() < 1e-9 * r);
        }
    }

    #[test]
    fn empirical_std_of_constant_series() {
        let s = DMatrix::from_element(1_000_000, 1, 2.0);
        let n = white_noise(&s, 15.0, 7, SnrConvention::Amplitude).unwrap();
        let mean = n.mean();
        let var = n.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.len() - 1) as f64;
        let target = 2.0 / 15.0;
        assert!((var.sqrt() - target).abs() < 0.02 * target);
    }

    #[test]
    fn deterministic_and_recoverable() {
        let s = DMatrix::from_fn(500, 3, |j, c| (j as f64 * 0.05 * (c + 1) as f64).cos());
        let a = add_white_noise(&s, 15.0, 99, SnrConvention::Amplitude).unwrap();
        let b = add_white_noise(&s, 15.0, 99, SnrConvention::Amplitude).unwrap();
        assert_eq!(a, b);
        let n = white_noise(&s, 15.0, 99, SnrConvention::Amplitude).unwrap();
        assert!((a - n - &s).amax() < 1e-15);
    }

    #[test]
    fn zero_series_is_degenerate() {
        let s = DMatrix::zeros(10, 1);
        assert!(matches!(
            add_white_noise(&s, 15.0, 0, SnrConvention::Amplitude),
            Err(Error::DegenerateSignal(_))
        ));
    }

    #[test]
    fn power_convention() {
        let s = DMatrix::from_element(200_000, 1, 1.0);
        let n = white_noise(&s, 100.0, 3, SnrConvention::Power).unwrap();
        let std = (n.iter().map(|v| v * v).sum::<f64>() / n.len() as f64).sqrt();
        assert!((std - 0.1).abs() < 0.002);
    }
}

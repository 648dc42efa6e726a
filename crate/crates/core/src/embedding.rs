//! Time-delay embedding of a scalar signal through a truncated SVD of its
//! Hankel matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Retained singular values below this fraction of the first make
/// projection ill-conditioned.
pub const PROJECTION_TOL: f64 = 1e-14;

/// Hankel matrices with more entries than this are decomposed through the
/// eigendecomposition of `A A^T`; smaller ones get a direct SVD. The Gram
/// route resolves singular values only down to about `sqrt(eps) s_1`.
const DIRECT_SVD_MAX_ENTRIES: usize = 4_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EmbeddingRecord", into = "EmbeddingRecord")]
pub struct DelayEmbedding {
    w: usize,
    zeta: usize,
    eta: usize,
    left_vectors: DMatrix<f64>,
    singular_values: Vec<f64>,
    variance_explained: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbeddingRecord {
    w: usize,
    zeta: usize,
    eta: usize,
    singular_values: Vec<f64>,
    left_vectors: Vec<Vec<f64>>,
    variance_explained: f64,
}

impl From<DelayEmbedding> for EmbeddingRecord {
    fn from(e: DelayEmbedding) -> Self {
        Self {
            w: e.w,
            zeta: e.zeta,
            eta: e.eta,
            left_vectors: e.left_vectors.row_iter().map(|r| r.iter().copied().collect()).collect(),
            singular_values: e.singular_values,
            variance_explained: e.variance_explained,
        }
    }
}

impl TryFrom<EmbeddingRecord> for DelayEmbedding {
    type Error = Error;

    fn try_from(r: EmbeddingRecord) -> Result<Self> {
        if r.left_vectors.len() != r.w || r.left_vectors.iter().any(|row| row.len() != r.eta) {
            return Err(Error::shape(format!("left_vectors must be {}x{}", r.w, r.eta)));
        }
        if r.singular_values.len() != r.eta || r.eta == 0 || r.zeta == 0 {
            return Err(Error::shape("embedding needs eta >= 1 singular values and zeta >= 1"));
        }
        let u = DMatrix::from_fn(r.w, r.eta, |i, j| r.left_vectors[i][j]);
        Ok(Self {
            w: r.w,
            zeta: r.zeta,
            eta: r.eta,
            left_vectors: u,
            singular_values: r.singular_values,
            variance_explained: r.variance_explained,
        })
    }
}

fn hankel_columns(len: usize, w: usize, zeta: usize) -> Result<usize> {
    if w == 0 || zeta == 0 {
        return Err(Error::invalid("w and zeta must be at least 1"));
    }
    let span = (w - 1) * zeta + 1;
    if len < span {
        return Err(Error::invalid(format!(
            "series of length {len} is shorter than one window ({span} samples)"
        )));
    }
    Ok(len - span + 1)
}

/// Hankel matrix whose column `c` is `[y_c, y_{c+zeta}, ..., y_{c+(w-1)zeta}]`.
pub fn hankel(series: &[f64], w: usize, zeta: usize) -> Result<DMatrix<f64>> {
    let cols = hankel_columns(series.len(), w, zeta)?;
    Ok(DMatrix::from_fn(w, cols, |i, c| series[c + i * zeta]))
}

/// Horizontal concatenation of the Hankel matrices of each series.
pub fn stack_hankel(series: &[&[f64]], w: usize, zeta: usize) -> Result<DMatrix<f64>> {
    if series.is_empty() {
        return Err(Error::invalid("no series to stack"));
    }
    let counts = series
        .iter()
        .map(|s| hankel_columns(s.len(), w, zeta))
        .collect::<Result<Vec<_>>>()?;
    let mut out = DMatrix::zeros(w, counts.iter().sum());
    let mut off = 0;
    for (s, &c) in series.iter().zip(&counts) {
        out.columns_mut(off, c).copy_from(&hankel(s, w, zeta)?);
        off += c;
    }
    Ok(out)
}

/// `A A^T` of the stacked Hankel matrix, built from the series directly.
///
/// Entries along each diagonal follow from their predecessor by removing
/// the leading products and adding the trailing ones, so the cost is
/// `O(w C + w^2 zeta)` rather than `O(w^2 C)`.
pub fn stacked_gram(series: &[&[f64]], w: usize, zeta: usize) -> Result<DMatrix<f64>> {
    if series.is_empty() {
        return Err(Error::invalid("no series to stack"));
    }
    let mut g = DMatrix::zeros(w, w);
    for s in series {
        let cols = hankel_columns(s.len(), w, zeta)?;
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite sample in embedding data".into()));
        }
        let mut local = DMatrix::<f64>::zeros(w, w);
        for j in 0..w {
            local[(0, j)] = (0..cols).map(|c| s[c] * s[c + j * zeta]).sum();
        }
        for i in 0..w - 1 {
            for j in i..w - 1 {
                let mut v = local[(i, j)];
                for c in 0..zeta {
                    v -= s[c + i * zeta] * s[c + j * zeta];
                    v += s[cols + c + i * zeta] * s[cols + c + j * zeta];
                }
                local[(i + 1, j + 1)] = v;
            }
        }
        for i in 0..w {
            for j in i..w {
                g[(i, j)] += local[(i, j)];
            }
        }
    }
    for i in 0..w {
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    Ok(g)
}

/// Full singular spectrum (descending) and matching left vectors.
struct Spectrum {
    left: DMatrix<f64>,
    values: Vec<f64>,
    total: f64,
}

fn spectrum_from_gram(gram: DMatrix<f64>, total: f64) -> Spectrum {
    let w = gram.nrows();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..w).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
    let left = DMatrix::from_fn(w, w, |r, c| eig.eigenvectors[(r, order[c])]);
    Spectrum { left, values, total }
}

fn spectrum_direct(a: &DMatrix<f64>) -> Result<Spectrum> {
    let total = a.norm_squared();
    let svd = a
        .clone()
        .try_svd(true, false, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
    let u = svd.u.ok_or_else(|| Error::Numeric("SVD returned no left vectors".into()))?;
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let left = DMatrix::from_fn(u.nrows(), k, |r, c| u[(r, order[c])]);
    Ok(Spectrum { left, values, total })
}

fn spectrum_of(a: &DMatrix<f64>) -> Result<Spectrum> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite entry in Hankel matrix".into()));
    }
    if a.len() > DIRECT_SVD_MAX_ENTRIES {
        let g = a * a.transpose();
        Ok(spectrum_from_gram(g, a.norm_squared()))
    } else {
        spectrum_direct(a)
    }
}

/// Smallest number of modes whose cumulative variance reaches `target`.
pub fn suggest_eta(singular_values: &[f64], target: f64) -> usize {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    let mut acc = 0.0;
    for (i, s) in singular_values.iter().enumerate() {
        acc += s * s;
        if acc >= target * total {
            return i + 1;
        }
    }
    singular_values.len()
}

impl DelayEmbedding {
    fn from_spectrum(spec: Spectrum, w: usize, zeta: usize, eta: usize, cols: usize) -> Result<Self> {
        if eta == 0 || eta > w.min(cols) {
            return Err(Error::invalid(format!("eta = {eta} must lie in 1..={}", w.min(cols))));
        }
        let mut u = spec.left.columns(0, eta).into_owned();
        for mut c in u.column_iter_mut() {
            let imax = c.iamax();
            if c[imax] < 0.0 {
                c.neg_mut();
            }
        }
        let s: Vec<f64> = spec.values[..eta].to_vec();
        let kept: f64 = s.iter().map(|v| v * v).sum();
        let variance_explained = if spec.total > 0.0 { (kept / spec.total).min(1.0) } else { 0.0 };
        Ok(Self {
            w,
            zeta,
            eta,
            left_vectors: u,
            singular_values: s,
            variance_explained,
        })
    }

    /// Truncated SVD of an assembled `w x C` Hankel matrix.
    pub fn fit(stacked: &DMatrix<f64>, zeta: usize, eta: usize) -> Result<Self> {
        Ok(Self::fit_with_spectrum(stacked, zeta, eta)?.0)
    }

    /// Like [`Self::fit`], also returning the full singular spectrum.
    pub fn fit_with_spectrum(stacked: &DMatrix<f64>, zeta: usize, eta: usize) -> Result<(Self, Vec<f64>)> {
        let spec = spectrum_of(stacked)?;
        let values = spec.values.clone();
        let e = Self::from_spectrum(spec, stacked.nrows(), zeta, eta, stacked.ncols())?;
        Ok((e, values))
    }

    /// Fits directly from the series without assembling the stacked matrix.
    pub fn fit_series(series: &[&[f64]], w: usize, zeta: usize, eta: usize) -> Result<(Self, Vec<f64>)> {
        let cols: usize = series
            .iter()
            .map(|s| hankel_columns(s.len(), w, zeta))
            .sum::<Result<usize>>()?;
        if cols * w <= DIRECT_SVD_MAX_ENTRIES {
            return Self::fit_with_spectrum(&stack_hankel(series, w, zeta)?, zeta, eta);
        }
        let gram = stacked_gram(series, w, zeta)?;
        let total = gram.trace();
        let spec = spectrum_from_gram(gram, total);
        let values = spec.values.clone();
        Ok((Self::from_spectrum(spec, w, zeta, eta, cols)?, values))
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn zeta(&self) -> usize {
        self.zeta
    }

    pub fn eta(&self) -> usize {
        self.eta
    }

    pub fn left_vectors(&self) -> &DMatrix<f64> {
        &self.left_vectors
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn variance_explained(&self) -> f64 {
        self.variance_explained
    }

    /// Number of consecutive samples spanned by one window.
    pub fn span(&self) -> usize {
        (self.w - 1) * self.zeta + 1
    }

    fn check_conditioning(&self) -> Result<()> {
        let s1 = self.singular_values[0];
        match self.singular_values.iter().position(|s| !(*s >= PROJECTION_TOL * s1) || *s == 0.0) {
            Some(i) => Err(Error::IllConditioned(format!(
                "singular value {} = {:e} is below {:e} times the first",
                i + 1,
                self.singular_values[i],
                PROJECTION_TOL
            ))),
            None => Ok(()),
        }
    }

    /// Delay coordinates `S^-1 U^T window`.
    pub fn project(&self, window: &[f64]) -> Result<DVector<f64>> {
        if window.len() != self.w {
            return Err(Error::shape(format!("window has {} samples, expected {}", window.len(), self.w)));
        }
        self.check_conditioning()?;
        let v = DVector::from_column_slice(window);
        let mut x = self.left_vectors.tr_mul(&v);
        for (xi, s) in x.iter_mut().zip(&self.singular_values) {
            *xi /= s;
        }
        Ok(x)
    }

    /// Delay coordinates of the window starting at every admissible sample:
    /// row `c` is `project(series[c], series[c + zeta], ...)`.
    pub fn project_series(&self, series: &[f64]) -> Result<DMatrix<f64>> {
        self.check_conditioning()?;
        let cols = hankel_columns(series.len(), self.w, self.zeta)?;
        let mut ut = self.left_vectors.transpose();
        for (i, mut r) in ut.row_iter_mut().enumerate() {
            r /= self.singular_values[i];
        }
        let mut out = DMatrix::zeros(cols, self.eta);
        const BLOCK: usize = 2048;
        let mut start = 0;
        while start < cols {
            let len = BLOCK.min(cols - start);
            let h = DMatrix::from_fn(self.w, len, |i, c| series[start + c + i * self.zeta]);
            let x = &ut * h;
            out.rows_mut(start, len).copy_from(&x.transpose());
            start += len;
        }
        Ok(out)
    }

    /// Observation row `e_1^T U S`, mapping delay coordinates to the signal.
    pub fn observation_row(&self) -> DVector<f64> {
        DVector::from_fn(self.eta, |j, _| self.left_vectors[(0, j)] * self.singular_values[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine(n: usize, dt: f64, f: f64, phase: f64) -> Vec<f64> {
        (0..n).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 * dt + phase).sin()).collect()
    }

    #[test]
    fn small_hankel() {
        let h = hankel(&[1.0, 2.0, 3.0, 4.0, 5.0], 3, 1).unwrap();
        assert_eq!(h, DMatrix::from_column_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0, 3.0, 4.0, 5.0]));
        let lagged = hankel(&[1.0, 2.0, 3.0, 4.0, 5.0], 2, 2).unwrap();
        assert_eq!(lagged, DMatrix::from_column_slice(2, 3, &[1.0, 3.0, 2.0, 4.0, 3.0, 5.0]));
        assert!(hankel(&[1.0, 2.0], 3, 1).is_err());
    }

    #[test]
    fn constant_series_is_rank_one() {
        let h = hankel(&[2.5; 50], 10, 1).unwrap();
        let (_, s) = DelayEmbedding::fit_with_spectrum(&h, 1, 1).unwrap();
        assert!(s[1] < 1e-12 * s[0]);
    }

    #[test]
    fn sinusoid_has_rank_two() {
        let y = sine(2000, 0.01, 1.3, 0.2);
        let h = hankel(&y, 200, 1).unwrap();
        let (_, s) = DelayEmbedding::fit_with_spectrum(&h, 1, 2).unwrap();
        assert!(s[2] / s[0] < 1e-8, "{}", s[2] / s[0]);
    }

    #[test]
    fn stacking() {
        let y = sine(40, 0.1, 0.7, 0.0);
        assert_eq!(stack_hankel(&[&y], 5, 1).unwrap(), hankel(&y, 5, 1).unwrap());
        let twice = stack_hankel(&[&y, &y], 5, 1).unwrap();
        assert_eq!(twice.ncols(), 2 * 36);
        let (_, s1) = DelayEmbedding::fit_with_spectrum(&hankel(&y, 5, 1).unwrap(), 1, 2).unwrap();
        let (_, s2) = DelayEmbedding::fit_with_spectrum(&twice, 1, 2).unwrap();
        for (a, b) in s1.iter().zip(&s2) {
            assert!((b - a * 2f64.sqrt()).abs() < 1e-10 * s1[0]);
        }
        assert!(stack_hankel(&[], 5, 1).is_err());
    }

    #[test]
    fn gram_recurrence_matches_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..120).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..90).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for zeta in [1, 3] {
            let h = stack_hankel(&[&a, &b], 7, zeta).unwrap();
            let g = stacked_gram(&[&a, &b], 7, zeta).unwrap();
            assert!((&h * h.transpose() - g).abs().max() < 1e-12);
        }
    }

    #[test]
    fn truncation_matches_eckart_young() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<f64> = (0..60).map(|i| (0.3 * i as f64).sin() + 0.1 * rng.gen_range(-1.0..1.0)).collect();
        let a = hankel(&y, 12, 1).unwrap();
        let (e, s) = DelayEmbedding::fit_with_spectrum(&a, 1, 3).unwrap();
        let u = e.left_vectors();
        let recon = u * (u.transpose() * &a);
        let err = (&a - recon).norm();
        let tail: f64 = s[3..].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((err - tail).abs() < 1e-8 * tail);
        assert!((u.transpose() * u - DMatrix::identity(3, 3)).abs().max() < 1e-10);
        assert!(e.singular_values().windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn rank_one_variance() {
        let y: Vec<f64> = vec![1.0; 30];
        let e = DelayEmbedding::fit(&hankel(&y, 5, 1).unwrap(), 1, 1).unwrap();
        assert!(e.variance_explained() >= 1.0 - 1e-12);
    }

    #[test]
    fn projection_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y: Vec<f64> = (0..300).map(|i| (0.05 * i as f64).sin() + 0.1 * rng.gen_range(-1.0..1.0)).collect();
        let a = hankel(&y, 8, 1).unwrap();
        let full = DelayEmbedding::fit(&a, 1, 8).unwrap();
        let u1: Vec<f64> = full.left_vectors().column(0).iter().map(|v| v * full.singular_values()[0]).collect();
        let x = full.project(&u1).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && x.rows(1, 7).amax() < 1e-12);
        assert_eq!(full.project(&[0.0; 8]).unwrap(), DVector::zeros(8));
        let h = full.observation_row();
        for c in [0, 17, 250] {
            let win: Vec<f64> = a.column(c).iter().copied().collect();
            assert!((h.dot(&full.project(&win).unwrap()) - win[0]).abs() < 1e-10);
        }
        assert!(full.project(&[1.0; 3]).is_err());
    }

    #[test]
    fn scaling_homogeneity() {
        let y: Vec<f64> = (0..200).map(|i| (0.1 * i as f64).sin() + 0.2 * (0.37 * i as f64).sin()).collect();
        let y3: Vec<f64> = y.iter().map(|v| 3.0 * v).collect();
        let e1 = DelayEmbedding::fit(&hankel(&y, 10, 1).unwrap(), 1, 4).unwrap();
        let e3 = DelayEmbedding::fit(&hankel(&y3, 10, 1).unwrap(), 1, 4).unwrap();
        assert!((e3.observation_row() - 3.0 * e1.observation_row()).amax() < 1e-10);
        let win = &y[20..30];
        let win3 = &y3[20..30];
        assert!((e3.project(win3).unwrap() - e1.project(win).unwrap()).amax() < 1e-9);
    }

    #[test]
    fn batch_projection_matches_single() {
        let y = sine(500, 0.02, 0.9, 0.4);
        let e = DelayEmbedding::fit(&hankel(&y, 20, 1).unwrap(), 1, 2).unwrap();
        let all = e.project_series(&y).unwrap();
        assert_eq!(all.nrows(), 481);
        for c in [0, 100, 480] {
            let one = e.project(&y[c..c + 20]).unwrap();
            assert!((all.row(c).transpose() - one).amax() < 1e-12);
        }
    }

    #[test]
    fn gram_route_matches_direct_route() {
        let a = sine(45_000, 0.01, 0.5, 0.0);
        let b: Vec<f64> = sine(45_000, 0.01, 1.1, 1.0).iter().zip(&a).map(|(x, y)| x + 0.5 * y).collect();
        let stacked = stack_hankel(&[&a, &b], 50, 1).unwrap();
        assert!(stacked.len() > DIRECT_SVD_MAX_ENTRIES);
        let (e1, _) = DelayEmbedding::fit_series(&[&a, &b], 50, 1, 4).unwrap();
        let (e2, _) = spectrum_direct(&stacked)
            .and_then(|sp| {
                let v = sp.values.clone();
                DelayEmbedding::from_spectrum(sp, 50, 1, 4, stacked.ncols()).map(|e| (e, v))
            })
            .unwrap();
        for i in 0..4 {
            assert!((e1.singular_values()[i] - e2.singular_values()[i]).abs() < 1e-8 * e1.singular_values()[0]);
        }
        assert!((e1.left_vectors() - e2.left_vectors()).amax() < 1e-6);
    }

    #[test]
    fn ill_conditioned_projection() {
        let e = DelayEmbedding::fit(&hankel(&[1.0; 30], 5, 1).unwrap(), 1, 2).unwrap();
        assert!(matches!(e.project(&[1.0; 5]), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn suggest_eta_reaches_target() {
        assert_eq!(suggest_eta(&[10.0, 1.0, 0.1], 0.99), 1);
        assert_eq!(suggest_eta(&[10.0, 1.0, 0.1], 0.999), 2);
        assert_eq!(suggest_eta(&[10.0, 1.0, 0.1], 0.99999), 3);
    }

    #[test]
    fn json_round_trip() {
        let y = sine(100, 0.05, 0.8, 0.1);
        let e = DelayEmbedding::fit(&hankel(&y, 6, 1).unwrap(), 1, 2).unwrap();
        let back: DelayEmbedding = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn non_finite_input() {
        let mut y = sine(50, 0.1, 0.5, 0.0);
        y[10] = f64::NAN;
        assert!(matches!(DelayEmbedding::fit(&hankel(&y, 5, 1).unwrap(), 1, 1), Err(Error::Numeric(_))));
    }
}

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Singular values of the regularised normal matrix below this fraction of
/// the largest are treated as zero.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StlsqOptions {
    pub threshold: f64,
    pub ridge: f64,
    pub max_iters: usize,
}

impl Default for StlsqOptions {
    fn default() -> Self {
        Self {
            threshold: 1e-3,
            ridge: 0.05,
            max_iters: 20,
        }
    }
}

impl StlsqOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(Error::invalid(format!("threshold must be finite and >= 0, got {}", self.threshold)));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::invalid(format!("ridge must be finite and >= 0, got {}", self.ridge)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Sufficient statistics `Theta^T Theta`, `Theta^T Y` and `diag(Y^T Y)`,
/// accumulated block by block so the full snapshot matrix never has to be
/// held in memory.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub gram: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    pub target_sq: DVector<f64>,
    pub n_rows: usize,
}

impl NormalEquations {
    pub fn new(n_terms: usize, n_targets: usize) -> Self {
        Self {
            gram: DMatrix::zeros(n_terms, n_terms),
            cross: DMatrix::zeros(n_terms, n_targets),
            target_sq: DVector::zeros(n_targets),
            n_rows: 0,
        }
    }

    pub fn from_data(theta: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<Self> {
        let mut ne = Self::new(theta.ncols(), targets.ncols());
        ne.accumulate(theta, targets)?;
        Ok(ne)
    }

    /// Adds rows `theta` (`k x p`) and `targets` (`k x n`).
    pub fn accumulate(&mut self, theta: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<()> {
        if theta.ncols() != self.gram.nrows() || targets.ncols() != self.cross.ncols() {
            return Err(Error::shape(format!(
                "block is {}x{} / {}x{}, expected p={} and n={}",
                theta.nrows(),
                theta.ncols(),
                targets.nrows(),
                targets.ncols(),
                self.gram.nrows(),
                self.cross.ncols()
            )));
        }
        if theta.nrows() != targets.nrows() {
            return Err(Error::shape(format!(
                "theta has {} rows but targets have {}",
                theta.nrows(),
                targets.nrows()
            )));
        }
        if theta.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite value in regression data"));
        }
        self.gram.gemm_tr(1.0, theta, theta, 1.0);
        self.cross.gemm_tr(1.0, theta, targets, 1.0);
        for (j, col) in targets.column_iter().enumerate() {
            self.target_sq[j] += col.norm_squared();
        }
        self.n_rows += theta.nrows();
        Ok(())
    }

    pub fn n_terms(&self) -> usize {
        self.gram.nrows()
    }

    pub fn n_targets(&self) -> usize {
        self.cross.ncols()
    }

    /// Squared residual `||y_j - Theta xi||^2` from the accumulated moments.
    pub fn residual_sq(&self, target: usize, xi: &DVector<f64>) -> f64 {
        let r = self.target_sq[target] - 2.0 * xi.dot(&self.cross.column(target)) + xi.dot(&(&self.gram * xi));
        r.max(0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub iterations: usize,
    pub converged: bool,
    pub rank_deficient: bool,
    pub empty: bool,
    pub nnz: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StlsqReport {
    pub targets: Vec<TargetReport>,
    pub warnings: Vec<String>,
}

/// Ridge solve restricted to `active`, as a pseudo-solution when the
/// regularised normal matrix is numerically singular.
fn solve_active(ne: &NormalEquations, target: usize, active: &[usize], ridge: f64) -> (Vec<f64>, bool) {
    let k = active.len();
    let a = DMatrix::from_fn(k, k, |i, j| {
        ne.gram[(active[i], active[j])] + if i == j { ridge } else { 0.0 }
    });
    let rhs = DVector::from_fn(k, |i, _| ne.cross[(active[i], target)]);
    let eig = SymmetricEigen::new(a);
    let smax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut x = DVector::zeros(k);
    let mut deficient = smax == 0.0;
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() <= RANK_TOL * smax || lam == 0.0 {
            deficient = true;
            continue;
        }
        let v = eig.eigenvectors.column(i);
        x.axpy(v.dot(&rhs) / lam, &v, 1.0);
    }
    (x.iter().copied().collect(), deficient)
}

/// Sequentially thresholded ridge regression on precomputed moments.
/// Returns the `p x n` coefficient matrix.
pub fn stlsq_normal(ne: &NormalEquations, opts: &StlsqOptions) -> Result<(DMatrix<f64>, StlsqReport)> {
    opts.validate()?;
    let (p, n) = (ne.n_terms(), ne.n_targets());
    let mut xi = DMatrix::zeros(p, n);
    let mut report = StlsqReport::default();
    if ne.n_rows < p {
        report
            .warnings
            .push(format!("only {} samples for {} library terms", ne.n_rows, p));
    }
    for j in 0..n {
        let mut active: Vec<usize> = (0..p).collect();
        let mut rep = TargetReport::default();
        let mut coef = vec![0.0; p];
        loop {
            rep.iterations += 1;
            let (sol, deficient) = solve_active(ne, j, &active, opts.ridge);
            rep.rank_deficient |= deficient;
            coef.iter_mut().for_each(|c| *c = 0.0);
            for (&a, &v) in active.iter().zip(&sol) {
                coef[a] = v;
            }
            let keep: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&a| coef[a].abs() >= opts.threshold)
                .collect();
            if keep.len() == active.len() {
                rep.converged = true;
                break;
            }
            for &a in &active {
                if coef[a].abs() < opts.threshold {
                    coef[a] = 0.0;
                }
            }
            active = keep;
            if active.is_empty() {
                rep.empty = true;
                rep.converged = true;
                report
                    .warnings
                    .push(format!("equation {}: every term eliminated, model is empty", j + 1));
                break;
            }
            if rep.iterations >= opts.max_iters {
                break;
            }
        }
        if rep.rank_deficient {
            report
                .warnings
                .push(format!("equation {}: rank-deficient active set, pseudo-solution used", j + 1));
        }
        if !rep.converged {
            report
                .warnings
                .push(format!("equation {}: active set still changing after {} iterations", j + 1, rep.iterations));
        }
        rep.nnz = coef.iter().filter(|c| **c != 0.0).count();
        for (k, c) in coef.into_iter().enumerate() {
            xi[(k, j)] = c;
        }
        report.targets.push(rep);
    }
    Ok((xi, report))
}

/// Sequentially thresholded least squares on `theta` (`T x p`) and `targets` (`T x n`).
pub fn stlsq(theta: &DMatrix<f64>, targets: &DMatrix<f64>, opts: &StlsqOptions) -> Result<(DMatrix<f64>, StlsqReport)> {
    stlsq_normal(&NormalEquations::from_data(theta, targets)?, opts)
}
